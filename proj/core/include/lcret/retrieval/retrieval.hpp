#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lcret/encoder/encoder.hpp"
#include "lcret/evalkit/evalkit.hpp"
#include "lcret/index/index.hpp"
#include "lcret/pipeline/data.hpp"
#include "lcret/pipeline/tokenizer.hpp"
#include "lcret/repr/repr.hpp"

namespace lcret {

enum class SearchMode { dense, sparse, hybrid };

/// "dense", "sparse" or "hybrid"; anything else throws ConfigError.
SearchMode parse_search_mode(std::string_view name);
std::string_view search_mode_name(SearchMode mode) noexcept;

/// Runs every query record against the index, fanning queries out over
/// `threads` threads. Results keep the query order.
std::vector<SearchResult> search_all(const HybridIndex& index, const std::vector<HybridRecord>& queries,
                                     SearchMode mode, std::size_t k, double lambda_sparse = kDefaultLambdaSparse,
                                     std::size_t threads = 1);

RunFile to_run(std::span<const SearchResult> results);
/// Per-query hits in run order; only doc_id and score are filled.
std::vector<SearchResult> from_run(const RunFile& run);

/// id -> text lookup; throws DataError on a repeated id.
std::map<std::string, std::string> text_lookup(const std::vector<Document>& docs);

/// Re-scores the first `depth` hits of every query with the cross-encoder.
/// Throws DataError when a query or document id has no text.
template <Real T>
RunFile rerank_run(const Encoder<T>& encoder, const Tokenizer& tokenizer, const RunFile& first_stage,
                   const std::map<std::string, std::string>& queries, const std::map<std::string, std::string>& docs,
                   std::size_t depth = kRerankDepth, std::size_t max_tokens = kDocMaxTokens, std::size_t threads = 1);

}  // namespace lcret
