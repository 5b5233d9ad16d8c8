#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lcret/repr/repr.hpp"

namespace lcret {

struct Hit {
  std::string doc_id;
  double score = 0.0;   // fused, or the reranker score after rerank()
  double dense = 0.0;   // 0 when the document was not a dense candidate
  double sparse = 0.0;  // 0 when the document was not a sparse candidate
};

/// Hits ordered by descending score, ties by ascending doc_id.
struct SearchResult {
  std::string query_id;
  std::vector<Hit> hits;
};

inline constexpr double kDefaultLambdaSparse = 0.003;
inline constexpr std::size_t kCandidatePool = 1000;
inline constexpr std::size_t kRerankDepth = 100;

/// Exact inner-product index over renormalised d_search-prefixes.
class DenseIndex {
 public:
  DenseIndex() = default;
  DenseIndex(std::vector<std::string> doc_ids, std::size_t dim, std::vector<double> rows);

  std::size_t size() const noexcept { return doc_ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }
  std::span<const double> row(std::size_t i) const { return std::span(rows_).subspan(i * dim_, dim_); }

  /// Dot products with every row; `q` is sliced to dim() when wider.
  std::vector<double> score_all(const DenseEmbedding& q) const;

 private:
  std::vector<std::string> doc_ids_;
  std::size_t dim_ = 0;
  std::vector<double> rows_;
};

struct Posting {
  std::uint32_t doc = 0;  // ordinal into doc_ids()
  double weight = 0.0;
};

/// Per-token posting lists sorted by document ordinal.
class InvertedIndex {
 public:
  InvertedIndex() = default;
  InvertedIndex(std::vector<std::string> doc_ids, std::map<std::int32_t, std::vector<Posting>> postings);

  std::size_t size() const noexcept { return doc_ids_.size(); }
  const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }
  const std::map<std::int32_t, std::vector<Posting>>& postings() const noexcept { return postings_; }
  /// Empty span for unindexed tokens.
  std::span<const Posting> postings(std::int32_t token) const;

  /// Accumulated s_sparse per ordinal; `touched` lists ordinals with any shared token.
  std::vector<double> score_all(const SparseVector& q, std::vector<std::uint32_t>* touched = nullptr) const;

 private:
  std::vector<std::string> doc_ids_;
  std::map<std::int32_t, std::vector<Posting>> postings_;
};

struct HybridIndex {
  DenseIndex dense;
  InvertedIndex sparse;

  std::size_t size() const noexcept { return dense.size(); }
};

/// Throws std::invalid_argument on duplicate, empty or whitespace-bearing ids
/// and on an invalid slice width.
HybridIndex build_index(const std::vector<HybridRecord>& records, std::size_t d_search);

/// Exact top-k by dot product; k = 0 throws.
std::vector<Hit> dense_search(const DenseIndex& index, const DenseEmbedding& q, std::size_t k);
/// Exact top-k by s_sparse over documents sharing a token with q; k = 0 throws.
std::vector<Hit> sparse_search(const InvertedIndex& index, const SparseVector& q, std::size_t k);

/// Fuses dense and sparse top-K' candidates (K' = min(max(k, 1000), N)) as
/// dense + lambda * sparse with 0 for a missing component, then takes the top k.
std::vector<Hit> hybrid_search(const HybridIndex& index, const DenseEmbedding& q_dense, const SparseVector& q_sparse,
                               std::size_t k, double lambda_sparse = kDefaultLambdaSparse);

/// Scores a run of hits; returns one score per hit.
using HitScorer = std::function<std::vector<double>(std::span<const Hit>)>;

/// Re-scores the first top_n hits and stable-sorts them by descending score.
/// The remaining hits keep their order below, rescored to stay strictly under
/// the reranked block.
SearchResult rerank(const SearchResult& candidates, const HitScorer& scorer, std::size_t top_n = kRerankDepth);

/// Directory layout: dense.ckpt (checkpoint container), postings.bin, docids.txt.
void save_index(const HybridIndex& index, const std::filesystem::path& dir);
HybridIndex load_index(const std::filesystem::path& dir);

/// postings.bin: magic "LCRPOST\0" | u32 version | u64 doc count | u64 list count
/// per list: i32 token_id | u64 count | count x (u32 doc ordinal, f64 weight).
void write_postings(std::ostream& out, const InvertedIndex& index);
std::map<std::int32_t, std::vector<Posting>> read_postings(std::istream& in, std::size_t num_docs);

}  // namespace lcret
