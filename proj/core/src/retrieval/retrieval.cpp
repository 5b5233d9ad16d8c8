#include "lcret/retrieval/retrieval.hpp"

#include "lcret/numerics/parallel.hpp"

namespace lcret {

SearchMode parse_search_mode(std::string_view name) {
  if (name == "dense") return SearchMode::dense;
  if (name == "sparse") return SearchMode::sparse;
  if (name == "hybrid") return SearchMode::hybrid;
  throw ConfigError("unknown search mode '" + std::string(name) + "' (dense, sparse or hybrid)");
}

std::string_view search_mode_name(SearchMode mode) noexcept {
  switch (mode) {
    case SearchMode::dense: return "dense";
    case SearchMode::sparse: return "sparse";
    case SearchMode::hybrid: return "hybrid";
  }
  return "hybrid";
}

std::vector<SearchResult> search_all(const HybridIndex& index, const std::vector<HybridRecord>& queries,
                                     SearchMode mode, std::size_t k, double lambda_sparse, std::size_t threads) {
  std::vector<SearchResult> out(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const auto& q = queries[i];
    out[i].query_id = q.doc_id;
    switch (mode) {
      case SearchMode::dense: out[i].hits = dense_search(index.dense, q.dense, k); break;
      case SearchMode::sparse: out[i].hits = sparse_search(index.sparse, q.sparse, k); break;
      case SearchMode::hybrid: out[i].hits = hybrid_search(index, q.dense, q.sparse, k, lambda_sparse); break;
    }
  });
  return out;
}

RunFile to_run(std::span<const SearchResult> results) {
  RunFile run;
  for (const auto& r : results) {
    run.queries[r.query_id];
    for (const auto& h : r.hits) run.append(r.query_id, h.doc_id, h.score);
  }
  return run;
}

std::vector<SearchResult> from_run(const RunFile& run) {
  std::vector<SearchResult> out;
  for (const auto& [qid, entries] : run.queries) {
    SearchResult r{qid, {}};
    for (const auto& e : entries) r.hits.push_back({e.doc_id, e.score, 0.0, 0.0});
    out.push_back(std::move(r));
  }
  return out;
}

std::map<std::string, std::string> text_lookup(const std::vector<Document>& docs) {
  std::map<std::string, std::string> out;
  for (const auto& d : docs) {
    if (!out.emplace(d.id, d.text).second) throw DataError("duplicate id '" + d.id + "'");
  }
  return out;
}

template <Real T>
RunFile rerank_run(const Encoder<T>& encoder, const Tokenizer& tokenizer, const RunFile& first_stage,
                   const std::map<std::string, std::string>& queries, const std::map<std::string, std::string>& docs,
                   std::size_t depth, std::size_t max_tokens, std::size_t threads) {
  auto lookup = [](const std::map<std::string, std::string>& m, const std::string& id, const char* what) {
    const auto it = m.find(id);
    if (it == m.end()) throw DataError(std::string("no text for ") + what + " '" + id + "'");
    return it->second;
  };
  std::vector<SearchResult> reranked;
  for (const auto& result : from_run(first_stage)) {
    const std::string query = lookup(queries, result.query_id, "query");
    reranked.push_back(rerank(
        result,
        [&](std::span<const Hit> hits) {
          std::vector<std::pair<std::string, std::string>> pairs;
          for (const auto& h : hits) pairs.emplace_back(query, lookup(docs, h.doc_id, "document"));
          return score_pairs(encoder, tokenizer, pairs, max_tokens, 32, threads);
        },
        depth));
  }
  return to_run(reranked);
}

template RunFile rerank_run<float>(const Encoder<float>&, const Tokenizer&, const RunFile&,
                                   const std::map<std::string, std::string>&,
                                   const std::map<std::string, std::string>&, std::size_t, std::size_t, std::size_t);
template RunFile rerank_run<double>(const Encoder<double>&, const Tokenizer&, const RunFile&,
                                    const std::map<std::string, std::string>&,
                                    const std::map<std::string, std::string>&, std::size_t, std::size_t, std::size_t);

}  // namespace lcret
