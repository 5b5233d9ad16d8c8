#include "lcret/index/index.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>

#include "lcret/numerics/checkpoint.hpp"

namespace lcret {
namespace {

constexpr std::array<char, 8> kPostingsMagic{'L', 'C', 'R', 'P', 'O', 'S', 'T', '\0'};
constexpr std::uint32_t kPostingsVersion = 1;

bool ranks_before(const Hit& a, const Hit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

std::vector<Hit> top_k(std::vector<Hit> hits, std::size_t k) {
  k = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), ranks_before);
  hits.resize(k);
  return hits;
}

void require_k(std::size_t k) {
  if (k == 0) throw std::invalid_argument("search: k must be positive");
}

/// Ordinals of the top k scores among `ordinals`, ties by doc id.
std::vector<std::uint32_t> top_ordinals(const std::vector<double>& scores, std::vector<std::uint32_t> ordinals,
                                        const std::vector<std::string>& ids, std::size_t k) {
  k = std::min(k, ordinals.size());
  std::partial_sort(ordinals.begin(), ordinals.begin() + static_cast<std::ptrdiff_t>(k), ordinals.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return ids[a] < ids[b];
                    });
  ordinals.resize(k);
  return ordinals;
}

std::vector<std::uint32_t> all_ordinals(std::size_t n) {
  std::vector<std::uint32_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::uint32_t>(i);
  return out;
}

}  // namespace

DenseIndex::DenseIndex(std::vector<std::string> doc_ids, std::size_t dim, std::vector<double> rows)
    : doc_ids_(std::move(doc_ids)), dim_(dim), rows_(std::move(rows)) {
  if (rows_.size() != doc_ids_.size() * dim_) throw ShapeError("dense index: row data does not match N x d");
}

std::vector<double> DenseIndex::score_all(const DenseEmbedding& q) const {
  if (q.size() < dim_) {
    throw ShapeError("dense search: query width " + std::to_string(q.size()) + " below index width " +
                     std::to_string(dim_));
  }
  const DenseEmbedding sliced = q.size() == dim_ ? q : matryoshka_slice(q, dim_);
  std::vector<double> scores(size());
  for (std::size_t i = 0; i < size(); ++i) {
    const auto r = row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) s += r[j] * sliced.values[j];
    scores[i] = s;
  }
  return scores;
}

InvertedIndex::InvertedIndex(std::vector<std::string> doc_ids, std::map<std::int32_t, std::vector<Posting>> postings)
    : doc_ids_(std::move(doc_ids)), postings_(std::move(postings)) {
  for (const auto& [token, list] : postings_) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i].doc >= doc_ids_.size()) throw std::out_of_range("inverted index: posting ordinal out of range");
      if (!(list[i].weight > 0.0)) throw std::invalid_argument("inverted index: non-positive posting weight");
      if (i > 0 && list[i - 1].doc >= list[i].doc) {
        throw std::invalid_argument("inverted index: postings of token " + std::to_string(token) +
                                    " are not strictly increasing");
      }
    }
  }
}

std::span<const Posting> InvertedIndex::postings(std::int32_t token) const {
  const auto it = postings_.find(token);
  return it == postings_.end() ? std::span<const Posting>() : std::span<const Posting>(it->second);
}

std::vector<double> InvertedIndex::score_all(const SparseVector& q, std::vector<std::uint32_t>* touched) const {
  std::vector<double> scores(size(), 0.0);
  std::vector<bool> seen(touched ? size() : 0, false);
  for (const auto& [token, qw] : q.entries()) {
    for (const Posting& p : postings(token)) {
      scores[p.doc] += qw * p.weight;
      if (touched && !seen[p.doc]) {
        seen[p.doc] = true;
        touched->push_back(p.doc);
      }
    }
  }
  return scores;
}

HybridIndex build_index(const std::vector<HybridRecord>& records, std::size_t d_search) {
  std::set<std::string> unique;
  std::vector<std::string> ids;
  std::vector<double> rows;
  std::map<std::int32_t, std::vector<Posting>> postings;
  for (const auto& r : records) {
    if (r.doc_id.empty() || r.doc_id.find_first_of(" \t\r\n") != std::string::npos) {
      throw std::invalid_argument("build_index: document id '" + r.doc_id + "' is empty or contains whitespace");
    }
    if (!unique.insert(r.doc_id).second) throw std::invalid_argument("build_index: duplicate id " + r.doc_id);
    if (!valid_slice(d_search, r.dense.size())) {
      throw std::invalid_argument("build_index: d_search " + std::to_string(d_search) + " is not a slice of " +
                                  std::to_string(r.dense.size()));
    }
    const auto row = d_search == r.dense.size() && r.dense.normalized ? r.dense : matryoshka_slice(r.dense, d_search);
    rows.insert(rows.end(), row.values.begin(), row.values.end());
    const auto ordinal = static_cast<std::uint32_t>(ids.size());
    for (const auto& [token, w] : r.sparse.entries()) postings[token].push_back({ordinal, w});
    ids.push_back(r.doc_id);
  }
  return {DenseIndex(ids, d_search, std::move(rows)), InvertedIndex(ids, std::move(postings))};
}

std::vector<Hit> dense_search(const DenseIndex& index, const DenseEmbedding& q, std::size_t k) {
  require_k(k);
  const auto scores = index.score_all(q);
  std::vector<Hit> hits;
  hits.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) hits.push_back({index.doc_ids()[i], scores[i], scores[i], 0.0});
  return top_k(std::move(hits), k);
}

std::vector<Hit> sparse_search(const InvertedIndex& index, const SparseVector& q, std::size_t k) {
  require_k(k);
  std::vector<std::uint32_t> touched;
  const auto scores = index.score_all(q, &touched);
  std::vector<Hit> hits;
  hits.reserve(touched.size());
  for (auto i : touched) hits.push_back({index.doc_ids()[i], scores[i], 0.0, scores[i]});
  return top_k(std::move(hits), k);
}

std::vector<Hit> hybrid_search(const HybridIndex& index, const DenseEmbedding& q_dense, const SparseVector& q_sparse,
                               std::size_t k, double lambda_sparse) {
  require_k(k);
  if (!(lambda_sparse >= 0.0)) throw std::invalid_argument("hybrid_search: lambda_sparse must be nonnegative");
  const auto& ids = index.dense.doc_ids();
  const std::size_t pool = std::min(std::max(k, kCandidatePool), index.size());
  const auto dense_scores = index.dense.score_all(q_dense);
  std::vector<std::uint32_t> touched;
  const auto sparse_scores = index.sparse.score_all(q_sparse, &touched);

  std::vector<double> dense_part(index.size(), 0.0), sparse_part(index.size(), 0.0);
  std::vector<bool> candidate(index.size(), false);
  for (auto i : top_ordinals(dense_scores, all_ordinals(index.size()), ids, pool)) {
    dense_part[i] = dense_scores[i];
    candidate[i] = true;
  }
  for (auto i : top_ordinals(sparse_scores, std::move(touched), ids, pool)) {
    sparse_part[i] = sparse_scores[i];
    candidate[i] = true;
  }
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (candidate[i]) hits.push_back({ids[i], dense_part[i] + lambda_sparse * sparse_part[i], dense_part[i], sparse_part[i]});
  }
  return top_k(std::move(hits), k);
}

SearchResult rerank(const SearchResult& candidates, const HitScorer& scorer, std::size_t top_n) {
  SearchResult out{candidates.query_id, candidates.hits};
  const std::size_t n = std::min(top_n, out.hits.size());
  if (n == 0) return out;
  const auto head = std::span<Hit>(out.hits).first(n);
  const auto scores = scorer(head);
  if (scores.size() != n) throw std::logic_error("rerank: scorer returned the wrong number of scores");
  for (std::size_t i = 0; i < n; ++i) head[i].score = scores[i];
  std::stable_sort(head.begin(), head.end(), [](const Hit& a, const Hit& b) { return a.score > b.score; });
  const double floor = head.back().score;
  for (std::size_t j = n; j < out.hits.size(); ++j) out.hits[j].score = floor - static_cast<double>(j - n + 1);
  return out;
}

void write_postings(std::ostream& out, const InvertedIndex& index) {
  out.write(kPostingsMagic.data(), kPostingsMagic.size());
  le::put_u32(out, kPostingsVersion);
  le::put_u64(out, index.size());
  le::put_u64(out, index.postings().size());
  for (const auto& [token, list] : index.postings()) {
    le::put_i32(out, token);
    le::put_u64(out, list.size());
    for (const Posting& p : list) {
      le::put_u32(out, p.doc);
      le::put_f64(out, p.weight);
    }
  }
  if (!out) throw FormatError("postings: write failed");
}

std::map<std::int32_t, std::vector<Posting>> read_postings(std::istream& in, std::size_t num_docs) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kPostingsMagic) throw FormatError("postings: bad magic");
  if (const auto v = le::get_u32(in); v != kPostingsVersion) {
    throw FormatError("postings: unsupported version " + std::to_string(v));
  }
  if (le::get_u64(in) != num_docs) throw FormatError("postings: document count does not match docids");
  std::map<std::int32_t, std::vector<Posting>> postings;
  for (std::uint64_t lists = le::get_u64(in); lists > 0; --lists) {
    const std::int32_t token = le::get_i32(in);
    const std::uint64_t count = le::get_u64(in);
    if (count > num_docs) throw FormatError("postings: list longer than the document count");
    auto& list = postings[token];
    if (!list.empty()) throw FormatError("postings: token " + std::to_string(token) + " listed twice");
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint32_t doc = le::get_u32(in);
      list.push_back({doc, le::get_f64(in)});
    }
  }
  return postings;
}

void save_index(const HybridIndex& index, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Checkpoint ckpt;
  const std::size_t n = index.size(), d = index.dense.dim();
  std::vector<double> rows;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = index.dense.row(i);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  ckpt.put("index.dense", Tensor<double>({n, d}, std::move(rows)));
  ckpt.save(dir / "dense.ckpt");

  std::ofstream post(dir / "postings.bin", std::ios::binary);
  if (!post) throw FormatError((dir / "postings.bin").string() + ": cannot write");
  write_postings(post, index.sparse);

  std::ofstream ids(dir / "docids.txt");
  if (!ids) throw FormatError((dir / "docids.txt").string() + ": cannot write");
  for (const auto& id : index.dense.doc_ids()) ids << id << '\n';
}

HybridIndex load_index(const std::filesystem::path& dir) {
  std::ifstream ids_in(dir / "docids.txt");
  if (!ids_in) throw FormatError((dir / "docids.txt").string() + ": cannot open");
  std::vector<std::string> ids;
  for (std::string line; std::getline(ids_in, line);) ids.push_back(line);

  const auto ckpt = Checkpoint::load(dir / "dense.ckpt");
  const auto dense = ckpt.get<double>("index.dense");
  if (dense.rank() != 2 || dense.rows() != ids.size()) {
    throw FormatError((dir / "dense.ckpt").string() + ": dense rows do not match docids.txt");
  }

  std::ifstream post(dir / "postings.bin", std::ios::binary);
  if (!post) throw FormatError((dir / "postings.bin").string() + ": cannot open");
  auto postings = read_postings(post, ids.size());
  return {DenseIndex(ids, dense.cols(), std::vector<double>(dense.values().begin(), dense.values().end())),
          InvertedIndex(ids, std::move(postings))};
}

}  // namespace lcret
