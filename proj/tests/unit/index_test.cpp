#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "lcret/index/index.hpp"
#include "lcret/numerics/checkpoint.hpp"

namespace lcret {
namespace {

constexpr std::int32_t kA = 10, kB = 11, kC = 12;

DenseEmbedding unit(std::vector<double> v) { return normalize(v); }

HybridRecord record(std::string id, std::vector<double> dense, std::vector<SparseVector::Entry> sparse) {
  return {std::move(id), unit(std::move(dense)), SparseVector(std::move(sparse)), 0};
}

struct Corpus {
  std::vector<HybridRecord> records;
  DenseEmbedding q_dense;
  SparseVector q_sparse;
};

/// Random corpus with duplicated rows and weights so ties are common.
Corpus random_corpus(std::mt19937_64& rng, std::size_t n, std::size_t h) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> token(4, 40);
  std::uniform_int_distribution<int> weight(1, 4), terms(0, 6), coin(0, 3);
  auto random_dense = [&] {
    std::vector<double> v(h);
    for (auto& x : v) x = normal(rng);
    return unit(v);
  };
  auto random_sparse = [&] {
    std::map<std::int32_t, double> m;
    for (int i = terms(rng); i > 0; --i) m[token(rng)] = 0.25 * weight(rng);
    return SparseVector(std::vector<SparseVector::Entry>(m.begin(), m.end()));
  };
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    HybridRecord r{"doc" + std::to_string(i), random_dense(), random_sparse(), 0};
    if (i > 0 && coin(rng) == 0) r.dense = c.records[i - 1].dense;
    c.records.push_back(std::move(r));
  }
  std::shuffle(c.records.begin(), c.records.end(), rng);
  c.q_dense = coin(rng) == 0 && n > 0 ? c.records[0].dense : random_dense();
  c.q_sparse = random_sparse();
  return c;
}

std::vector<Hit> oracle_rank(std::vector<Hit> all, std::size_t k) {
  std::sort(all.begin(), all.end(), [](const Hit& a, const Hit& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

double prefix_dot(const DenseEmbedding& a, const DenseEmbedding& b, std::size_t d) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < d; ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  return dot / std::sqrt(na * nb);
}

void expect_same_ranking(const std::vector<Hit>& got, const std::vector<Hit>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].doc_id, want[i].doc_id) << "rank " << i;
    EXPECT_NEAR(got[i].score, want[i].score, tol) << "rank " << i;
  }
}

TEST(Build, Examples) {
  const auto empty = build_index({}, 64);
  EXPECT_EQ(empty.size(), 0u);
  EXPECT_TRUE(dense_search(empty.dense, unit(std::vector<double>(64, 1.0)), 5).empty());

  const std::vector<HybridRecord> three{record("x", {1, 0}, {{kA, 0.5}}), record("y", {0, 1}, {{kB, 0.1}}),
                                        record("z", {1, 1}, {{kA, 0.2}, {kC, 0.3}})};
  const auto idx = build_index(three, 2);
  EXPECT_EQ(idx.sparse.postings(kA).size(), 2u);
  EXPECT_EQ(idx.sparse.postings(kB).size(), 1u);
  EXPECT_TRUE(idx.sparse.postings(99).empty());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(std::vector<double>(idx.dense.row(i).begin(), idx.dense.row(i).end()), three[i].dense.values);
  }
  auto dup = three;
  dup[2].doc_id = "x";
  EXPECT_THROW(build_index(dup, 2), std::invalid_argument);
  dup[2].doc_id = "has space";
  EXPECT_THROW(build_index(dup, 2), std::invalid_argument);
  EXPECT_THROW(build_index(three, 3), std::invalid_argument);
}

TEST(Build, SlicesRowsToSearchWidth) {
  std::mt19937_64 rng(40);
  const auto c = random_corpus(rng, 20, 96);
  const auto idx = build_index(c.records, 32);
  EXPECT_EQ(idx.dense.dim(), 32u);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto want = matryoshka_slice(c.records[i].dense, 32);
    for (std::size_t j = 0; j < 32; ++j) EXPECT_DOUBLE_EQ(idx.dense.row(i)[j], want.values[j]);
  }
}

TEST(DenseSearch, ExamplesAndErrors) {
  std::mt19937_64 rng(41);
  const auto c = random_corpus(rng, 30, 64);
  const auto idx = build_index(c.records, 64);
  const auto hits = dense_search(idx.dense, c.records[7].dense, 3);
  EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
  EXPECT_EQ(dense_search(idx.dense, c.q_dense, 1000).size(), 30u);
  EXPECT_THROW(dense_search(idx.dense, c.q_dense, 0), std::invalid_argument);
  EXPECT_THROW(sparse_search(idx.sparse, c.q_sparse, 0), std::invalid_argument);
}

TEST(SparseSearch, Examples) {
  const auto idx = build_index({record("x", {1, 0}, {{kA, 0.5}}), record("y", {0, 1}, {{kA, 0.9}, {kB, 0.1}}),
                                record("z", {1, 1}, {{kA, 0.2}})},
                               2);
  EXPECT_TRUE(sparse_search(idx.sparse, SparseVector({{kC, 1.0}}), 10).empty());
  const auto hits = sparse_search(idx.sparse, SparseVector({{kA, 2.0}}), 10);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].doc_id, "y");
  EXPECT_NEAR(hits[0].score, 1.8, 1e-15);
  EXPECT_EQ(hits[1].doc_id, "x");
  EXPECT_EQ(hits[2].doc_id, "z");
}

TEST(Search, MatchesExhaustiveOracles) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(4200 + seed);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 1000)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 50)(rng);
    const std::size_t d = seed % 2 ? 32 : 64;
    const double lambda = 0.003 * (seed % 5);
    const auto c = random_corpus(rng, n, 64);
    const auto idx = build_index(c.records, d);

    std::vector<Hit> dense_all, sparse_all, fused_all;
    for (const auto& r : c.records) {
      const double ds = prefix_dot(r.dense, c.q_dense, d);
      const double ss = sparse_score(c.q_sparse, r.sparse);
      dense_all.push_back({r.doc_id, ds, ds, 0});
      if (ss > 0) sparse_all.push_back({r.doc_id, ss, 0, ss});
      fused_all.push_back({r.doc_id, ds + lambda * ss, ds, ss});
    }
    SCOPED_TRACE("seed " + std::to_string(seed));
    expect_same_ranking(dense_search(idx.dense, c.q_dense, k), oracle_rank(dense_all, k), 1e-12);
    expect_same_ranking(sparse_search(idx.sparse, c.q_sparse, k), oracle_rank(sparse_all, k), 1e-12);
    const auto fused = hybrid_search(idx, c.q_dense, c.q_sparse, k, lambda);
    expect_same_ranking(fused, oracle_rank(fused_all, k), 1e-12);

    std::set<std::string> returned;
    for (const auto& h : fused) returned.insert(h.doc_id);
    EXPECT_EQ(returned.size(), fused.size());
    for (const auto& h : fused_all) {
      if (!returned.count(h.doc_id)) EXPECT_LE(h.score, fused.back().score + 1e-12);
    }
  }
}

TEST(Hybrid, FusionArithmetic) {
  // Query (1, 0); doc "a" sits at cosine 0.8.
  const auto idx = build_index({record("a", {0.8, 0.6}, {{kA, 5.0}}), record("b", {0, 1}, {})}, 2);
  const auto hits = hybrid_search(idx, unit({1, 0}), SparseVector({{kA, 2.0}}), 2, 0.01);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].doc_id, "a");
  EXPECT_NEAR(hits[0].dense, 0.8, 1e-15);
  EXPECT_NEAR(hits[0].sparse, 10.0, 1e-15);
  EXPECT_NEAR(hits[0].score, 0.9, 1e-15);
  EXPECT_EQ(hits[1].sparse, 0.0);
  EXPECT_EQ(hits[1].score, hits[1].dense);
  EXPECT_THROW(hybrid_search(idx, unit({1, 0}), SparseVector(), 2, -1.0), std::invalid_argument);
}

TEST(Hybrid, DegenerateFusions) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(4300 + seed);
    auto c = random_corpus(rng, 200, 64);
    const auto idx = build_index(c.records, 64);
    const auto dense = dense_search(idx.dense, c.q_dense, 20);
    const auto zero = hybrid_search(idx, c.q_dense, c.q_sparse, 20, 0.0);
    ASSERT_EQ(zero.size(), dense.size());
    for (std::size_t i = 0; i < dense.size(); ++i) {
      EXPECT_EQ(zero[i].doc_id, dense[i].doc_id);
      EXPECT_EQ(zero[i].score, dense[i].score);
    }
    // Identical dense rows leave only the sparse term to separate documents.
    for (auto& r : c.records) r.dense = c.q_dense;
    const auto flat = build_index(c.records, 64);
    const auto sparse = sparse_search(flat.sparse, c.q_sparse, 20);
    const auto fused = hybrid_search(flat, c.q_dense, c.q_sparse, 20, 0.01);
    for (std::size_t i = 0; i < sparse.size(); ++i) EXPECT_EQ(fused[i].doc_id, sparse[i].doc_id);
  }
}

TEST(Hybrid, CandidatePoolSubstitutesZero) {
  std::vector<HybridRecord> records;
  for (int i = 0; i < 1200; ++i) {
    const double angle = 0.001 * i;
    records.push_back(record("d" + std::to_string(1000 + i), {std::cos(angle), std::sin(angle)}, {}));
  }
  // Farthest from the query in dense terms, so outside the dense pool.
  records.back().sparse = SparseVector({{kA, 50.0}});
  const auto idx = build_index(records, 2);
  const auto hits = hybrid_search(idx, unit({1, 0}), SparseVector({{kA, 1.0}}), 5, 1.0);
  ASSERT_EQ(hits.size(), 5u);
  EXPECT_EQ(hits[0].doc_id, "d2199");
  EXPECT_EQ(hits[0].dense, 0.0);
  EXPECT_EQ(hits[0].score, 50.0);
  EXPECT_EQ(hits[1].doc_id, "d1000");
}

SearchResult ranked(std::size_t n) {
  SearchResult r{"q1", {}};
  for (std::size_t i = 0; i < n; ++i) r.hits.push_back({"d" + std::to_string(i), 100.0 - i, 0, 0});
  return r;
}

TEST(Rerank, ZeroScorerKeepsOrder) {
  const auto in = ranked(30);
  const auto out = rerank(in, [](std::span<const Hit> h) { return std::vector<double>(h.size(), 0.0); });
  for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(out.hits[i].doc_id, in.hits[i].doc_id);
  EXPECT_EQ(kRerankDepth, 100u);
  EXPECT_TRUE(rerank(SearchResult{"q", {}}, [](auto) { return std::vector<double>{}; }).hits.empty());
}

TEST(Rerank, InvertingScorerReversesHeadAndAppendsRemainder) {
  const auto in = ranked(150);
  const auto inverse = [](std::span<const Hit> h) {
    std::vector<double> s;
    for (const auto& hit : h) s.push_back(-hit.score);
    return s;
  };
  const auto out = rerank(in, inverse, 100);
  ASSERT_EQ(out.hits.size(), 150u);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(out.hits[i].doc_id, in.hits[99 - i].doc_id);
  for (std::size_t i = 100; i < 150; ++i) EXPECT_EQ(out.hits[i].doc_id, in.hits[i].doc_id);
  for (std::size_t i = 1; i < 150; ++i) EXPECT_LT(out.hits[i].score, out.hits[i - 1].score);
}

TEST(Rerank, IsAPermutation) {
  std::mt19937_64 rng(44);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto in = ranked(1 + trial * 3);
    const auto out = rerank(
        in,
        [&](std::span<const Hit> h) {
          std::vector<double> s(h.size());
          for (auto& v : s) v = n(rng);
          return s;
        },
        static_cast<std::size_t>(trial));
    std::multiset<std::string> a, b;
    for (const auto& h : in.hits) a.insert(h.doc_id);
    for (const auto& h : out.hits) b.insert(h.doc_id);
    EXPECT_EQ(a, b);
  }
}

TEST(Persistence, RoundTripAndCorruption) {
  std::mt19937_64 rng(45);
  const auto c = random_corpus(rng, 60, 64);
  const auto idx = build_index(c.records, 32);
  const auto dir = std::filesystem::temp_directory_path() / "lcret_index_test";
  std::filesystem::remove_all(dir);
  save_index(idx, dir);
  const auto back = load_index(dir);
  EXPECT_EQ(back.dense.doc_ids(), idx.dense.doc_ids());
  EXPECT_EQ(back.dense.dim(), 32u);
  const auto a = hybrid_search(idx, c.q_dense, c.q_sparse, 10, 0.003);
  const auto b = hybrid_search(back, c.q_dense, c.q_sparse, 10, 0.003);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].doc_id, b[i].doc_id);
    EXPECT_EQ(a[i].score, b[i].score);
  }
  std::ofstream(dir / "postings.bin", std::ios::binary) << "garbage";
  EXPECT_THROW(load_index(dir), FormatError);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_index(dir), FormatError);
}

TEST(Persistence, PostingsLayoutIsLittleEndian) {
  const auto idx = build_index({record("x", {1, 0}, {{kA, 0.5}})}, 2);
  std::stringstream s;
  write_postings(s, idx.sparse);
  const std::string bytes = s.str();
  ASSERT_EQ(bytes.size(), 8u + 4 + 8 + 8 + 4 + 8 + 4 + 8);
  EXPECT_EQ(bytes.substr(0, 7), "LCRPOST");
  EXPECT_EQ(static_cast<unsigned char>(bytes[28]), kA);
  EXPECT_EQ(read_postings(s, 1).at(kA).front().weight, 0.5);
}

}  // namespace
}  // namespace lcret
