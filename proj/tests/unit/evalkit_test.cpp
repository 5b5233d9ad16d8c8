#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "lcret/evalkit/evalkit.hpp"
#include "lcret/pipeline/data.hpp"

namespace lcret {
namespace {

RunFile run_of(const std::string& q, const std::vector<std::string>& docs) {
  RunFile run;
  for (std::size_t i = 0; i < docs.size(); ++i) run.append(q, docs[i], static_cast<double>(docs.size() - i));
  return run;
}

Qrels qrels_of(const std::string& q, const std::vector<std::pair<std::string, int>>& judged) {
  Qrels qrels;
  for (const auto& [d, rel] : judged) qrels.add(q, d, rel);
  return qrels;
}

// Independent formulation: gains indexed by 1-based rank, natural-log ratio.
double oracle_ndcg(const std::vector<std::string>& ranking, const std::map<std::string, int>& judged, std::size_t k) {
  double dcg = 0.0;
  for (std::size_t rank = 1; rank <= k && rank <= ranking.size(); ++rank) {
    const auto it = judged.find(ranking[rank - 1]);
    if (it != judged.end()) dcg += it->second * std::log(2.0) / std::log(rank + 1.0);
  }
  std::vector<int> gains;
  for (const auto& [d, g] : judged) gains.push_back(g);
  std::sort(gains.begin(), gains.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t rank = 1; rank <= k && rank <= gains.size(); ++rank) {
    idcg += gains[rank - 1] * std::log(2.0) / std::log(rank + 1.0);
  }
  return dcg / idcg;
}

double oracle_recall(const std::vector<std::string>& ranking, const std::map<std::string, int>& judged,
                     std::size_t k) {
  double relevant = 0.0, hit = 0.0;
  for (const auto& [d, g] : judged) {
    if (g <= 0) continue;
    relevant += 1.0;
    const auto pos = std::find(ranking.begin(), ranking.end(), d);
    if (pos != ranking.end() && static_cast<std::size_t>(pos - ranking.begin()) < k) hit += 1.0;
  }
  return hit / relevant;
}

TEST(Ndcg, ClosedForms) {
  const auto qrels = qrels_of("q", {{"a", 1}});
  EXPECT_DOUBLE_EQ(ndcg_at_k(run_of("q", {"a", "b"}), qrels, 10), 1.0);
  EXPECT_NEAR(ndcg_at_k(run_of("q", {"b", "a"}), qrels, 10), 1.0 / std::log2(3.0), 1e-15);
  EXPECT_NEAR(ndcg_at_k(run_of("q", {"b", "a"}), qrels, 10), 0.6309, 1e-4);
  EXPECT_EQ(ndcg_at_k(run_of("q", {"b", "a"}), qrels, 1), 0.0);
  // Raw graded gains: a grade-2 doc at rank 2 behind a grade-1 doc.
  const auto graded = qrels_of("q", {{"a", 1}, {"b", 2}});
  EXPECT_NEAR(ndcg_at_k(run_of("q", {"a", "b"}), graded, 10), (1 + 2 / std::log2(3.0)) / (2 + 1 / std::log2(3.0)),
              1e-15);
}

TEST(Ndcg, QueryHandling) {
  Qrels qrels = qrels_of("q1", {{"a", 1}});
  qrels.add("q2", "x", 1);
  qrels.add("q3", "y", 0);
  const auto run = run_of("q1", {"a"});
  const auto per = ndcg_per_query(run, qrels, 10);
  EXPECT_EQ(per.size(), 2u);
  EXPECT_EQ(per.at("q2"), 0.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(run, qrels, 10), 0.5);
  EXPECT_THROW(ndcg_at_k(run, Qrels{}, 10), std::invalid_argument);
  EXPECT_THROW(ndcg_at_k(run, qrels, 0), std::invalid_argument);
  EXPECT_THROW(recall_at_k(run, qrels_of("q", {{"a", 0}}), 10), std::invalid_argument);
}

TEST(Recall, Examples) {
  const auto qrels = qrels_of("q", {{"a", 1}, {"b", 2}, {"c", 1}});
  EXPECT_NEAR(recall_at_k(run_of("q", {"x", "a", "y", "c"}), qrels, 20), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(recall_at_k(run_of("q", {"x", "a", "y", "c"}), qrels, 20), 0.6667, 1e-4);
  EXPECT_EQ(recall_at_k(run_of("q", {"c", "b", "a"}), qrels, 3), 1.0);
  EXPECT_EQ(recall_at_k(run_of("q", {"x", "y"}), qrels, 20), 0.0);
}

struct Instance {
  RunFile run;
  Qrels qrels;
  std::map<std::string, std::vector<std::string>> rankings;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> grade(0, 3), count(1, 15), queries(1, 6), docs(1, 30);
  Instance inst;
  for (int q = queries(rng); q > 0; --q) {
    const std::string qid = "q" + std::to_string(q);
    std::vector<std::string> pool;
    for (int d = 0; d < 30; ++d) pool.push_back("d" + std::to_string(d));
    std::shuffle(pool.begin(), pool.end(), rng);
    const int judged = count(rng);
    for (int i = 0; i < judged; ++i) inst.qrels.add(qid, pool[i], grade(rng));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(docs(rng));
    if (grade(rng) == 0) pool.clear();  // query absent from the run
    for (std::size_t i = 0; i < pool.size(); ++i) inst.run.append(qid, pool[i], -static_cast<double>(i));
    inst.rankings[qid] = pool;
  }
  return inst;
}

TEST(Metrics, MatchExhaustiveOracleOnRandomInstances) {
  std::mt19937_64 rng(51);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_instance(rng);
    for (std::size_t k : {1u, 5u, 10u, 20u}) {
      double ndcg = 0.0, recall = 0.0;
      int n = 0;
      for (const auto& [q, judged] : inst.qrels.queries()) {
        if (std::none_of(judged.begin(), judged.end(), [](const auto& j) { return j.second > 0; })) continue;
        ndcg += oracle_ndcg(inst.rankings.at(q), judged, k);
        recall += oracle_recall(inst.rankings.at(q), judged, k);
        ++n;
      }
      if (n == 0) {
        EXPECT_THROW(ndcg_at_k(inst.run, inst.qrels, k), std::invalid_argument);
        continue;
      }
      EXPECT_NEAR(ndcg_at_k(inst.run, inst.qrels, k), ndcg / n, 1e-9);
      EXPECT_NEAR(recall_at_k(inst.run, inst.qrels, k), recall / n, 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 300);
}

TEST(Metrics, Properties) {
  std::mt19937_64 rng(52);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_instance(rng);
    const auto per = ndcg_per_query(inst.run, inst.qrels, 10);
    for (const auto& [q, v] : per) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
    RunFile permuted;
    for (const auto& [q, ranking] : inst.rankings) {
      auto order = ranking;
      if (order.size() > 10) std::shuffle(order.begin() + 10, order.end(), rng);
      for (std::size_t i = 0; i < order.size(); ++i) permuted.append(q, order[i], -static_cast<double>(i));
    }
    EXPECT_EQ(ndcg_per_query(permuted, inst.qrels, 10), per);
    std::map<std::string, double> previous;
    for (std::size_t k = 1; k <= 30; ++k) {
      const auto r = recall_per_query(inst.run, inst.qrels, k);
      for (const auto& [q, v] : r) {
        if (previous.count(q)) EXPECT_GE(v, previous[q]);
      }
      previous = r;
    }
  }
}

TEST(Files, QrelsFixtureAndErrors) {
  std::istringstream in("q1 0 d1 1\nq1 0 d2 0\n\nq2 0 d1 2\nq2 0 d9 1\nq3 0 d4 3\n");
  const auto qrels = read_qrels(in);
  EXPECT_EQ(qrels.size(), 5u);
  EXPECT_EQ(qrels.relevance("q1", "d1"), 1);
  EXPECT_EQ(qrels.relevance("q1", "d2"), 0);
  EXPECT_EQ(qrels.relevance("q2", "d1"), 2);
  EXPECT_EQ(qrels.relevance("q2", "d9"), 1);
  EXPECT_EQ(qrels.relevance("q3", "d4"), 3);
  EXPECT_EQ(qrels.relevance("q9", "d4"), 0);

  std::istringstream empty("");
  EXPECT_TRUE(read_qrels(empty).empty());

  auto expect_error = [](const std::string& text, const std::string& prefix, bool run) {
    std::istringstream s(text);
    try {
      if (run) {
        read_run(s, "f");
      } else {
        read_qrels(s, "f");
      }
      ADD_FAILURE() << "accepted: " << text;
    } catch (const DataError& e) {
      EXPECT_EQ(std::string(e.what()).rfind(prefix, 0), 0u) << e.what();
    }
  };
  expect_error("q1 0 d1 1\nq1 0 d1 2\n", "f:2: ", false);
  expect_error("q1 0 d1\n", "f:1: ", false);
  expect_error("q1 0 d1 x\n", "f:1: ", false);
  expect_error("q1 0 d1 -1\n", "f:1: ", false);
  expect_error("q1 Q0 d1 1 0.5 t\nq1 Q0 d2 3 0.4 t\n", "f:2: ", true);
  expect_error("q1 Q0 d1 1 0.5 t\nq1 Q0 d2 2 0.6 t\n", "f:2: ", true);
  expect_error("q1 Q0 d1 1 0.5 t\nq1 Q0 d1 2 0.4 t\n", "f:2: ", true);
  expect_error("\n\nq1 Q0 d1 1 nan t\n", "f:3: ", true);
  expect_error("q1 Q0 d1 1 0.5\n", "f:1: ", true);
}

TEST(Files, RoundTrips) {
  std::mt19937_64 rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    auto inst = random_instance(rng);
    RunFile run;
    std::normal_distribution<double> n(0.0, 1.0);
    for (const auto& [q, ranking] : inst.rankings) {
      std::vector<double> scores(ranking.size());
      for (auto& s : scores) s = n(rng);
      std::sort(scores.rbegin(), scores.rend());
      for (std::size_t i = 0; i < ranking.size(); ++i) run.append(q, ranking[i], scores[i]);
    }
    std::stringstream rs, qs;
    write_run(rs, run, "tag");
    write_qrels(qs, inst.qrels);
    EXPECT_EQ(read_run(rs), run);
    EXPECT_EQ(read_qrels(qs), inst.qrels);
  }
  std::istringstream one("q1 Q0 d1 1 0.5 run\n");
  const auto parsed = read_run(one);
  EXPECT_EQ(parsed.queries.at("q1"), (std::vector<RunEntry>{{"d1", 0.5}}));
  EXPECT_EQ(format_double(0.1), "0.1");
}

TEST(Files, MetricsCsv) {
  Qrels qrels = qrels_of("q1", {{"a", 1}});
  qrels.add("q2", "b", 1);
  const auto run = run_of("q1", {"x", "a"});
  std::ostringstream out;
  write_metrics_csv(out, {evaluate_metric(run, qrels, "ndcg@10"), evaluate_metric(run, qrels, "recall@20")});
  const double half = 0.5 / std::log2(3.0);
  EXPECT_EQ(out.str(), "metric,query_id,value\nndcg@10,q1," + format_double(1.0 / std::log2(3.0)) +
                           "\nndcg@10,q2,0\nndcg@10,ALL," + format_double(half) +
                           "\nrecall@20,q1,1\nrecall@20,q2,0\nrecall@20,ALL,0.5\n");
  EXPECT_THROW(evaluate_metric(run, qrels, "map@10"), std::invalid_argument);
  EXPECT_THROW(evaluate_metric(run, qrels, "ndcg"), std::invalid_argument);
}

}  // namespace
}  // namespace lcret
