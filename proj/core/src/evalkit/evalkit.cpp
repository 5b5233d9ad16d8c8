#include "lcret/evalkit/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "lcret/pipeline/data.hpp"

namespace lcret {
namespace {

std::vector<std::string> fields_of(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string f; in >> f;) out.push_back(f);
  return out;
}

template <class Int>
Int parse_int(const std::string& s, const char* what) {
  Int v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw std::invalid_argument(std::string("bad ") + what + " '" + s + "'");
  return v;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("bad score '" + s + "'");
  return v;
}

/// Calls row(fields) per non-blank line, rethrowing failures as DataError with the line number.
void for_each_line(std::istream& in, const std::string& name,
                   const std::function<void(const std::vector<std::string>&)>& row) {
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto fields = fields_of(line);
    if (fields.empty()) continue;
    try {
      row(fields);
    } catch (const std::exception& e) {
      throw DataError(name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void require_k(std::size_t k) {
  if (k == 0) throw std::invalid_argument("metric cutoff k must be at least 1");
}

bool has_relevant(const std::map<std::string, int>& judged) {
  return std::any_of(judged.begin(), judged.end(), [](const auto& j) { return j.second > 0; });
}

const std::vector<RunEntry>* ranking_of(const RunFile& run, const std::string& query_id) {
  const auto it = run.queries.find(query_id);
  return it == run.queries.end() ? nullptr : &it->second;
}

double mean_of(const std::map<std::string, double>& per_query) {
  if (per_query.empty()) throw std::invalid_argument("no query in the qrels has a relevant document");
  double sum = 0.0;
  for (const auto& [q, v] : per_query) sum += v;
  return sum / static_cast<double>(per_query.size());
}

}  // namespace

void Qrels::add(const std::string& query_id, const std::string& doc_id, int relevance) {
  if (relevance < 0) throw std::invalid_argument("negative relevance for " + query_id + " " + doc_id);
  if (!queries_[query_id].emplace(doc_id, relevance).second) {
    throw std::invalid_argument("duplicate judgment for " + query_id + " " + doc_id);
  }
}

std::size_t Qrels::size() const noexcept {
  std::size_t n = 0;
  for (const auto& [q, docs] : queries_) n += docs.size();
  return n;
}

int Qrels::relevance(const std::string& query_id, const std::string& doc_id) const {
  const auto q = queries_.find(query_id);
  if (q == queries_.end()) return 0;
  const auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

void RunFile::append(const std::string& query_id, std::string doc_id, double score) {
  auto& ranking = queries[query_id];
  for (const auto& e : ranking) {
    if (e.doc_id == doc_id) throw std::invalid_argument("document " + doc_id + " ranked twice for " + query_id);
  }
  if (!ranking.empty() && score > ranking.back().score) {
    throw std::invalid_argument("scores of " + query_id + " increase at rank " + std::to_string(ranking.size() + 1));
  }
  ranking.push_back({std::move(doc_id), score});
}

Qrels read_qrels(std::istream& in, const std::string& name) {
  Qrels qrels;
  for_each_line(in, name, [&](const std::vector<std::string>& f) {
    if (f.size() != 4) throw std::invalid_argument("expected 4 fields 'qid 0 docid rel', got " + std::to_string(f.size()));
    qrels.add(f[0], f[2], parse_int<int>(f[3], "relevance"));
  });
  return qrels;
}

Qrels load_qrels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  return read_qrels(in, path.string());
}

void write_qrels(std::ostream& out, const Qrels& qrels) {
  for (const auto& [q, docs] : qrels.queries()) {
    for (const auto& [d, rel] : docs) out << q << " 0 " << d << ' ' << rel << '\n';
  }
}

RunFile read_run(std::istream& in, const std::string& name) {
  RunFile run;
  for_each_line(in, name, [&](const std::vector<std::string>& f) {
    if (f.size() != 6) {
      throw std::invalid_argument("expected 6 fields 'qid Q0 docid rank score tag', got " + std::to_string(f.size()));
    }
    const auto rank = parse_int<std::size_t>(f[3], "rank");
    const auto it = run.queries.find(f[0]);
    const std::size_t expected = (it == run.queries.end() ? 0 : it->second.size()) + 1;
    if (rank != expected) {
      throw std::invalid_argument("rank " + std::to_string(rank) + " of " + f[0] + " should be " +
                                  std::to_string(expected));
    }
    run.append(f[0], f[2], parse_double(f[4]));
  });
  return run;
}

RunFile load_run(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open");
  return read_run(in, path.string());
}

void write_run(std::ostream& out, const RunFile& run, const std::string& tag) {
  for (const auto& [q, ranking] : run.queries) {
    for (std::size_t i = 0; i < ranking.size(); ++i) {
      out << q << " Q0 " << ranking[i].doc_id << ' ' << i + 1 << ' ' << format_double(ranking[i].score) << ' ' << tag
          << '\n';
    }
  }
}

void save_run(const std::filesystem::path& path, const RunFile& run, const std::string& tag) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot write");
  write_run(out, run, tag);
}

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::map<std::string, double> ndcg_per_query(const RunFile& run, const Qrels& qrels, std::size_t k) {
  require_k(k);
  std::map<std::string, double> out;
  for (const auto& [q, judged] : qrels.queries()) {
    if (!has_relevant(judged)) continue;
    std::vector<int> ideal;
    for (const auto& [d, rel] : judged) ideal.push_back(rel);
    std::sort(ideal.rbegin(), ideal.rend());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) idcg += ideal[i] / std::log2(i + 2.0);
    double dcg = 0.0;
    if (const auto* ranking = ranking_of(run, q)) {
      for (std::size_t i = 0; i < std::min(k, ranking->size()); ++i) {
        dcg += qrels.relevance(q, (*ranking)[i].doc_id) / std::log2(i + 2.0);
      }
    }
    out[q] = dcg / idcg;
  }
  return out;
}

std::map<std::string, double> recall_per_query(const RunFile& run, const Qrels& qrels, std::size_t k) {
  require_k(k);
  std::map<std::string, double> out;
  for (const auto& [q, judged] : qrels.queries()) {
    const auto relevant = std::count_if(judged.begin(), judged.end(), [](const auto& j) { return j.second > 0; });
    if (relevant == 0) continue;
    std::size_t found = 0;
    if (const auto* ranking = ranking_of(run, q)) {
      for (std::size_t i = 0; i < std::min(k, ranking->size()); ++i) {
        if (qrels.relevance(q, (*ranking)[i].doc_id) > 0) ++found;
      }
    }
    out[q] = static_cast<double>(found) / static_cast<double>(relevant);
  }
  return out;
}

double ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  return mean_of(ndcg_per_query(run, qrels, k));
}

double recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k) {
  return mean_of(recall_per_query(run, qrels, k));
}

MetricReport evaluate_metric(const RunFile& run, const Qrels& qrels, const std::string& metric) {
  const auto at = metric.find('@');
  if (at == std::string::npos) throw std::invalid_argument("metric '" + metric + "' lacks a cutoff, e.g. ndcg@10");
  const std::string name = metric.substr(0, at);
  const auto k = parse_int<std::size_t>(metric.substr(at + 1), "cutoff");
  MetricReport report{metric, {}, 0.0};
  if (name == "ndcg") {
    report.per_query = ndcg_per_query(run, qrels, k);
  } else if (name == "recall") {
    report.per_query = recall_per_query(run, qrels, k);
  } else {
    throw std::invalid_argument("unknown metric '" + name + "' (ndcg, recall)");
  }
  report.mean = mean_of(report.per_query);
  return report;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricReport>& reports) {
  out << "metric,query_id,value\n";
  for (const auto& r : reports) {
    for (const auto& [q, v] : r.per_query) out << r.metric << ',' << q << ',' << format_double(v) << '\n';
    out << r.metric << ",ALL," << format_double(r.mean) << '\n';
  }
}

}  // namespace lcret
