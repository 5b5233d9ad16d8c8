#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace lcret {

/// (query_id, doc_id) -> graded relevance.
class Qrels {
 public:
  /// Throws std::invalid_argument on duplicates or negative grades.
  void add(const std::string& query_id, const std::string& doc_id, int relevance);
  const std::map<std::string, std::map<std::string, int>>& queries() const noexcept { return queries_; }
  std::size_t size() const noexcept;
  bool empty() const noexcept { return queries_.empty(); }
  /// 0 when unjudged.
  int relevance(const std::string& query_id, const std::string& doc_id) const;

  bool operator==(const Qrels&) const = default;

 private:
  std::map<std::string, std::map<std::string, int>> queries_;
};

struct RunEntry {
  std::string doc_id;
  double score = 0.0;

  bool operator==(const RunEntry&) const = default;
};

/// Per query, entries in rank order (rank i + 1 at index i).
struct RunFile {
  std::map<std::string, std::vector<RunEntry>> queries;

  /// Throws std::invalid_argument on a repeated document or an increasing score.
  void append(const std::string& query_id, std::string doc_id, double score);
  bool operator==(const RunFile&) const = default;
};

/// "qid 0 docid rel" lines; blank lines skipped. Errors carry "name:line: ".
Qrels read_qrels(std::istream& in, const std::string& name = "<qrels>");
Qrels load_qrels(const std::filesystem::path& path);
void write_qrels(std::ostream& out, const Qrels& qrels);

/// "qid Q0 docid rank score tag" lines; ranks must run 1, 2, ... per query.
RunFile read_run(std::istream& in, const std::string& name = "<run>");
RunFile load_run(const std::filesystem::path& path);
void write_run(std::ostream& out, const RunFile& run, const std::string& tag = "lcret");
void save_run(const std::filesystem::path& path, const RunFile& run, const std::string& tag = "lcret");

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

/// Per-query values over the qrels queries with at least one relevant
/// document; queries missing from the run score 0.
std::map<std::string, double> ndcg_per_query(const RunFile& run, const Qrels& qrels, std::size_t k);
std::map<std::string, double> recall_per_query(const RunFile& run, const Qrels& qrels, std::size_t k);

/// Means of the per-query values; throw std::invalid_argument when k = 0 or
/// no query has a relevant document.
double ndcg_at_k(const RunFile& run, const Qrels& qrels, std::size_t k);
double recall_at_k(const RunFile& run, const Qrels& qrels, std::size_t k);

struct MetricReport {
  std::string metric;  // e.g. "ndcg@10"
  std::map<std::string, double> per_query;
  double mean = 0.0;
};

MetricReport evaluate_metric(const RunFile& run, const Qrels& qrels, const std::string& metric);

/// "metric,query_id,value" header, one row per query, then an ALL row per metric.
void write_metrics_csv(std::ostream& out, const std::vector<MetricReport>& reports);

}  // namespace lcret
