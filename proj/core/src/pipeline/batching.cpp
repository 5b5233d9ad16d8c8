#include "lcret/pipeline/batching.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "lcret/encoder/config.hpp"

namespace lcret {

void BatchSchedule::validate() {
  if (buckets.empty()) throw ConfigError("batch schedule: no buckets");
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    auto& b = buckets[i];
    if (b.bound == 0 || b.batch_size == 0 || b.sub_batch_size == 0) {
      throw ConfigError("batch schedule: bucket " + std::to_string(i) + " has a zero entry");
    }
    if (i > 0 && b.bound <= buckets[i - 1].bound) {
      throw ConfigError("batch schedule: bounds must strictly increase at bucket " + std::to_string(i));
    }
    b.sub_batch_size = std::min(b.sub_batch_size, b.batch_size);
  }
}

std::size_t BatchSchedule::bucket_for(std::size_t length) const {
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    if (length < buckets[i].bound) return i;
  }
  throw std::out_of_range("length " + std::to_string(length) + " is not below the largest bucket bound");
}

BatchSchedule BatchSchedule::embedding() {
  return {{{500, 768, 256}, {1000, 384, 128}, {2000, 256, 64}, {3000, 160, 48}, {8000, 80, 16}}};
}

BatchSchedule BatchSchedule::reranker() {
  return {{{500, 512, 256}, {1000, 384, 128}, {2000, 256, 64}, {3000, 160, 48}, {8000, 80, 16}}};
}

BatchSchedule BatchSchedule::fixed(std::size_t bound, std::size_t batch_size, std::size_t sub_batch_size) {
  BatchSchedule s{{{bound, batch_size, sub_batch_size}}};
  s.validate();
  return s;
}

BatchSchedule BatchSchedule::parse(std::istream& in) {
  BatchSchedule s;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (auto hash = text.find('#'); hash != std::string::npos) text.resize(hash);
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = text.find('=');
    std::istringstream key(text.substr(0, eq)), value(eq == std::string::npos ? "" : text.substr(eq + 1));
    BatchBucket b;
    std::string extra;
    if (eq == std::string::npos || !(key >> b.bound) || !(value >> b.batch_size >> b.sub_batch_size) ||
        (key >> extra) || (value >> extra)) {
      throw ConfigError("batch schedule line " + std::to_string(line) + ": expected '<bound> = <batch> <sub_batch>'");
    }
    s.buckets.push_back(b);
  }
  s.validate();
  return s;
}

BatchSchedule BatchSchedule::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open batch schedule " + path.string());
  return parse(in);
}

void BatchSchedule::write(std::ostream& out) const {
  out << "# length bound = batch size, sub-batch size\n";
  for (const auto& b : buckets) out << b.bound << " = " << b.batch_size << ' ' << b.sub_batch_size << '\n';
}

std::vector<DynamicBatch> dynamic_batches(std::span<const std::size_t> lengths, std::span<const std::string> ids,
                                          const BatchSchedule& schedule) {
  if (!ids.empty() && ids.size() != lengths.size()) throw std::invalid_argument("dynamic_batches: one id per example");
  std::vector<std::vector<std::size_t>> members(schedule.buckets.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    std::size_t b = 0;
    try {
      b = schedule.bucket_for(lengths[i]);
    } catch (const std::out_of_range& e) {
      const std::string who = ids.empty() ? "#" + std::to_string(i) : ids[i];
      throw std::out_of_range("example " + who + ": " + e.what());
    }
    members[b].push_back(i);
  }
  std::vector<DynamicBatch> out;
  for (std::size_t b = 0; b < members.size(); ++b) {
    const auto& bucket = schedule.buckets[b];
    for (std::size_t begin = 0; begin < members[b].size(); begin += bucket.batch_size) {
      const std::size_t end = std::min(members[b].size(), begin + bucket.batch_size);
      out.push_back({b, bucket.sub_batch_size, {members[b].begin() + begin, members[b].begin() + end}});
    }
  }
  return out;
}

}  // namespace lcret
