#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace lcret {

struct BatchBucket {
  std::size_t bound = 0;  // lengths strictly below this bound
  std::size_t batch_size = 0;
  std::size_t sub_batch_size = 0;

  bool operator==(const BatchBucket&) const = default;
};

/// Length buckets with their batch and sub-batch sizes.
///
/// File form, one bucket per line, '#' comments:
///   500 = 768 256
struct BatchSchedule {
  std::vector<BatchBucket> buckets;

  /// Throws ConfigError unless bounds strictly increase and sizes are
  /// positive. Sub-batches larger than the batch are capped.
  void validate();
  /// Index of the first bucket whose bound exceeds `length`; throws
  /// std::out_of_range past the last bound.
  std::size_t bucket_for(std::size_t length) const;

  static BatchSchedule embedding();
  static BatchSchedule reranker();
  /// Single bucket, for toy runs with a fixed batch size.
  static BatchSchedule fixed(std::size_t bound, std::size_t batch_size, std::size_t sub_batch_size);

  static BatchSchedule parse(std::istream& in);
  static BatchSchedule load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
};

struct DynamicBatch {
  std::size_t bucket = 0;
  std::size_t sub_batch_size = 0;
  std::vector<std::size_t> examples;  // indices into the input
};

/// Groups examples by length bucket. Each bucket is cut, in input order, into
/// batches of its batch size; the last batch of a bucket may be short.
/// Buckets are emitted in ascending order.
std::vector<DynamicBatch> dynamic_batches(std::span<const std::size_t> lengths, std::span<const std::string> ids,
                                          const BatchSchedule& schedule);

}  // namespace lcret
