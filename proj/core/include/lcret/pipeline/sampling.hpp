#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lcret/encoder/unpad.hpp"
#include "lcret/pipeline/data.hpp"

namespace lcret {

/// q_i = p_i^alpha / sum_j p_j^alpha with p_i = n_i / sum_j n_j.
std::vector<double> language_sampling_probs(std::span<const double> counts, double alpha);

enum class SourceWeighting { documents, tokens };

/// n_i per source under the chosen weighting.
std::vector<double> source_counts(std::span<const CorpusSource> sources, SourceWeighting weighting);

struct SampledBatch {
  std::size_t source = 0;
  std::vector<std::size_t> items;  // indices into the chosen source
};

/// Draws whole batches from one source at a time. The source is chosen
/// multinomially; items are drawn without replacement unless the source is
/// smaller than the batch.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> source_sizes, std::vector<double> probs, std::uint64_t seed);
  SampledBatch next(std::size_t batch_size);

 private:
  std::vector<std::size_t> sizes_;
  std::discrete_distribution<std::size_t> pick_;
  std::mt19937_64 rng_;
};

struct MaskedTokens {
  std::vector<std::int32_t> ids;         // corrupted copy of the input
  std::vector<std::size_t> positions;    // selected indices, ascending
  std::vector<std::int32_t> labels;      // original ids at `positions`
};

/// Selects each non-special position with probability `mask_prob`; selected
/// tokens become [MASK] 80% of the time, a random id in [4, random_limit) 10%,
/// and stay unchanged 10%.
MaskedTokens mlm_mask(std::span<const std::int32_t> ids, double mask_prob, std::size_t random_limit,
                      std::mt19937_64& rng);
MaskedTokens mlm_mask(std::span<const std::int32_t> ids, double mask_prob, std::size_t random_limit,
                      std::uint64_t seed);

/// Masks a flat token stream in place of `batch.tokens`; positions index the stream.
MaskedTokens mlm_mask(const UnpaddedBatch& batch, double mask_prob, std::size_t random_limit, std::mt19937_64& rng);

/// Consecutive pieces of at most `max_len` ids; short inputs come back whole.
std::vector<std::vector<std::int32_t>> chunk(std::span<const std::int32_t> ids, std::size_t max_len);

/// Indices of documents kept for a long-context stage: those at or above
/// `length_floor` always, shorter ones with probability `keep_prob`.
std::vector<std::size_t> downsample_short(std::span<const std::size_t> lengths, std::size_t length_floor,
                                          double keep_prob, std::uint64_t seed);

inline constexpr double kDefaultSamplingAlpha = 0.5;
inline constexpr double kDefaultMaskProb = 0.3;
inline constexpr double kDefaultShortKeepProb = 0.25;

}  // namespace lcret
