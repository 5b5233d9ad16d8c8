#include "lcret/pipeline/sampling.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "lcret/encoder/config.hpp"

namespace lcret {

std::vector<double> language_sampling_probs(std::span<const double> counts, double alpha) {
  if (counts.empty()) throw std::invalid_argument("language sampling: no sources");
  if (!(alpha >= 0.0)) throw std::invalid_argument("language sampling: alpha must be non-negative");
  double total = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (!(counts[i] > 0.0) || !std::isfinite(counts[i])) {
      throw std::invalid_argument("language sampling: source " + std::to_string(i) + " has count " +
                                  std::to_string(counts[i]));
    }
    total += counts[i];
  }
  std::vector<double> q(counts.size());
  double norm = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i) norm += q[i] = std::pow(counts[i] / total, alpha);
  for (auto& v : q) v /= norm;
  return q;
}

std::vector<double> source_counts(std::span<const CorpusSource> sources, SourceWeighting weighting) {
  std::vector<double> out;
  for (const auto& s : sources) {
    out.push_back(static_cast<double>(weighting == SourceWeighting::documents ? s.documents.size() : s.token_count));
  }
  return out;
}

BatchSampler::BatchSampler(std::vector<std::size_t> source_sizes, std::vector<double> probs, std::uint64_t seed)
    : sizes_(std::move(source_sizes)), rng_(seed) {
  if (sizes_.size() != probs.size()) throw std::invalid_argument("batch sampler: one probability per source");
  bool any = false;
  for (std::size_t i = 0; i < sizes_.size(); ++i) {
    if (sizes_[i] == 0) probs[i] = 0.0;
    any = any || (sizes_[i] > 0 && probs[i] > 0.0);
  }
  if (!any) throw std::invalid_argument("batch sampler: all sources are empty");
  pick_ = std::discrete_distribution<std::size_t>(probs.begin(), probs.end());
}

SampledBatch BatchSampler::next(std::size_t batch_size) {
  SampledBatch out;
  out.source = pick_(rng_);
  const std::size_t n = sizes_[out.source];
  if (n < batch_size) {
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    for (std::size_t i = 0; i < batch_size; ++i) out.items.push_back(any(rng_));
    return out;
  }
  // Partial Fisher-Yates over a sparse permutation.
  std::unordered_map<std::size_t, std::size_t> swapped;
  auto slot = [&](std::size_t i) {
    auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng_);
    const std::size_t vi = slot(i), vj = slot(j);
    out.items.push_back(vj);
    swapped[j] = vi;
  }
  return out;
}

MaskedTokens mlm_mask(std::span<const std::int32_t> ids, double mask_prob, std::size_t random_limit,
                      std::mt19937_64& rng) {
  if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw std::invalid_argument("mlm_mask: probability outside [0, 1]");
  if (random_limit <= static_cast<std::size_t>(kNumSpecialTokens)) {
    throw std::invalid_argument("mlm_mask: no non-special ids to draw from");
  }
  MaskedTokens out;
  out.ids.assign(ids.begin(), ids.end());
  std::bernoulli_distribution select(mask_prob);
  std::uniform_real_distribution<double> action(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> random_id(kNumSpecialTokens, static_cast<std::int32_t>(random_limit) - 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (is_special_token(ids[i]) || !select(rng)) continue;
    out.positions.push_back(i);
    out.labels.push_back(ids[i]);
    const double a = action(rng);
    if (a < 0.8) {
      out.ids[i] = kMaskId;
    } else if (a < 0.9) {
      out.ids[i] = random_id(rng);
    }
  }
  return out;
}

MaskedTokens mlm_mask(std::span<const std::int32_t> ids, double mask_prob, std::size_t random_limit,
                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return mlm_mask(ids, mask_prob, random_limit, rng);
}

MaskedTokens mlm_mask(const UnpaddedBatch& batch, double mask_prob, std::size_t random_limit, std::mt19937_64& rng) {
  return mlm_mask(std::span<const std::int32_t>(batch.tokens), mask_prob, random_limit, rng);
}

std::vector<std::vector<std::int32_t>> chunk(std::span<const std::int32_t> ids, std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("chunk: max_len must be at least 2");
  std::vector<std::vector<std::int32_t>> out;
  for (std::size_t begin = 0; begin < ids.size(); begin += max_len) {
    const auto piece = ids.subspan(begin, std::min(max_len, ids.size() - begin));
    out.emplace_back(piece.begin(), piece.end());
  }
  return out;
}

std::vector<std::size_t> downsample_short(std::span<const std::size_t> lengths, std::size_t length_floor,
                                          double keep_prob, std::uint64_t seed) {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw std::invalid_argument("downsample: keep_prob outside [0, 1]");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(keep_prob);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] >= length_floor || keep(rng)) kept.push_back(i);
  }
  return kept;
}

}  // namespace lcret
