#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "lcret/numerics/tensor.hpp"

namespace lcret {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Reserved ids at the bottom of every vocabulary.
inline constexpr std::int32_t kClsId = 0;
inline constexpr std::int32_t kSepId = 1;
inline constexpr std::int32_t kPadId = 2;
inline constexpr std::int32_t kMaskId = 3;
inline constexpr std::int32_t kNumSpecialTokens = 4;

constexpr bool is_special_token(std::int32_t id) noexcept { return id >= 0 && id < kNumSpecialTokens; }

/// Smallest multiple of 64 that holds `vocab` ids.
constexpr std::size_t round_up_vocab(std::size_t vocab) noexcept { return (vocab + 63) / 64 * 64; }

struct EncoderConfig {
  std::size_t num_layers = 12;
  std::size_t hidden_size = 768;
  std::size_t num_heads = 12;
  std::size_t head_size = 64;
  std::size_t ffn_inner = 3072;
  std::size_t vocab_size = round_up_vocab(250002);
  double rope_base = 10000.0;
  std::size_t max_seq_len = 8192;
  double dropout = 0.1;
  double attention_dropout = 0.0;
  Precision precision = Precision::f32;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Base-size reference: 12 layers, hidden 768, 12 heads of 64, FFN 3072.
  static EncoderConfig base() { return {}; }
  /// Small configuration used for desk-scale training runs.
  static EncoderConfig toy(std::size_t vocab_size);

  bool operator==(const EncoderConfig&) const = default;
};

/// Copy of `config` with rope_base multiplied by `factor` (e.g. 1/8 shrinks a
/// 160000 base to 20000 for short-context contrastive training).
EncoderConfig context_scaling(const EncoderConfig& config, double factor);

}  // namespace lcret
