#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "lcret/encoder/config.hpp"
#include "lcret/encoder/unpad.hpp"
#include "lcret/numerics/checkpoint.hpp"
#include "lcret/numerics/graph.hpp"
#include "lcret/numerics/optimizer.hpp"

namespace lcret {

/// Rotates every head's (i, i + head_size/2) pair of `states` (T x heads*head_size)
/// by position * base^(-2i/head_size).
template <Real T>
Tensor<T> rope_apply(const Tensor<T>& states, std::span<const std::size_t> positions, double base,
                     std::size_t head_size);

template <Real T>
struct EncoderOutput {
  Tensor<T> token_hiddens;  // T_total x H
  Tensor<T> cls_hiddens;    // B x H, row b is token_hiddens[cu_seqlens[b]]
};

struct ForwardOptions {
  bool training = false;            // enables hidden-state dropout
  std::mt19937_64* rng = nullptr;   // dropout masks; required when training with dropout > 0
};

/// Post-norm RoPE transformer encoder over unpadded token streams with a
/// GELU-gated feed-forward block, plus the MLM, sparse and rerank heads.
///
/// Parameters are named "embeddings.*", "layer.{i}.{attention|ffn}.*", "mlm.*" and
/// "head.{sparse|rerank}.weight". Weights are stored input-major: y = x W + b.
template <Real T>
class Encoder {
 public:
  struct Vars {
    Var tokens;  // T_total x H
    Var cls;     // B x H
  };

  explicit Encoder(EncoderConfig config, std::uint64_t seed = 0);

  const EncoderConfig& config() const noexcept { return config_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }

  /// Replaces the RoPE base (stage schedules, revNTK). Shapes are unaffected.
  void set_rope_base(double base);

  /// Records the forward pass of an unpadded batch. Attention never crosses
  /// cu_seqlens boundaries.
  Vars forward(Graph<T>& graph, const UnpaddedBatch& batch, const ForwardOptions& options = {});

  /// Reference forward over a padded batch x width grid with a key-padding
  /// mask. Returns batch*width x H hidden rows, pad rows included.
  Var forward_padded(Graph<T>& graph, std::span<const std::int32_t> grid, std::size_t batch, std::size_t width,
                     std::span<const std::size_t> lengths, const ForwardOptions& options = {});

  /// Inference-only forward; safe to call concurrently.
  EncoderOutput<T> encode(const UnpaddedBatch& batch) const;
  Tensor<T> encode_padded(std::span<const std::int32_t> grid, std::size_t batch, std::size_t width,
                          std::span<const std::size_t> lengths) const;

  /// Vocabulary logits for the listed rows of `token_hiddens` only.
  Var mlm_logits(Graph<T>& graph, Var token_hiddens, std::span<const std::size_t> masked_rows);
  Tensor<T> mlm_logits(const EncoderOutput<T>& output, std::span<const std::size_t> masked_rows) const;

  const Tensor<T>& sparse_weight() const { return params_.at("head.sparse.weight"); }
  const Tensor<T>& rerank_weight() const { return params_.at("head.rerank.weight"); }
  Tensor<T>& sparse_weight() { return params_.at("head.sparse.weight"); }
  Tensor<T>& rerank_weight() { return params_.at("head.rerank.weight"); }

  Checkpoint to_checkpoint() const;
  static Encoder from_checkpoint(const Checkpoint& ckpt);

 private:
  template <class Bind>
  Var run_stream(Graph<T>& graph, Bind&& bind, std::span<const std::int32_t> tokens,
                 std::span<const std::size_t> positions, const AttentionBlocks& blocks,
                 const ForwardOptions& options) const;
  template <class Bind>
  Var run_mlm_head(Graph<T>& graph, Bind&& bind, Var token_hiddens, std::span<const std::size_t> masked_rows) const;

  EncoderConfig config_;
  ParameterSet<T> params_;
};

/// Writes/reads the configuration as the "meta.encoder_config" array.
void store_config(Checkpoint& ckpt, const EncoderConfig& config);
EncoderConfig load_config(const Checkpoint& ckpt);

/// FLOPs (2 per multiply-add) of the transformer layers over sequences of the
/// given lengths. With padded_width > 0 every sequence occupies that many rows
/// and attention spans the full width x width grid.
std::uint64_t forward_flops(const EncoderConfig& config, std::span<const std::size_t> lengths,
                            std::size_t padded_width = 0);

extern template class Encoder<float>;
extern template class Encoder<double>;

}  // namespace lcret
