#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lcret/numerics/graph.hpp"
#include "lcret/numerics/tensor.hpp"

namespace lcret {

/// A batch of variable-length sequences flattened into one token stream.
///
/// Sequence b occupies tokens [cu_seqlens[b], cu_seqlens[b+1]); positions
/// restart at 0 for every sequence.
struct UnpaddedBatch {
  std::vector<std::int32_t> tokens;
  std::vector<std::size_t> cu_seqlens{0};
  std::vector<std::size_t> positions;

  std::size_t batch_size() const noexcept { return cu_seqlens.empty() ? 0 : cu_seqlens.size() - 1; }
  std::size_t total_tokens() const noexcept { return tokens.size(); }
  std::size_t seq_length(std::size_t b) const { return cu_seqlens.at(b + 1) - cu_seqlens.at(b); }
  std::size_t max_length() const noexcept;
  std::span<const std::int32_t> sequence(std::size_t b) const {
    return std::span<const std::int32_t>(tokens).subspan(cu_seqlens.at(b), seq_length(b));
  }

  void append(std::span<const std::int32_t> sequence);
  static UnpaddedBatch from_sequences(const std::vector<std::vector<std::int32_t>>& sequences);

  /// Throws ShapeError unless offsets are strictly increasing from 0 to the
  /// token count and positions restart per sequence.
  void validate() const;
  /// Every sequence attends only to itself.
  AttentionBlocks attention_blocks() const;
};

/// Strips pad slots from a row-major batch x width id grid.
UnpaddedBatch unpad(std::span<const std::int32_t> grid, std::size_t batch, std::size_t width,
                    std::span<const std::size_t> lengths);

/// Scatters T_total x H rows back into a (B, width, H) grid with zeros at pad slots.
template <Real T>
Tensor<T> repad(const UnpaddedBatch& batch, const Tensor<T>& values, std::size_t width);

/// Blocks of a padded batch: every block spans `width` rows and attends to its
/// first lengths[b] keys.
AttentionBlocks padded_attention_blocks(std::span<const std::size_t> lengths, std::size_t width);

}  // namespace lcret
