#include "lcret/encoder/unpad.hpp"

#include <algorithm>
#include <string>

namespace lcret {

std::size_t UnpaddedBatch::max_length() const noexcept {
  std::size_t m = 0;
  for (std::size_t b = 0; b + 1 < cu_seqlens.size(); ++b) m = std::max(m, cu_seqlens[b + 1] - cu_seqlens[b]);
  return m;
}

void UnpaddedBatch::append(std::span<const std::int32_t> sequence) {
  if (sequence.empty()) throw ShapeError("unpadded batch: sequences must be non-empty");
  if (cu_seqlens.empty()) cu_seqlens.push_back(0);
  tokens.insert(tokens.end(), sequence.begin(), sequence.end());
  for (std::size_t p = 0; p < sequence.size(); ++p) positions.push_back(p);
  cu_seqlens.push_back(tokens.size());
}

UnpaddedBatch UnpaddedBatch::from_sequences(const std::vector<std::vector<std::int32_t>>& sequences) {
  UnpaddedBatch batch;
  for (const auto& s : sequences) batch.append(s);
  return batch;
}

void UnpaddedBatch::validate() const {
  if (cu_seqlens.empty() || cu_seqlens.front() != 0) throw ShapeError("cu_seqlens must start at 0");
  if (cu_seqlens.back() != tokens.size()) {
    throw ShapeError("cu_seqlens ends at " + std::to_string(cu_seqlens.back()) + " but stream has " +
                     std::to_string(tokens.size()) + " tokens");
  }
  if (positions.size() != tokens.size()) throw ShapeError("positions length differs from token count");
  for (std::size_t b = 0; b + 1 < cu_seqlens.size(); ++b) {
    if (cu_seqlens[b + 1] <= cu_seqlens[b]) {
      throw ShapeError("sequence " + std::to_string(b) + " is empty (cu_seqlens must strictly increase)");
    }
  }
}

AttentionBlocks UnpaddedBatch::attention_blocks() const {
  AttentionBlocks blocks;
  blocks.offsets = cu_seqlens;
  for (std::size_t b = 0; b < batch_size(); ++b) blocks.key_lengths.push_back(seq_length(b));
  return blocks;
}

UnpaddedBatch unpad(std::span<const std::int32_t> grid, std::size_t batch, std::size_t width,
                    std::span<const std::size_t> lengths) {
  if (grid.size() != batch * width) throw ShapeError("unpad: grid is not batch x width");
  if (lengths.size() != batch) throw ShapeError("unpad: need one length per row");
  UnpaddedBatch out;
  for (std::size_t b = 0; b < batch; ++b) {
    if (lengths[b] == 0) throw ShapeError("unpad: sequence " + std::to_string(b) + " has zero length");
    if (lengths[b] > width) {
      throw ShapeError("unpad: sequence " + std::to_string(b) + " length " + std::to_string(lengths[b]) +
                       " exceeds grid width " + std::to_string(width));
    }
    out.append(grid.subspan(b * width, lengths[b]));
  }
  return out;
}

template <Real T>
Tensor<T> repad(const UnpaddedBatch& batch, const Tensor<T>& values, std::size_t width) {
  if (values.rows() != batch.total_tokens()) {
    throw ShapeError("repad: " + std::to_string(values.rows()) + " rows for " +
                     std::to_string(batch.total_tokens()) + " tokens");
  }
  const std::size_t hidden = values.cols();
  Tensor<T> grid({batch.batch_size(), width, hidden});
  for (std::size_t b = 0; b < batch.batch_size(); ++b) {
    const std::size_t len = batch.seq_length(b);
    if (len > width) throw ShapeError("repad: sequence longer than grid width");
    const auto src = values.values().subspan(batch.cu_seqlens[b] * hidden, len * hidden);
    std::copy(src.begin(), src.end(), grid.values().begin() + b * width * hidden);
  }
  return grid;
}

AttentionBlocks padded_attention_blocks(std::span<const std::size_t> lengths, std::size_t width) {
  AttentionBlocks blocks;
  blocks.offsets.push_back(0);
  for (std::size_t len : lengths) {
    blocks.offsets.push_back(blocks.offsets.back() + width);
    blocks.key_lengths.push_back(len);
  }
  return blocks;
}

template Tensor<float> repad(const UnpaddedBatch&, const Tensor<float>&, std::size_t);
template Tensor<double> repad(const UnpaddedBatch&, const Tensor<double>&, std::size_t);

}  // namespace lcret
