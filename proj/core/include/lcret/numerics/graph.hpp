#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lcret/numerics/tensor.hpp"

namespace lcret {

/// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  static constexpr std::uint32_t npos = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Row blocks of a flat token stream that attend only among themselves.
///
/// Block b covers rows [offsets[b], offsets[b+1]). Queries of block b attend to
/// the first key_lengths[b] rows of that block; the rest are masked out, which
/// is how a padded batch expresses its key-padding mask.
struct AttentionBlocks {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> key_lengths;

  std::size_t count() const noexcept { return key_lengths.size(); }
  std::size_t block_length(std::size_t b) const { return offsets[b + 1] - offsets[b]; }
  /// Query-key pairs scored per head: the sum of squared block lengths.
  std::uint64_t scored_pairs() const noexcept;
  void validate(std::size_t total_rows) const;
};

/// Tape-based reverse-mode differentiation over a fixed primitive set.
///
/// Nodes are appended in creation order, which is a valid topological order, so
/// backward() is a single reverse sweep. A graph belongs to one thread.
/// Every primitive checks its output for NaN/Inf and throws NumericError naming
/// itself.
template <Real T>
class Graph {
 public:
  explicit Graph(bool record_gradients = true) : recording_(record_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Leaf that never receives a gradient.
  Var constant(Tensor<T> value);
  /// Owned leaf that receives a gradient, readable through grad().
  Var input(Tensor<T> value);
  /// Leaf bound to an external tensor. backward() adds into tensor.grad().
  /// Binding the same tensor twice returns the same node.
  Var param(Tensor<T>& tensor);
  /// Leaf bound to an external tensor that never receives a gradient.
  Var frozen(const Tensor<T>& tensor);

  const Tensor<T>& value(Var v) const;
  /// Gradient of the last backward() w.r.t. `v`; empty if none was recorded.
  std::span<const T> grad(Var v) const;
  std::string_view op_name(Var v) const;

  Var matmul(Var a, Var b);
  /// Elementwise sum; `b` may also be a single row broadcast over the rows of `a`.
  Var add(Var a, Var b);
  /// Elementwise product; `b` may be a single row or a single column broadcast over `a`.
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  Var relu(Var a);
  Var gelu(Var a);
  Var softmax(Var a);
  Var log_softmax(Var a);
  Var layer_norm(Var a, T eps = T(1e-5));
  Var l2_normalize(Var a);
  Var embedding(Var table, std::span<const std::int32_t> ids);
  Var gather_rows(Var a, std::span<const std::size_t> rows);
  Var slice_rows(Var a, std::size_t begin, std::size_t end);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var concat_rows(std::span<const Var> parts);
  Var concat_cols(std::span<const Var> parts);
  Var transpose(Var a);
  Var sum(Var a);
  Var mean(Var a);
  /// out[i, 0] = a[i, cols[i]].
  Var pick(Var a, std::span<const std::size_t> cols);
  /// Rotary position rotation of each head's (i, i + head_size/2) dimension pairs.
  Var rotary(Var a, std::span<const std::size_t> positions, double base, std::size_t head_size);
  /// Scaled dot-product attention restricted to the diagonal blocks of `blocks`.
  Var attention(Var q, Var k, Var v, const AttentionBlocks& blocks, std::size_t num_heads);
  /// Per-block maximum of a column of weights keyed by id:
  /// out[b, id] = max over rows r of block b with ids[r] == id of weights[r].
  /// Rows with a negative id are skipped; absent ids are 0.
  Var segment_max(Var weights, std::span<const std::int32_t> ids, std::span<const std::size_t> offsets,
                  std::size_t num_slots);

  /// Reverse sweep from a scalar loss. Populates gradients of every
  /// gradient-requiring leaf and accumulates into bound parameter tensors.
  void backward(Var loss);

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Tensor<T>* param = nullptr;
    std::vector<T> grad;
    std::function<void()> backward;
    std::string_view op;
    bool requires_grad = false;
  };

  const Tensor<T>& val(Var v) const { return nodes_[v.id].ref ? *nodes_[v.id].ref : nodes_[v.id].value; }
  bool needs_grad(Var v) const { return recording_ && nodes_[v.id].requires_grad; }
  std::span<T> grad_buffer(Var v);
  std::span<const T> out_grad(std::uint32_t id) const { return nodes_[id].grad; }
  Var push(Tensor<T> value, std::string_view op, bool requires_grad);
  void check(Var v) const;

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<T>*, Var> bound_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace lcret
