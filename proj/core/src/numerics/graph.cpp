#include "lcret/numerics/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lcret/numerics/kernels.hpp"

namespace lcret {

std::uint64_t AttentionBlocks::scored_pairs() const noexcept {
  std::uint64_t total = 0;
  for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
    const std::uint64_t len = offsets[b + 1] - offsets[b];
    total += len * len;
  }
  return total;
}

void AttentionBlocks::validate(std::size_t total_rows) const {
  if (offsets.size() != key_lengths.size() + 1 || offsets.empty() || offsets.front() != 0) {
    throw ShapeError("attention blocks need B+1 offsets starting at 0");
  }
  if (offsets.back() != total_rows) {
    throw ShapeError("attention blocks cover " + std::to_string(offsets.back()) + " rows, stream has " +
                     std::to_string(total_rows));
  }
  for (std::size_t b = 0; b < count(); ++b) {
    if (offsets[b + 1] <= offsets[b]) throw ShapeError("attention block " + std::to_string(b) + " is empty");
    if (key_lengths[b] == 0 || key_lengths[b] > block_length(b)) {
      throw ShapeError("attention block " + std::to_string(b) + " has invalid key length");
    }
  }
}

namespace {

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw ShapeError(std::string(op) + ": " + what);
}

}  // namespace

template <Real T>
Var Graph<T>::push(Tensor<T> value, std::string_view op, bool requires_grad) {
  require_finite<T>(value.values(), op);
  if (nodes_.size() >= Var::npos) throw std::length_error("graph node limit reached");
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.requires_grad = recording_ && requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <Real T>
void Graph<T>::check(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("invalid graph variable");
}

template <Real T>
std::span<T> Graph<T>::grad_buffer(Var v) {
  auto& n = nodes_[v.id];
  if (n.grad.empty()) n.grad.assign(val(v).size(), T{0});
  return n.grad;
}

template <Real T>
Var Graph<T>::constant(Tensor<T> value) {
  return push(std::move(value), "constant", false);
}

template <Real T>
Var Graph<T>::input(Tensor<T> value) {
  return push(std::move(value), "input", true);
}

template <Real T>
Var Graph<T>::param(Tensor<T>& tensor) {
  if (auto it = bound_.find(&tensor); it != bound_.end()) return it->second;
  require_finite<T>(tensor.values(), "param");
  Node n;
  n.ref = &tensor;
  n.param = &tensor;
  n.op = "param";
  n.requires_grad = recording_ && tensor.requires_grad();
  nodes_.push_back(std::move(n));
  Var v{static_cast<std::uint32_t>(nodes_.size() - 1)};
  bound_.emplace(&tensor, v);
  return v;
}

template <Real T>
Var Graph<T>::frozen(const Tensor<T>& tensor) {
  if (auto it = bound_.find(&tensor); it != bound_.end()) return it->second;
  require_finite<T>(tensor.values(), "frozen");
  Node n;
  n.ref = &tensor;
  n.op = "frozen";
  nodes_.push_back(std::move(n));
  Var v{static_cast<std::uint32_t>(nodes_.size() - 1)};
  bound_.emplace(&tensor, v);
  return v;
}

template <Real T>
const Tensor<T>& Graph<T>::value(Var v) const {
  check(v);
  return val(v);
}

template <Real T>
std::span<const T> Graph<T>::grad(Var v) const {
  check(v);
  return nodes_[v.id].grad;
}

template <Real T>
std::string_view Graph<T>::op_name(Var v) const {
  check(v);
  return nodes_[v.id].op;
}

template <Real T>
Var Graph<T>::matmul(Var a, Var b) {
  check(a);
  check(b);
  const auto& A = val(a);
  const auto& B = val(b);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  require(B.rows() == k, "matmul", "inner extents " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor<T> out({m, n});
  kernels::gemm_acc(A.data(), B.data(), out.data(), m, k, n);
  Var o = push(std::move(out), "matmul", needs_grad(a) || needs_grad(b));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o, m, k, n] {
      const T* g = out_grad(o.id).data();
      if (needs_grad(a)) kernels::gemm_nt_acc(g, val(b).data(), grad_buffer(a).data(), m, n, k);
      if (needs_grad(b)) kernels::gemm_tn_acc(val(a).data(), g, grad_buffer(b).data(), m, k, n);
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::add(Var a, Var b) {
  check(a);
  check(b);
  const auto& A = val(a);
  const auto& B = val(b);
  const bool same = A.size() == B.size() && (A.shape() == B.shape() || B.rows() == A.rows());
  const bool row_bcast = !same && B.size() == A.cols() && B.rows() <= 1;
  require(same || row_bcast, "add", "incompatible shapes " + shape_str(A.shape()) + " + " + shape_str(B.shape()));
  Tensor<T> out = A.reshaped(A.rank() >= 2 ? A.shape() : Shape{A.rows(), A.cols()});
  const std::size_t cols = A.cols();
  auto ov = out.values();
  const auto bv = B.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += same ? bv[i] : bv[i % cols];
  Var o = push(std::move(out), "add", needs_grad(a) || needs_grad(b));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o, same, cols] {
      const auto g = out_grad(o.id);
      if (needs_grad(a)) {
        auto ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (needs_grad(b)) {
        auto gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[same ? i : i % cols] += g[i];
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::mul(Var a, Var b) {
  check(a);
  check(b);
  const auto& A = val(a);
  const auto& B = val(b);
  const std::size_t rows = A.rows(), cols = A.cols();
  enum class Mode { same, row, col } mode;
  if (A.size() == B.size() && (A.shape() == B.shape() || B.rows() == rows)) {
    mode = Mode::same;
  } else if (B.size() == cols && B.rows() <= 1) {
    mode = Mode::row;
  } else if (B.cols() == 1 && B.rows() == rows) {
    mode = Mode::col;
  } else {
    throw ShapeError("mul: incompatible shapes " + shape_str(A.shape()) + " * " + shape_str(B.shape()));
  }
  auto index = [mode, cols](std::size_t i) {
    switch (mode) {
      case Mode::same: return i;
      case Mode::row: return i % cols;
      default: return i / cols;
    }
  };
  Tensor<T> out = A.reshaped(A.rank() >= 2 ? A.shape() : Shape{rows, cols});
  auto ov = out.values();
  const auto bv = B.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] *= bv[index(i)];
  Var o = push(std::move(out), "mul", needs_grad(a) || needs_grad(b));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, b, o, index] {
      const auto g = out_grad(o.id);
      const auto av = val(a).values();
      const auto bv = val(b).values();
      if (needs_grad(a)) {
        auto ga = grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[index(i)];
      }
      if (needs_grad(b)) {
        auto gb = grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[index(i)] += g[i] * av[i];
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::scale(Var a, T factor) {
  check(a);
  const auto& A = val(a);
  Tensor<T> out = A.reshaped(A.rank() >= 2 ? A.shape() : Shape{A.rows(), A.cols()});
  for (auto& x : out.values()) x *= factor;
  Var o = push(std::move(out), "scale", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, factor] {
      const auto g = out_grad(o.id);
      auto ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::relu(Var a) {
  check(a);
  const auto& A = val(a);
  Tensor<T> out({A.rows(), A.cols()});
  const auto av = A.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > T{0} ? av[i] : T{0};
  Var o = push(std::move(out), "relu", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o] {
      const auto g = out_grad(o.id);
      const auto av = val(a).values();
      auto ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (av[i] > T{0}) ga[i] += g[i];
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::gelu(Var a) {
  check(a);
  const auto& A = val(a);
  Tensor<T> out({A.rows(), A.cols()});
  const auto av = A.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = kernels::gelu(av[i]);
  Var o = push(std::move(out), "gelu", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o] {
      const auto g = out_grad(o.id);
      const auto av = val(a).values();
      auto ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * kernels::gelu_grad(av[i]);
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::softmax(Var a) {
  check(a);
  const auto& A = val(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = A.row(r);
    auto y = out.row(r);
    const T m = *std::max_element(in.begin(), in.end());
    T s{0};
    for (std::size_t c = 0; c < cols; ++c) s += (y[c] = std::exp(in[c] - m));
    for (auto& v : y) v /= s;
  }
  Var o = push(std::move(out), "softmax", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, rows, cols] {
      const auto g = out_grad(o.id);
      const auto& Y = val(o);
      auto ga = grad_buffer(a);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto y = Y.row(r);
        const T* gr = g.data() + r * cols;
        T dotp{0};
        for (std::size_t c = 0; c < cols; ++c) dotp += gr[c] * y[c];
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += y[c] * (gr[c] - dotp);
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::log_softmax(Var a) {
  check(a);
  const auto& A = val(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const auto in = A.row(r);
    auto y = out.row(r);
    const T m = *std::max_element(in.begin(), in.end());
    T s{0};
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(in[c] - m);
    const T lse = m + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) y[c] = in[c] - lse;
  }
  Var o = push(std::move(out), "log_softmax", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, rows, cols] {
      const auto g = out_grad(o.id);
      const auto& Y = val(o);
      auto ga = grad_buffer(a);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto y = Y.row(r);
        const T* gr = g.data() + r * cols;
        T gsum{0};
        for (std::size_t c = 0; c < cols; ++c) gsum += gr[c];
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += gr[c] - std::exp(y[c]) * gsum;
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::layer_norm(Var a, T eps) {
  check(a);
  const auto& A = val(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out({rows, cols});
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto x = A.row(r);
    auto y = out.row(r);
    T mu{0};
    for (auto v : x) mu += v;
    mu /= static_cast<T>(cols);
    T var{0};
    for (auto v : x) var += (v - mu) * (v - mu);
    var /= static_cast<T>(cols);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) y[c] = (x[c] - mu) * inv_std[r];
  }
  Var o = push(std::move(out), "layer_norm", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, rows, cols, inv_std = std::move(inv_std)] {
      const auto g = out_grad(o.id);
      const auto& Y = val(o);
      auto ga = grad_buffer(a);
      const T n = static_cast<T>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto y = Y.row(r);
        const T* gr = g.data() + r * cols;
        T gmean{0}, gy{0};
        for (std::size_t c = 0; c < cols; ++c) {
          gmean += gr[c];
          gy += gr[c] * y[c];
        }
        gmean /= n;
        gy /= n;
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += inv_std[r] * (gr[c] - gmean - y[c] * gy);
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::l2_normalize(Var a) {
  check(a);
  const auto& A = val(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out({rows, cols});
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto x = A.row(r);
    norms[r] = std::sqrt(kernels::dot(x.data(), x.data(), cols));
    if (!(norms[r] > T{0})) throw NumericError("l2_normalize: row " + std::to_string(r) + " has zero norm");
    auto y = out.row(r);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] / norms[r];
  }
  Var o = push(std::move(out), "l2_normalize", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, rows, cols, norms = std::move(norms)] {
      const auto g = out_grad(o.id);
      const auto& Y = val(o);
      auto ga = grad_buffer(a);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto y = Y.row(r);
        const T* gr = g.data() + r * cols;
        const T proj = kernels::dot(gr, y.data(), cols);
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += (gr[c] - y[c] * proj) / norms[r];
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::embedding(Var table, std::span<const std::int32_t> ids) {
  check(table);
  const auto& E = val(table);
  const std::size_t vocab = E.rows(), width = E.cols();
  Tensor<T> out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
    const auto src = E.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  Var o = push(std::move(out), "embedding", needs_grad(table));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, table, o, width, idv = std::vector<std::int32_t>(ids.begin(), ids.end())] {
      const auto g = out_grad(o.id);
      auto gt = grad_buffer(table);
      for (std::size_t i = 0; i < idv.size(); ++i) {
        T* dst = gt.data() + static_cast<std::size_t>(idv[i]) * width;
        for (std::size_t c = 0; c < width; ++c) dst[c] += g[i * width + c];
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::gather_rows(Var a, std::span<const std::size_t> rows) {
  check(a);
  const auto& A = val(a);
  const std::size_t width = A.cols();
  Tensor<T> out({rows.size(), width});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= A.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " of " + std::to_string(A.rows()));
    }
    const auto src = A.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  Var o = push(std::move(out), "gather_rows", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, width, idx = std::vector<std::size_t>(rows.begin(), rows.end())] {
      const auto g = out_grad(o.id);
      auto ga = grad_buffer(a);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t c = 0; c < width; ++c) ga[idx[i] * width + c] += g[i * width + c];
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::slice_rows(Var a, std::size_t begin, std::size_t end) {
  check(a);
  const auto& A = val(a);
  require(begin <= end && end <= A.rows(), "slice_rows", "range out of bounds");
  const std::size_t width = A.cols();
  Tensor<T> out({end - begin, width});
  std::copy(A.values().begin() + begin * width, A.values().begin() + end * width, out.values().begin());
  Var o = push(std::move(out), "slice_rows", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, begin, width] {
      const auto g = out_grad(o.id);
      auto ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * width + i] += g[i];
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::slice_cols(Var a, std::size_t begin, std::size_t end) {
  check(a);
  const auto& A = val(a);
  require(begin <= end && end <= A.cols(), "slice_cols", "range out of bounds");
  const std::size_t rows = A.rows(), cols = A.cols(), w = end - begin;
  Tensor<T> out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data() + r * cols + begin, w, out.data() + r * w);
  }
  Var o = push(std::move(out), "slice_cols", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, rows, cols, begin, w] {
      const auto g = out_grad(o.id);
      auto ga = grad_buffer(a);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  std::size_t rows = 0;
  const std::size_t width = val(parts[0]).cols();
  bool any_grad = false;
  for (Var p : parts) {
    check(p);
    require(val(p).cols() == width, "concat_rows", "column count mismatch");
    rows += val(p).rows();
    any_grad = any_grad || needs_grad(p);
  }
  Tensor<T> out({rows, width});
  std::size_t at = 0;
  for (Var p : parts) {
    const auto v = val(p).values();
    std::copy(v.begin(), v.end(), out.values().begin() + at);
    at += v.size();
  }
  Var o = push(std::move(out), "concat_rows", any_grad);
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, o, ps = std::vector<Var>(parts.begin(), parts.end())] {
      const auto g = out_grad(o.id);
      std::size_t at = 0;
      for (Var p : ps) {
        const std::size_t n = val(p).size();
        if (needs_grad(p)) {
          auto gp = grad_buffer(p);
          for (std::size_t i = 0; i < n; ++i) gp[i] += g[at + i];
        }
        at += n;
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no inputs");
  const std::size_t rows = val(parts[0]).rows();
  std::size_t width = 0;
  bool any_grad = false;
  for (Var p : parts) {
    check(p);
    require(val(p).rows() == rows, "concat_cols", "row count mismatch");
    width += val(p).cols();
    any_grad = any_grad || needs_grad(p);
  }
  Tensor<T> out({rows, width});
  std::size_t at = 0;
  for (Var p : parts) {
    const auto& P = val(p);
    const std::size_t w = P.cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(P.data() + r * w, w, out.data() + r * width + at);
    at += w;
  }
  Var o = push(std::move(out), "concat_cols", any_grad);
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, o, rows, width, ps = std::vector<Var>(parts.begin(), parts.end())] {
      const auto g = out_grad(o.id);
      std::size_t at = 0;
      for (Var p : ps) {
        const std::size_t w = val(p).cols();
        if (needs_grad(p)) {
          auto gp = grad_buffer(p);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * width + at + c];
          }
        }
        at += w;
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::transpose(Var a) {
  check(a);
  const auto& A = val(a);
  const std::size_t rows = A.rows(), cols = A.cols();
  Tensor<T> out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = A[r * cols + c];
  }
  Var o = push(std::move(out), "transpose", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, rows, cols] {
      const auto g = out_grad(o.id);
      auto ga = grad_buffer(a);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += g[c * rows + r];
      }
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::sum(Var a) {
  check(a);
  T s{0};
  for (auto v : val(a).values()) s += v;
  Var o = push(Tensor<T>::scalar(s), "sum", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o] {
      const T g = out_grad(o.id)[0];
      for (auto& x : grad_buffer(a)) x += g;
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::mean(Var a) {
  check(a);
  const std::size_t n = val(a).size();
  require(n > 0, "mean", "empty input");
  T s{0};
  for (auto v : val(a).values()) s += v;
  Var o = push(Tensor<T>::scalar(s / static_cast<T>(n)), "mean", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, n] {
      const T g = out_grad(o.id)[0] / static_cast<T>(n);
      for (auto& x : grad_buffer(a)) x += g;
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::pick(Var a, std::span<const std::size_t> cols) {
  check(a);
  const auto& A = val(a);
  require(cols.size() == A.rows(), "pick", "need one column index per row");
  const std::size_t width = A.cols();
  Tensor<T> out({cols.size(), 1});
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= width) throw std::out_of_range("pick: column " + std::to_string(cols[r]) + " of " + std::to_string(width));
    out[r] = A[r * width + cols[r]];
  }
  Var o = push(std::move(out), "pick", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, width, idx = std::vector<std::size_t>(cols.begin(), cols.end())] {
      const auto g = out_grad(o.id);
      auto ga = grad_buffer(a);
      for (std::size_t r = 0; r < idx.size(); ++r) ga[r * width + idx[r]] += g[r];
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::rotary(Var a, std::span<const std::size_t> positions, double base, std::size_t head_size) {
  check(a);
  const auto& A = val(a);
  const std::size_t rows = A.rows(), width = A.cols();
  require(head_size > 0 && head_size % 2 == 0, "rotary", "head size must be even");
  require(width % head_size == 0, "rotary", "width must be a multiple of the head size");
  require(positions.size() == rows, "rotary", "need one position per row");
  require(base > 0, "rotary", "base must be positive");
  const auto inv_freq = kernels::rotary_inv_freq(base, head_size);
  Tensor<T> out = A.reshaped({rows, width});
  kernels::rotary_rotate(out.data(), rows, width, positions, std::span<const double>(inv_freq), head_size, 1.0);
  Var o = push(std::move(out), "rotary", needs_grad(a));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, a, o, rows, width, head_size, inv_freq,
                             pos = std::vector<std::size_t>(positions.begin(), positions.end())] {
      std::vector<T> g(out_grad(o.id).begin(), out_grad(o.id).end());
      kernels::rotary_rotate(g.data(), rows, width, std::span<const std::size_t>(pos),
                             std::span<const double>(inv_freq), head_size, -1.0);
      auto ga = grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::attention(Var q, Var k, Var v, const AttentionBlocks& blocks, std::size_t num_heads) {
  check(q);
  check(k);
  check(v);
  const auto& Q = val(q);
  const auto& K = val(k);
  const auto& V = val(v);
  const std::size_t rows = Q.rows(), width = Q.cols();
  require(K.rows() == rows && V.rows() == rows && K.cols() == width && V.cols() == width, "attention",
          "q, k, v shapes differ");
  require(num_heads > 0 && width % num_heads == 0, "attention", "width not divisible by head count");
  blocks.validate(rows);
  const std::size_t hs = width / num_heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hs));

  Tensor<T> out({rows, width});
  std::vector<T> lse(rows * num_heads);
  std::size_t max_keys = 0;
  for (std::size_t b = 0; b < blocks.count(); ++b) max_keys = std::max(max_keys, blocks.key_lengths[b]);
  std::vector<T> p(max_keys);

  for (std::size_t b = 0; b < blocks.count(); ++b) {
    const std::size_t start = blocks.offsets[b], stop = blocks.offsets[b + 1], nk = blocks.key_lengths[b];
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t off = h * hs;
      for (std::size_t i = start; i < stop; ++i) {
        const T* qi = Q.data() + i * width + off;
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
          p[j] = kernels::dot(qi, K.data() + (start + j) * width + off, hs) * scale;
          m = std::max(m, p[j]);
        }
        T s{0};
        for (std::size_t j = 0; j < nk; ++j) s += (p[j] = std::exp(p[j] - m));
        T* oi = out.data() + i * width + off;
        const T inv = T(1) / s;
        for (std::size_t j = 0; j < nk; ++j) {
          const T w = p[j] * inv;
          const T* vj = V.data() + (start + j) * width + off;
          for (std::size_t c = 0; c < hs; ++c) oi[c] += w * vj[c];
        }
        lse[i * num_heads + h] = m + std::log(s);
      }
    }
  }

  Var o = push(std::move(out), "attention", needs_grad(q) || needs_grad(k) || needs_grad(v));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, q, k, v, o, blocks, num_heads, hs, width, scale, max_keys,
                             lse = std::move(lse)] {
      const auto g = out_grad(o.id);
      const auto& Q = val(q);
      const auto& K = val(k);
      const auto& V = val(v);
      std::vector<T> dq(Q.size(), T{0}), dk(K.size(), T{0}), dv(V.size(), T{0});
      std::vector<T> p(max_keys), dp(max_keys);
      for (std::size_t b = 0; b < blocks.count(); ++b) {
        const std::size_t start = blocks.offsets[b], stop = blocks.offsets[b + 1], nk = blocks.key_lengths[b];
        for (std::size_t h = 0; h < num_heads; ++h) {
          const std::size_t off = h * hs;
          for (std::size_t i = start; i < stop; ++i) {
            const T* qi = Q.data() + i * width + off;
            const T* gi = g.data() + i * width + off;
            const T l = lse[i * num_heads + h];
            T weighted{0};
            for (std::size_t j = 0; j < nk; ++j) {
              const std::size_t row = (start + j) * width + off;
              p[j] = std::exp(kernels::dot(qi, K.data() + row, hs) * scale - l);
              dp[j] = kernels::dot(gi, V.data() + row, hs);
              weighted += p[j] * dp[j];
              T* dvj = dv.data() + row;
              for (std::size_t c = 0; c < hs; ++c) dvj[c] += p[j] * gi[c];
            }
            T* dqi = dq.data() + i * width + off;
            for (std::size_t j = 0; j < nk; ++j) {
              const std::size_t row = (start + j) * width + off;
              const T ds = p[j] * (dp[j] - weighted) * scale;
              const T* kj = K.data() + row;
              T* dkj = dk.data() + row;
              for (std::size_t c = 0; c < hs; ++c) {
                dqi[c] += ds * kj[c];
                dkj[c] += ds * qi[c];
              }
            }
          }
        }
      }
      auto flush = [this](Var x, const std::vector<T>& d) {
        if (!needs_grad(x)) return;
        auto gx = grad_buffer(x);
        for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
      };
      flush(q, dq);
      flush(k, dk);
      flush(v, dv);
    };
  }
  return o;
}

template <Real T>
Var Graph<T>::segment_max(Var weights, std::span<const std::int32_t> ids, std::span<const std::size_t> offsets,
                          std::size_t num_slots) {
  check(weights);
  const auto& W = val(weights);
  require(W.cols() == 1 || W.rows() == 1, "segment_max", "weights must be a single column");
  require(ids.size() == W.size(), "segment_max", "need one id per weight");
  require(!offsets.empty() && offsets.front() == 0 && offsets.back() == ids.size(), "segment_max",
          "offsets must span the id list");
  const std::size_t segments = offsets.size() - 1;
  Tensor<T> out({segments, num_slots});
  std::vector<std::int64_t> argmax(segments * num_slots, -1);
  for (std::size_t b = 0; b < segments; ++b) {
    for (std::size_t r = offsets[b]; r < offsets[b + 1]; ++r) {
      if (ids[r] < 0) continue;
      const auto slot = static_cast<std::size_t>(ids[r]);
      if (slot >= num_slots) throw std::out_of_range("segment_max: id " + std::to_string(ids[r]) + " out of range");
      const std::size_t cell = b * num_slots + slot;
      if (argmax[cell] < 0 || W[r] > out[cell]) {
        out[cell] = W[r];
        argmax[cell] = static_cast<std::int64_t>(r);
      }
    }
  }
  Var o = push(std::move(out), "segment_max", needs_grad(weights));
  if (nodes_[o.id].requires_grad) {
    nodes_[o.id].backward = [this, weights, o, argmax = std::move(argmax)] {
      const auto g = out_grad(o.id);
      auto gw = grad_buffer(weights);
      for (std::size_t cell = 0; cell < argmax.size(); ++cell) {
        if (argmax[cell] >= 0) gw[static_cast<std::size_t>(argmax[cell])] += g[cell];
      }
    };
  }
  return o;
}

template <Real T>
void Graph<T>::backward(Var loss) {
  check(loss);
  if (!recording_) throw std::logic_error("backward() on a graph that does not record gradients");
  if (val(loss).size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(val(loss).shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (nodes_[loss.id].requires_grad) grad_buffer(loss)[0] = T{1};
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    require_finite<T>(n.grad, std::string(n.op) + " (gradient)");
    if (n.backward) n.backward();
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) continue;
    if (n.param) {
      auto dst = n.param->grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += n.grad[i];
    } else if (n.op == "input" && n.grad.empty()) {
      n.grad.assign(n.value.size(), T{0});
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace lcret
