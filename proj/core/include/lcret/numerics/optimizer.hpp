#pragma once

#include <cstddef>
#include <string>
#include <deque>
#include <vector>

#include "lcret/numerics/checkpoint.hpp"
#include "lcret/numerics/tensor.hpp"

namespace lcret {

/// Named trainable tensors in registration order.
template <Real T>
class ParameterSet {
 public:
  Tensor<T>& add(std::string name, Tensor<T> tensor);
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const noexcept;

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const noexcept;
  const std::string& name(std::size_t i) const { return entries_[i].name; }
  Tensor<T>& tensor(std::size_t i) { return entries_[i].tensor; }
  const Tensor<T>& tensor(std::size_t i) const { return entries_[i].tensor; }

  void zero_grad();
  void store(Checkpoint& ckpt) const;
  /// Overwrites every registered tensor from `ckpt`; shapes must match.
  void load(const Checkpoint& ckpt);

 private:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
  };
  std::deque<Entry> entries_;  // stable addresses for graph binding
};

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 1e-5;
  double warmup_ratio = 0.06;
  std::size_t total_steps = 0;  // 0 disables the schedule
};

/// Adam with weight decay folded into the gradient (coupled L2) and a linear
/// warm-up / linear decay learning-rate schedule.
template <Real T>
class Adam {
 public:
  explicit Adam(AdamOptions options) : options_(options) {}

  /// Applies one update from the accumulated gradients, then zeroes them.
  void step(ParameterSet<T>& params);
  double current_lr() const noexcept;
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  AdamOptions options_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace lcret
