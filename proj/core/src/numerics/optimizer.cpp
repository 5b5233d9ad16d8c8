#include "lcret/numerics/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace lcret {

template <Real T>
Tensor<T>& ParameterSet<T>::add(std::string name, Tensor<T> tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  tensor.set_requires_grad(true);
  entries_.push_back({std::move(name), std::move(tensor)});
  return entries_.back().tensor;
}

template <Real T>
Tensor<T>& ParameterSet<T>::at(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

template <Real T>
const Tensor<T>& ParameterSet<T>::at(const std::string& name) const {
  return const_cast<ParameterSet*>(this)->at(name);
}

template <Real T>
bool ParameterSet<T>::contains(const std::string& name) const noexcept {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

template <Real T>
std::size_t ParameterSet<T>::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

template <Real T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <Real T>
void ParameterSet<T>::store(Checkpoint& ckpt) const {
  for (const auto& e : entries_) ckpt.put(e.name, e.tensor);
}

template <Real T>
void ParameterSet<T>::load(const Checkpoint& ckpt) {
  for (auto& e : entries_) {
    Tensor<T> t = ckpt.get<T>(e.name);
    if (t.shape() != e.tensor.shape()) {
      throw FormatError("parameter '" + e.name + "' has shape " + shape_str(t.shape()) + ", expected " +
                        shape_str(e.tensor.shape()));
    }
    std::copy(t.values().begin(), t.values().end(), e.tensor.values().begin());
  }
}

template <Real T>
double Adam<T>::current_lr() const noexcept {
  const auto& o = options_;
  if (o.total_steps == 0) return o.lr;
  const double step = static_cast<double>(std::max<std::size_t>(t_, 1));
  const double total = static_cast<double>(o.total_steps);
  const double warmup = std::max(1.0, std::floor(o.warmup_ratio * total));
  if (step <= warmup) return o.lr * step / warmup;
  return o.lr * std::max(0.0, (total - step) / std::max(1.0, total - warmup));
}

template <Real T>
void Adam<T>::step(ParameterSet<T>& params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params.tensor(i).size(), 0.0);
      v_[i].assign(params.tensor(i).size(), 0.0);
    }
  }
  ++t_;
  const auto& o = options_;
  const double lr = current_lr();
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& t = params.tensor(p);
    auto w = t.values();
    auto g = t.grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]) + o.weight_decay * static_cast<double>(w[i]);
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      w[i] -= static_cast<T>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps));
    }
    t.zero_grad();
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace lcret
