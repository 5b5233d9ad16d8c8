#include "lcret/numerics/kernels.hpp"

namespace lcret::kernels {

std::vector<double> rotary_inv_freq(double base, std::size_t head_size) {
  std::vector<double> inv(head_size / 2);
  for (std::size_t i = 0; i < inv.size(); ++i) {
    inv[i] = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_size));
  }
  return inv;
}

}  // namespace lcret::kernels
