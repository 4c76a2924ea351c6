#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "memamba/tensor.hpp"

namespace memamba::testing {

// Central finite differences against reverse-mode gradients. `eval` must
// rebuild the forward pass from scratch (tape-free for the FD probes).
struct GradCheck {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
};

inline double rel_err(double autodiff, double fd) {
  return std::abs(autodiff - fd) / (std::abs(fd) + 1e-8);
}

// Checks d loss / d theta for every element of every parameter tensor.
// `loss_fn` computes the scalar loss with no tape installed.
inline GradCheck finite_difference_check(std::vector<Tensor>& params,
                                         const std::function<double()>& loss_fn,
                                         const std::function<double()>& loss_and_grad,
                                         double step = 1e-4) {
  for (Tensor& p : params) p.zero_grad();
  loss_and_grad();
  GradCheck result;
  for (Tensor& p : params) {
    for (std::int64_t i = 0; i < p.numel(); ++i) {
      double saved = p.at(i);
      p.at(i) = saved + step;
      double up = loss_fn();
      p.at(i) = saved - step;
      double down = loss_fn();
      p.at(i) = saved;
      double fd = (up - down) / (2.0 * step);
      double ad = p.has_grad() ? p.grad()[static_cast<std::size_t>(i)] : 0.0;
      result.max_rel_err = std::max(result.max_rel_err, rel_err(ad, fd));
      ++result.checked;
    }
  }
  return result;
}

}  // namespace memamba::testing
