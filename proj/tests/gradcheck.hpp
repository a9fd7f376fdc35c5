#pragma once

// Central finite-difference oracle used by the gradient tests. It only ever
// evaluates forward passes, so it stays independent of the backward code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "crowdscale/tensor.hpp"

namespace crowdscale::oracle {

// |a - b| / max(|a|, |b|, floor); the floor keeps gradients that are zero
// up to round-off from producing meaningless ratios.
inline double relative_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// (f(x + eps) - f(x - eps)) / (2 eps), perturbing `slot` in place.
inline double central_difference(const std::function<double()>& f, double& slot, double eps = 1e-4) {
  const double saved = slot;
  slot = saved + eps;
  const double up = f();
  slot = saved - eps;
  const double down = f();
  slot = saved;
  return (up - down) / (2.0 * eps);
}

// Central difference that shrinks the step while the one-sided slopes
// disagree, i.e. while x +- eps straddles a ReLU or max-pool switch.
inline double smooth_central_difference(const std::function<double()>& f, double& slot, double eps = 1e-6,
                                        double min_eps = 1e-9) {
  const double saved = slot;
  const double mid = f();
  for (;; eps /= 4.0) {
    slot = saved + eps;
    const double up = f();
    slot = saved - eps;
    const double down = f();
    slot = saved;
    const double fwd = (up - mid) / eps, bwd = (mid - down) / eps;
    if (std::abs(fwd - bwd) <= 1e-3 * std::max(std::abs(fwd), std::abs(bwd)) + 1e-7 || eps / 4.0 < min_eps) {
      return (up - down) / (2.0 * eps);
    }
  }
}

inline Tensor4<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor4<double> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

}  // namespace crowdscale::oracle
