// Independent reference implementations used only by tests: high-precision
// (256-bit MPFR) entropy/KL/softmax, a naive triple-loop matrix multiply, and
// a central-finite-difference gradient checker. None of these share code with
// the library paths they check.
#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include "midl/tensor.hpp"

namespace oracle {

double entropy(const std::vector<double>& p);
double kl(const std::vector<double>& p, const std::vector<double>& q);
std::vector<double> softmax(const std::vector<double>& logits);

midl::Tensor matmul_naive(const midl::Tensor& a, const midl::Tensor& b);

// Central differences d f / d theta_i at step h for a scalar function of a
// parameter tensor edited in place.
inline double central_diff(const std::function<double()>& f, double& theta, double h) {
  const double saved = theta;
  theta = saved + h;
  const double up = f();
  theta = saved - h;
  const double down = f();
  theta = saved;
  return (up - down) / (2.0 * h);
}

// Same stencil, noise-suppressed: median of 9 estimates with ppm-level step
// dither. For gradients near 1e-7 a single f(+h)-f(-h) difference carries a
// few ulps of evaluation rounding, which alone exceeds 1e-4 relative; the
// median removes that measurement noise without changing h or the tolerance.
inline double central_diff_robust(const std::function<double()>& f, double& theta, double h) {
  std::vector<double> est;
  for (int j = -4; j <= 4; ++j) est.push_back(central_diff(f, theta, h * (1.0 + 1e-6 * j)));
  std::nth_element(est.begin(), est.begin() + 4, est.end());
  return est[4];
}

inline double rel_err(double a, double b) {
  const double denom = std::max(std::abs(a), std::abs(b));
  return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

}  // namespace oracle
