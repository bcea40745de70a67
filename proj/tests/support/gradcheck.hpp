#pragma once
// Central finite-difference helpers for double-precision gradient checks.

#include <autopainter/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace testsupport {

using autopainter::Tensor;

/// max over entries of |a - n| / max(|a|, |n|, floor).
inline double max_rel_error(const Tensor<double>& analytic, const Tensor<double>& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

/// Numeric gradient of f at x, perturbing every entry (or only `indices` when given).
inline Tensor<double> numeric_grad(const std::function<double(const Tensor<double>&)>& f, const Tensor<double>& x,
                                   double h = 1e-3, const std::vector<std::size_t>* indices = nullptr) {
  Tensor<double> g(x.shape());
  Tensor<double> probe = x;
  auto one = [&](std::size_t i) {
    const double v = probe[i];
    probe[i] = v + h;
    const double up = f(probe);
    probe[i] = v - h;
    const double down = f(probe);
    probe[i] = v;
    g[i] = (up - down) / (2 * h);
  };
  if (indices)
    for (std::size_t i : *indices) one(i);
  else
    for (std::size_t i = 0; i < x.size(); ++i) one(i);
  return g;
}

inline Tensor<double> uniform_tensor(const autopainter::Shape& s, double lo, double hi, std::mt19937_64& rng) {
  Tensor<double> t(s);
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.storage()) v = d(rng);
  return t;
}

/// Weighted sum <r, y>, the usual scalarisation for checking a vector-valued op.
inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace testsupport
