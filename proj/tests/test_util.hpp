#pragma once

// Shared test oracles: finite differences, quadrature, simple statistics.
// These stay independent of the library's own gradient and quadrature paths.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/rng.hpp"

namespace testutil {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Central finite differences of a scalar function of a vector.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  Vec p = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double up = f(p);
    p[i] = orig - h;
    const double down = f(p);
    p[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Finite-difference Jacobian of a vector map (columns = input directions).
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h = 1e-6) {
  Vec p = x;
  Vec f0 = f(x);
  Mat j(f0.size(), x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    Vec up = f(p);
    p[i] = orig - h;
    Vec down = f(p);
    p[i] = orig;
    j.col(i) = (up - down) / (2.0 * h);
  }
  return j;
}

// Max relative error between analytic and reference gradients, with an
// absolute floor so near-zero entries do not blow up the ratio.
inline double max_rel_err(const Vec& a, const Vec& b, double floor_ = 1e-8) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor_});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// Plain trapezoid quadrature of exp(log_f) over a 2D box (test-side oracle,
// deliberately written without log-sum-exp).
inline double trapezoid_integral_2d(const std::function<double(double, double)>& log_f, double lo, double hi,
                                    int n) {
  const double h = (hi - lo) / (n - 1);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      const double wj = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      row += wj * std::exp(log_f(lo + h * i, lo + h * j));
    }
    total += wi * row;
  }
  return total * h * h;
}

inline double trapezoid_integral_1d(const std::function<double(double)>& log_f, double lo, double hi, int n) {
  const double h = (hi - lo) / (n - 1);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    total += w * std::exp(log_f(lo + h * i));
  }
  return total * h;
}

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Kolmogorov-Smirnov distance of samples against a reference CDF.
inline double ks_distance(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double c = cdf(xs[i]);
    d = std::max(d, std::abs(c - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - c));
  }
  return d;
}

// Critical value of the one-sample KS test at level 0.01.
inline double ks_critical_001(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

}  // namespace testutil
