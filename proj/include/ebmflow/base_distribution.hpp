#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Core>

#include "ebmflow/errors.hpp"
#include "ebmflow/rng.hpp"

namespace ebmflow::flow {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Flow/EBM base density rho = N(0, sigma^2 I).
class BaseDistribution {
 public:
  BaseDistribution() = default;
  BaseDistribution(int dim, double sigma2) : dim_(dim), sigma2_(sigma2) {
    if (dim <= 0) throw InputError("BaseDistribution: dim must be positive");
    if (sigma2 <= 0.0) throw InputError("BaseDistribution: sigma^2 must be positive");
  }

  static BaseDistribution standard_normal(int dim) { return {dim, 1.0}; }

  int dim() const { return dim_; }
  double sigma2() const { return sigma2_; }

  double log_density(const Vec& x) const {
    if (x.size() != dim_) throw InputError("BaseDistribution: point has wrong dimension");
    return log_norm_const() - 0.5 * x.squaredNorm() / sigma2_;
  }

  Vec log_density_batch(const Mat& x) const {
    if (x.cols() != dim_) throw InputError("BaseDistribution: batch has wrong dimension");
    return (x.rowwise().squaredNorm() * (-0.5 / sigma2_)).array() + log_norm_const();
  }

  Vec score(const Vec& x) const { return -x / sigma2_; }
  Mat score_batch(const Mat& x) const { return -x / sigma2_; }

  Mat sample(int n, rng::RngStream& stream) const {
    Mat out(n, dim_);
    const double sd = std::sqrt(sigma2_);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < dim_; ++j) out(i, j) = sd * stream.normal();
    return out;
  }

  Mat sample(int n, std::uint64_t seed) const {
    rng::RngStream stream(seed);
    return sample(n, stream);
  }

 private:
  double log_norm_const() const {
    return -0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi * sigma2_);
  }

  int dim_ = 1;
  double sigma2_ = 1.0;
};

}  // namespace ebmflow::flow
