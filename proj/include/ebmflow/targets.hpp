#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/errors.hpp"
#include "ebmflow/rng.hpp"
#include "ebmflow/scalar_field.hpp"

namespace ebmflow::targets {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Mode {
  Vec centroid;
  double weight = 0.0;
};

// Benchmark target: normalized log-density, analytic score, exact sampler and
// mode metadata for diagnostics. Stateless and reentrant; samplers take an
// explicit seed.
class TargetDistribution {
 public:
  int dim = 0;
  std::string id;
  std::function<double(const Vec&)> log_density;
  std::function<Vec(const Vec&)> score;
  std::function<Vec(const Mat&)> log_density_batch;
  std::function<Mat(const Mat&)> score_batch;
  std::function<Mat(int, std::uint64_t)> sample;  // (count, seed) -> count x dim
  std::vector<Mode> modes;
  Vec bbox_lo, bbox_hi;        // modes +/- 6 sigma, used by quadrature grids
  double base_sigma2 = 1.0;    // max per-dimension variance; flow-base convention

  numerics::ScalarField field() const {
    numerics::ScalarField f;
    f.dim = dim;
    f.value = log_density;
    f.grad = score;
    f.value_batch = log_density_batch;
    f.grad_batch = score_batch;
    return f;
  }

  std::vector<Vec> mode_centroids() const {
    std::vector<Vec> out;
    out.reserve(modes.size());
    for (const auto& m : modes) out.push_back(m.centroid);
    return out;
  }

  Vec mode_weights() const {
    Vec w(static_cast<Eigen::Index>(modes.size()));
    for (std::size_t i = 0; i < modes.size(); ++i) w[static_cast<Eigen::Index>(i)] = modes[i].weight;
    return w;
  }
};

// Mixture of isotropic Gaussians N(mu_i, var_i * I).
struct GaussianMixture {
  Mat means;      // k x d
  Vec variances;  // k
  Vec weights;    // k, on the simplex

  void validate() const;
  double log_density(const Vec& x) const;
  Vec log_density_batch(const Mat& x) const;
  Vec score(const Vec& x) const;
  Mat score_batch(const Mat& x) const;
  Mat sample(int n, std::uint64_t seed) const;
  Vec per_dim_variance() const;  // marginal variance along each axis
};

// 2D mixture of two: (1/3) N(-1.5*1, 0.05 I) + (2/3) N(+1.5*1, 0.1 I).
TargetDistribution make_motivating_mixture();

// 2D mixture of four on the horizontal axis, weights (0.1, 0.2, 0.3, 0.4).
TargetDistribution make_extended_mixture();

// 8 equally weighted Gaussians on the unit circle, std 0.15.
TargetDistribution make_eight_gaussians();

// Concentric rings: radial mixture of N(i+1, 0.15^2), uniform angle.
TargetDistribution make_rings();

// 4 equally weighted isotropic unit-variance Gaussians with +/- sign-pattern
// means scaled by a = 0.5919. Requires even dim.
TargetDistribution make_highdim_four_gaussians(int dim);

// Lookup by string id: two_mix, four_line, eight_gaussians, rings,
// highdim4:<dim>.
TargetDistribution make_target(const std::string& id);
std::vector<std::string> target_ids();

}  // namespace ebmflow::targets
