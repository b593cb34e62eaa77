#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/base_distribution.hpp"
#include "ebmflow/errors.hpp"
#include "ebmflow/mlp.hpp"
#include "ebmflow/param_store.hpp"
#include "ebmflow/scalar_field.hpp"

namespace ebmflow::ebm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Monte-Carlo likelihood-gradient estimate from positive and negative
// batches.
struct GradientEstimate {
  Eigen::VectorXd grads;
  int n_pos = 0;
  int n_neg = 0;
};

struct TiltIdentityReport {
  double max_rel_discrepancy = 0.0;
  Eigen::VectorXd lhs;     // finite differences of the quadrature log Z
  Eigen::VectorXd rhs;     // self-normalized expectation of -grad_theta E
  Eigen::VectorXd rhs_mc;  // importance-sampling cross-check (when n_mc > 0)
  bool pass = false;
  int grid_per_axis = 0;
};

// Energy network E_theta paired with a base density rho. The unnormalized
// log-density is -E(x) + log rho(x); with the tilt disabled it is -E(x)
// (the classic formulation). Z_theta is never computed during training;
// diagnostics estimate it by quadrature when needed.
//
// Sign conventions, fixed once: ml_gradient_estimate returns the batch
// estimator in the form whose *descent* step increases the data likelihood.
// Trainers always pair it with sgd_step(..., Descent).
class TiltedEBM {
 public:
  TiltedEBM() = default;

  static TiltedEBM create(int dim, std::vector<int> hidden, numerics::Activation act,
                          flow::BaseDistribution base, std::uint64_t seed, bool tilted = true);

  int dim() const { return dim_; }
  bool tilted() const { return tilted_; }
  const flow::BaseDistribution& base() const { return base_; }
  const numerics::Mlp& energy_net() const { return energy_; }
  numerics::ParamStore& params() { return params_; }
  const numerics::ParamStore& params() const { return params_; }
  const std::vector<int>& hidden_widths() const { return hidden_; }

  double energy(const Vec& x) const;
  Vec energy_batch(const Mat& x) const;

  double log_density_unnorm(const Vec& x) const;
  Vec log_density_unnorm_batch(const Mat& x) const;

  // grad_x of the unnormalized log-density.
  Vec score(const Vec& x) const;
  Mat score_batch(const Mat& x) const;

  // Unnormalized log-density as a differentiable field; `temperature`
  // rescales the energy term only (used by the classic-EBM baseline).
  numerics::ScalarField field(double temperature = 1.0) const;

  // Batch estimator of the likelihood gradient:
  //   mean_pos grad_theta E  -  mean_neg grad_theta E.
  GradientEstimate ml_gradient_estimate(const Mat& positives, const Mat& negatives) const;

  // lambda * sum_i E(x_i^-)^2 + E(x_i^+)^2 and its theta-gradient.
  numerics::GradientRecord l2_energy_regularizer(const Mat& positives, const Mat& negatives,
                                                 double lambda) const;

  // Numerical check of the tilted-gradient identity
  //   grad_theta log Z_theta = E_{p_theta^rho}[-grad_theta E].
  // LHS by central finite differences of the quadrature log Z, RHS by
  // self-normalized weighting over the same grid. dim <= 2 only. When
  // n_mc > 0 an additional importance-sampling estimate sanity-checks the
  // RHS (not part of the pass criterion).
  TiltIdentityReport verify_tilted_gradient_identity(int n_mc = 0, int grid_per_axis = 201,
                                                     double fd_step = 1e-4, double half_width = 0.0) const;

 private:
  // Accumulates sum_i coeff_i * grad_theta E(x_i) into pgrad.
  void accumulate_energy_param_grad(const Mat& x, const Vec& coeff, std::span<double> pgrad) const;

  int dim_ = 0;
  std::vector<int> hidden_;
  numerics::Mlp energy_;
  flow::BaseDistribution base_;
  numerics::ParamStore params_;
  bool tilted_ = true;
};

}  // namespace ebmflow::ebm
