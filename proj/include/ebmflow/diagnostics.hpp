#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/errors.hpp"
#include "ebmflow/metric_log.hpp"

namespace ebmflow::diagnostics {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Trapezoid grid over a box in dim 1 or 2; log_weights fold in the trapezoid
// coefficients and the cell volume so integrals reduce to one log-sum-exp.
struct QuadratureGrid {
  Mat points;
  Vec log_weights;
  int per_axis = 0;
  Vec lo, hi;

  static QuadratureGrid make(const Vec& lo, const Vec& hi, int per_axis);
};

// log of integral of exp(log_f) over the grid box, accumulated by
// log-sum-exp with a fixed block partition (thread-count independent).
double log_integral_exp(const QuadratureGrid& grid, const std::function<Vec(const Mat&)>& log_f);

struct RhatReport {
  Vec per_dimension;
  double max_rhat = 0.0;
  int n_chains = 0;
  int n_samples = 0;      // per chain, before splitting
  bool degenerate = false;  // zero within-chain variance somewhere (+inf sentinel)
};

// Split-chain potential scale reduction, per coordinate, max-aggregated.
// Input: T snapshots of an m-chain ensemble (each m x d).
RhatReport split_rhat(const std::vector<Mat>& ensemble_steps);

// Fraction of samples in each centroid's Voronoi cell (nearest-centroid
// histogram). Empty cells get weight 0.
Vec mode_weights(const Mat& samples, const std::vector<Vec>& centroids);

// Quadrature mass of exp(log_density_unnorm) per Voronoi cell, normalized
// across cells. dim <= 2.
Vec model_mode_weights(const std::function<Vec(const Mat&)>& log_density_unnorm,
                       const QuadratureGrid& grid, const std::vector<Vec>& centroids);

// Mean over entries of squared differences between two weight histograms.
double mode_weight_mse(const Vec& weights, const Vec& reference);

// med_x (log model(x) - log target(x))^2 with the model normalized by the
// quadrature log Z.
double median_sq_logdensity_error(const std::function<Vec(const Mat&)>& model_log_density_unnorm,
                                  const QuadratureGrid& grid,
                                  const std::function<Vec(const Mat&)>& target_log_density,
                                  const Mat& eval_points);

struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<long> counts;
};

// Uniform-bin histogram over the observed value range.
Histogram energy_histogram(const Vec& values, int n_bins);

// Extracts the (iteration, weight) series of one mode from a metric log.
// Weights are logged as "<prefix><index>".
std::vector<std::pair<long, double>> weight_trajectory(const io::MetricLog& log, int mode_index,
                                                       const std::string& prefix = "mode_weight_model_");

}  // namespace ebmflow::diagnostics
