#include "ebmflow/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ebmflow/exec.hpp"

namespace ebmflow::diagnostics {

QuadratureGrid QuadratureGrid::make(const Vec& lo, const Vec& hi, int per_axis) {
  const auto d = lo.size();
  if (d < 1 || d > 2) throw InputError("QuadratureGrid: only dim 1 or 2 supported");
  if (hi.size() != d) throw InputError("QuadratureGrid: bound dimension mismatch");
  if (per_axis < 2) throw InputError("QuadratureGrid: need at least 2 points per axis");
  if (((hi - lo).array() <= 0.0).any()) throw InputError("QuadratureGrid: empty box");
  QuadratureGrid grid;
  grid.per_axis = per_axis;
  grid.lo = lo;
  grid.hi = hi;
  auto axis_w = [per_axis](int i) { return (i == 0 || i == per_axis - 1) ? 0.5 : 1.0; };
  if (d == 1) {
    const double h = (hi[0] - lo[0]) / (per_axis - 1);
    grid.points.resize(per_axis, 1);
    grid.log_weights.resize(per_axis);
    for (int i = 0; i < per_axis; ++i) {
      grid.points(i, 0) = lo[0] + h * i;
      grid.log_weights[i] = std::log(axis_w(i) * h);
    }
  } else {
    const double hx = (hi[0] - lo[0]) / (per_axis - 1);
    const double hy = (hi[1] - lo[1]) / (per_axis - 1);
    const Eigen::Index n = static_cast<Eigen::Index>(per_axis) * per_axis;
    grid.points.resize(n, 2);
    grid.log_weights.resize(n);
    Eigen::Index r = 0;
    for (int i = 0; i < per_axis; ++i)
      for (int j = 0; j < per_axis; ++j, ++r) {
        grid.points(r, 0) = lo[0] + hx * i;
        grid.points(r, 1) = lo[1] + hy * j;
        grid.log_weights[r] = std::log(axis_w(i) * axis_w(j) * hx * hy);
      }
  }
  return grid;
}

namespace {

// Evaluates log_f over the grid in fixed row blocks.
Vec eval_blocked(const QuadratureGrid& grid, const std::function<Vec(const Mat&)>& log_f) {
  const int n = static_cast<int>(grid.points.rows());
  Vec out(n);
  const int block = 4096;
  exec::for_blocks(
      n, true,
      [&](int begin, int count, int) { out.segment(begin, count) = log_f(grid.points.middleRows(begin, count)); },
      block);
  return out;
}

double lse(const Vec& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace

double log_integral_exp(const QuadratureGrid& grid, const std::function<Vec(const Mat&)>& log_f) {
  Vec v = eval_blocked(grid, log_f) + grid.log_weights;
  const double r = lse(v);
  if (!std::isfinite(r))
    throw NumericError("log_integral_exp: quadrature under/overflow (max log value " +
                       std::to_string(v.maxCoeff()) + ")");
  return r;
}

RhatReport split_rhat(const std::vector<Mat>& ensemble_steps) {
  const int t = static_cast<int>(ensemble_steps.size());
  if (t < 4) throw InputError("split_rhat: need at least 4 samples per chain");
  const int m = static_cast<int>(ensemble_steps.front().rows());
  const int d = static_cast<int>(ensemble_steps.front().cols());
  if (m < 2) throw InputError("split_rhat: need at least 2 chains");
  const int half = t / 2;  // odd T drops the middle sample
  const int n_half = 2 * m;

  RhatReport report;
  report.n_chains = m;
  report.n_samples = t;
  report.per_dimension.resize(d);

  for (int dim = 0; dim < d; ++dim) {
    // half-chain c of chain i: first halves are c = i, second halves c = m + i
    Vec means(n_half), vars(n_half);
    for (int i = 0; i < m; ++i) {
      for (int s = 0; s < 2; ++s) {
        const int off = (s == 0) ? 0 : t - half;
        double mean = 0.0;
        for (int k = 0; k < half; ++k) mean += ensemble_steps[static_cast<std::size_t>(off + k)](i, dim);
        mean /= half;
        double var = 0.0;
        for (int k = 0; k < half; ++k) {
          const double dv = ensemble_steps[static_cast<std::size_t>(off + k)](i, dim) - mean;
          var += dv * dv;
        }
        var /= (half - 1);
        means[s * m + i] = mean;
        vars[s * m + i] = var;
      }
    }
    const double w = vars.mean();
    const double grand = means.mean();
    double b = 0.0;
    for (int c = 0; c < n_half; ++c) b += (means[c] - grand) * (means[c] - grand);
    b *= static_cast<double>(half) / (n_half - 1);
    if (w <= 0.0) {
      report.per_dimension[dim] = std::numeric_limits<double>::infinity();
      report.degenerate = true;
      continue;
    }
    const double var_plus = (static_cast<double>(half - 1) / half) * w + b / half;
    report.per_dimension[dim] = std::sqrt(var_plus / w);
  }
  report.max_rhat = report.per_dimension.maxCoeff();
  return report;
}

namespace {

int nearest_centroid(const Eigen::RowVectorXd& x, const std::vector<Vec>& centroids) {
  int best = 0;
  double best_d = (x.transpose() - centroids[0]).squaredNorm();
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double dist = (x.transpose() - centroids[c]).squaredNorm();
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(c);
    }
  }
  return best;
}

void validate_centroids(const std::vector<Vec>& centroids) {
  if (centroids.empty()) throw InputError("mode weights: need at least one centroid");
  for (std::size_t a = 0; a < centroids.size(); ++a)
    for (std::size_t b = a + 1; b < centroids.size(); ++b)
      if ((centroids[a] - centroids[b]).norm() == 0.0)
        throw InputError("mode weights: centroids must be distinct");
}

}  // namespace

Vec mode_weights(const Mat& samples, const std::vector<Vec>& centroids) {
  if (samples.rows() == 0) throw InputError("mode_weights: empty sample set");
  validate_centroids(centroids);
  Vec counts = Vec::Zero(static_cast<Eigen::Index>(centroids.size()));
  for (Eigen::Index i = 0; i < samples.rows(); ++i) counts[nearest_centroid(samples.row(i), centroids)] += 1.0;
  return counts / static_cast<double>(samples.rows());
}

Vec model_mode_weights(const std::function<Vec(const Mat&)>& log_density_unnorm,
                       const QuadratureGrid& grid, const std::vector<Vec>& centroids) {
  validate_centroids(centroids);
  Vec logv = eval_blocked(grid, log_density_unnorm) + grid.log_weights;
  const double mx = logv.maxCoeff();
  if (!std::isfinite(mx))
    throw NumericError("model_mode_weights: density underflow over the whole grid");
  Vec mass = Vec::Zero(static_cast<Eigen::Index>(centroids.size()));
  for (Eigen::Index i = 0; i < grid.points.rows(); ++i)
    mass[nearest_centroid(grid.points.row(i), centroids)] += std::exp(logv[i] - mx);
  const double total = mass.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw NumericError("model_mode_weights: quadrature mass vanished (log-sum-exp scale " +
                       std::to_string(mx) + ")");
  return mass / total;
}

double mode_weight_mse(const Vec& weights, const Vec& reference) {
  if (weights.size() != reference.size()) throw InputError("mode_weight_mse: length mismatch");
  return (weights - reference).squaredNorm() / static_cast<double>(weights.size());
}

double median_sq_logdensity_error(const std::function<Vec(const Mat&)>& model_log_density_unnorm,
                                  const QuadratureGrid& grid,
                                  const std::function<Vec(const Mat&)>& target_log_density,
                                  const Mat& eval_points) {
  if (eval_points.rows() == 0) throw InputError("median_sq_logdensity_error: no evaluation points");
  const double log_z = log_integral_exp(grid, model_log_density_unnorm);
  Vec model = model_log_density_unnorm(eval_points).array() - log_z;
  Vec target = target_log_density(eval_points);
  std::vector<double> errs(static_cast<std::size_t>(eval_points.rows()));
  for (Eigen::Index i = 0; i < eval_points.rows(); ++i) {
    const double diff = model[i] - target[i];
    errs[static_cast<std::size_t>(i)] = diff * diff;
  }
  const std::size_t n = errs.size();
  auto mid = errs.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(errs.begin(), mid, errs.end());
  if (n % 2 == 1) return *mid;
  const double upper = *mid;
  std::nth_element(errs.begin(), errs.begin() + static_cast<std::ptrdiff_t>(n / 2 - 1), mid);
  return 0.5 * (errs[n / 2 - 1] + upper);
}

Histogram energy_histogram(const Vec& values, int n_bins) {
  if (n_bins < 1) throw InputError("energy_histogram: need at least one bin");
  if (values.size() == 0) throw InputError("energy_histogram: empty sample set");
  Histogram h;
  h.lo = values.minCoeff();
  h.hi = values.maxCoeff();
  h.counts.assign(static_cast<std::size_t>(n_bins), 0);
  const double width = h.hi - h.lo;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    int bin = 0;
    if (width > 0.0) {
      bin = static_cast<int>((values[i] - h.lo) / width * n_bins);
      bin = std::clamp(bin, 0, n_bins - 1);
    }
    ++h.counts[static_cast<std::size_t>(bin)];
  }
  return h;
}

std::vector<std::pair<long, double>> weight_trajectory(const io::MetricLog& log, int mode_index,
                                                       const std::string& prefix) {
  const std::string name = prefix + std::to_string(mode_index);
  auto series = log.series(name);
  if (series.empty()) throw InputError("weight_trajectory: metric '" + name + "' not present in log");
  return series;
}

}  // namespace ebmflow::diagnostics
