#include "ebmflow/tilted_ebm.hpp"

#include <cmath>

#include "ebmflow/exec.hpp"

namespace ebmflow::ebm {

TiltedEBM TiltedEBM::create(int dim, std::vector<int> hidden, numerics::Activation act,
                            flow::BaseDistribution base, std::uint64_t seed, bool tilted) {
  if (base.dim() != dim) throw InputError("TiltedEBM: base dimension mismatch");
  TiltedEBM m;
  m.dim_ = dim;
  m.hidden_ = hidden;
  m.base_ = base;
  m.tilted_ = tilted;
  std::vector<int> widths;
  widths.push_back(dim);
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  m.energy_ = numerics::Mlp::create(m.params_, "energy", widths, act);
  rng::RngStream stream = rng::RngStream::substream(seed, 0x65626dULL);
  // Zero final layer: E == 0 at initialization, so the model starts at rho.
  m.energy_.init_random(m.params_, stream, 0.0);
  return m;
}

double TiltedEBM::energy(const Vec& x) const { return energy_batch(x.transpose())[0]; }

Vec TiltedEBM::energy_batch(const Mat& x) const { return energy_.forward(params_, x).col(0); }

double TiltedEBM::log_density_unnorm(const Vec& x) const {
  return log_density_unnorm_batch(x.transpose())[0];
}

Vec TiltedEBM::log_density_unnorm_batch(const Mat& x) const {
  Vec e = energy_batch(x);
  if (tilted_) return base_.log_density_batch(x) - e;
  return -e;
}

Vec TiltedEBM::score(const Vec& x) const { return score_batch(x.transpose()).row(0).transpose(); }

Mat TiltedEBM::score_batch(const Mat& x) const {
  numerics::MlpCache cache;
  energy_.forward(params_, x, cache);
  Mat de = energy_.backward(params_, cache, Mat::Ones(x.rows(), 1), {});
  if (tilted_) return base_.score_batch(x) - de;
  return -de;
}

numerics::ScalarField TiltedEBM::field(double temperature) const {
  if (temperature <= 0.0) throw InputError("TiltedEBM::field: temperature must be positive");
  numerics::ScalarField f;
  f.dim = dim_;
  const TiltedEBM* self = this;
  const double inv_t = 1.0 / temperature;
  // Non-finite rows are passed through: samplers treat them as rejected
  // proposals / diverged chains rather than hard errors.
  f.value_batch = [self, inv_t](const Mat& x) {
    Vec e = self->energy_batch(x) * inv_t;
    return self->tilted_ ? (self->base_.log_density_batch(x) - e).eval() : (-e).eval();
  };
  f.grad_batch = [self, inv_t](const Mat& x) {
    numerics::MlpCache cache;
    self->energy_.forward(self->params_, x, cache);
    Mat de = self->energy_.backward(self->params_, cache, Mat::Ones(x.rows(), 1), {}) * inv_t;
    return self->tilted_ ? (self->base_.score_batch(x) - de).eval() : (-de).eval();
  };
  f.value_and_grad_batch = [self, inv_t](const Mat& x) {
    numerics::MlpCache cache;
    Vec e = self->energy_.forward(self->params_, x, cache).col(0) * inv_t;
    Mat de = self->energy_.backward(self->params_, cache, Mat::Ones(x.rows(), 1), {}) * inv_t;
    Vec v;
    Mat g;
    if (self->tilted_) {
      v = self->base_.log_density_batch(x) - e;
      g = self->base_.score_batch(x) - de;
    } else {
      v = -e;
      g = -de;
    }
    return std::make_pair(v, g);
  };
  f.value = [f](const Vec& x) { return f.value_batch(x.transpose())[0]; };
  f.grad = [f](const Vec& x) { return f.grad_batch(x.transpose()).row(0).transpose().eval(); };
  return f;
}

void TiltedEBM::accumulate_energy_param_grad(const Mat& x, const Vec& coeff,
                                             std::span<double> pgrad) const {
  const int n = static_cast<int>(x.rows());
  const int block = 256;
  const int nb = exec::num_blocks(n, block);
  std::vector<Eigen::VectorXd> buffers(static_cast<std::size_t>(nb));
  exec::for_blocks(
      n, true,
      [&](int begin, int count, int b) {
        auto& buf = buffers[static_cast<std::size_t>(b)];
        buf = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params_.size()));
        numerics::MlpCache cache;
        energy_.forward(params_, x.middleRows(begin, count), cache);
        Mat dy = coeff.segment(begin, count);
        energy_.backward(params_, cache, dy, {buf.data(), params_.size()});
      },
      block);
  Eigen::Map<Eigen::VectorXd> out(pgrad.data(), static_cast<Eigen::Index>(pgrad.size()));
  for (int b = 0; b < nb; ++b) out += buffers[static_cast<std::size_t>(b)];
}

GradientEstimate TiltedEBM::ml_gradient_estimate(const Mat& positives, const Mat& negatives) const {
  if (positives.rows() == 0 || negatives.rows() == 0)
    throw InputError("ml_gradient_estimate: batches must be non-empty");
  if (positives.cols() != dim_ || negatives.cols() != dim_)
    throw InputError("ml_gradient_estimate: batch dimension mismatch");
  GradientEstimate est;
  est.n_pos = static_cast<int>(positives.rows());
  est.n_neg = static_cast<int>(negatives.rows());
  est.grads = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params_.size()));
  std::span<double> g{est.grads.data(), params_.size()};
  accumulate_energy_param_grad(positives, Vec::Constant(est.n_pos, 1.0 / est.n_pos), g);
  accumulate_energy_param_grad(negatives, Vec::Constant(est.n_neg, -1.0 / est.n_neg), g);
  if (!est.grads.allFinite()) throw NumericError("ml_gradient_estimate: non-finite gradient");
  return est;
}

numerics::GradientRecord TiltedEBM::l2_energy_regularizer(const Mat& positives, const Mat& negatives,
                                                          double lambda) const {
  if (lambda < 0.0) throw InputError("l2_energy_regularizer: lambda must be non-negative");
  numerics::GradientRecord rec;
  rec.grads = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params_.size()));
  if (lambda == 0.0) return rec;
  Vec e_pos = energy_batch(positives);
  Vec e_neg = energy_batch(negatives);
  rec.value = lambda * (e_pos.squaredNorm() + e_neg.squaredNorm());
  std::span<double> g{rec.grads.data(), params_.size()};
  accumulate_energy_param_grad(positives, (2.0 * lambda * e_pos).eval(), g);
  accumulate_energy_param_grad(negatives, (2.0 * lambda * e_neg).eval(), g);
  return rec;
}

TiltIdentityReport TiltedEBM::verify_tilted_gradient_identity(int n_mc, int grid_per_axis, double fd_step,
                                                              double half_width) const {
  if (dim_ > 2) throw InputError("verify_tilted_gradient_identity: quadrature requires dim <= 2");
  if (half_width <= 0.0) half_width = 8.0 * std::sqrt(base_.sigma2());
  const int g = grid_per_axis;
  const Eigen::Index n_points = (dim_ == 1) ? g : static_cast<Eigen::Index>(g) * g;
  Mat grid(n_points, dim_);
  Vec logw(n_points);  // trapezoid log-weights including cell volume
  const double h = 2.0 * half_width / static_cast<double>(g - 1);
  auto axis_w = [&](int i) { return (i == 0 || i == g - 1) ? 0.5 : 1.0; };
  if (dim_ == 1) {
    for (int i = 0; i < g; ++i) {
      grid(i, 0) = -half_width + h * i;
      logw[i] = std::log(axis_w(i) * h);
    }
  } else {
    Eigen::Index r = 0;
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j, ++r) {
        grid(r, 0) = -half_width + h * i;
        grid(r, 1) = -half_width + h * j;
        logw[r] = std::log(axis_w(i) * axis_w(j) * h * h);
      }
  }
  Vec log_rho = base_.log_density_batch(grid);

  // log Z(theta) by log-sum-exp quadrature of exp(-E) * rho.
  auto log_z = [&](const numerics::ParamStore& store) {
    Vec e = energy_.forward(store, grid).col(0);
    Vec v = logw + log_rho - e;
    const double mx = v.maxCoeff();
    return mx + std::log((v.array() - mx).exp().sum());
  };

  TiltIdentityReport report;
  report.grid_per_axis = grid_per_axis;
  const auto n_params = static_cast<Eigen::Index>(params_.size());
  report.lhs.resize(n_params);
  numerics::ParamStore probe = params_;
  for (Eigen::Index j = 0; j < n_params; ++j) {
    const double orig = probe.data()[j];
    probe.data()[j] = orig + fd_step;
    const double up = log_z(probe);
    probe.data()[j] = orig - fd_step;
    const double down = log_z(probe);
    probe.data()[j] = orig;
    report.lhs[j] = (up - down) / (2.0 * fd_step);
  }

  // RHS: self-normalized weights w_i prop exp(-E) * rho * trapezoid weight.
  Vec e = energy_.forward(params_, grid).col(0);
  Vec v = logw + log_rho - e;
  const double mx = v.maxCoeff();
  Vec w = (v.array() - mx).exp();
  const double wsum = w.sum();
  if (!(wsum > 0.0) || !std::isfinite(wsum))
    throw NumericError("verify_tilted_gradient_identity: quadrature underflow");
  w /= wsum;
  report.rhs = Eigen::VectorXd::Zero(n_params);
  accumulate_energy_param_grad(grid, (-w).eval(), {report.rhs.data(), params_.size()});

  if (n_mc > 0) {
    // Optional cross-check: self-normalized importance sampling from rho.
    rng::RngStream stream(0xabcdefULL + static_cast<std::uint64_t>(n_mc));
    Mat xs = base_.sample(n_mc, stream);
    Vec em = energy_batch(xs);
    Vec lw = -em;
    const double m2 = lw.maxCoeff();
    Vec wm = (lw.array() - m2).exp();
    wm /= wm.sum();
    report.rhs_mc = Eigen::VectorXd::Zero(n_params);
    accumulate_energy_param_grad(xs, (-wm).eval(), {report.rhs_mc.data(), params_.size()});
  }

  const double scale =
      std::max({report.lhs.cwiseAbs().maxCoeff(), report.rhs.cwiseAbs().maxCoeff(), 1e-12});
  report.max_rel_discrepancy = (report.lhs - report.rhs).cwiseAbs().maxCoeff() / scale;
  report.pass = report.max_rel_discrepancy < 0.02;
  return report;
}

}  // namespace ebmflow::ebm
