#include "ebmflow/targets.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

namespace ebmflow::targets {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Density floor at removable singularities (rings origin): finite so that
// samplers never see non-finite gradients.
constexpr double kLogDensityFloor = -1e10;

double log_normal_1d(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * std::log(kTwoPi * var) - 0.5 * d * d / var;
}

}  // namespace

void GaussianMixture::validate() const {
  const auto k = means.rows();
  if (k == 0) throw InputError("GaussianMixture: empty mixture");
  if (variances.size() != k || weights.size() != k)
    throw InputError("GaussianMixture: component count mismatch");
  if ((variances.array() <= 0.0).any()) throw InputError("GaussianMixture: variances must be positive");
  if ((weights.array() <= 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-12)
    throw InputError("GaussianMixture: weights must be positive and sum to 1");
}

double GaussianMixture::log_density(const Vec& x) const {
  return log_density_batch(x.transpose())[0];
}

Vec GaussianMixture::log_density_batch(const Mat& x) const {
  const auto n = x.rows();
  const auto k = means.rows();
  const double d = static_cast<double>(x.cols());
  Mat comp(n, k);  // log w_i + log N(x; mu_i, var_i I)
  for (Eigen::Index i = 0; i < k; ++i) {
    Vec sq = (x.rowwise() - means.row(i)).rowwise().squaredNorm();
    const double c = std::log(weights[i]) - 0.5 * d * std::log(kTwoPi * variances[i]);
    comp.col(i) = (-sq.array() / (2.0 * variances[i]) + c).matrix();
  }
  Vec mx = comp.rowwise().maxCoeff();
  Vec out(n);
  for (Eigen::Index r = 0; r < n; ++r)
    out[r] = mx[r] + std::log((comp.row(r).array() - mx[r]).exp().sum());
  return out;
}

Vec GaussianMixture::score(const Vec& x) const {
  return score_batch(x.transpose()).row(0).transpose();
}

Mat GaussianMixture::score_batch(const Mat& x) const {
  const auto n = x.rows();
  const auto k = means.rows();
  const double d = static_cast<double>(x.cols());
  Mat logc(n, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    Vec sq = (x.rowwise() - means.row(i)).rowwise().squaredNorm();
    const double c = std::log(weights[i]) - 0.5 * d * std::log(kTwoPi * variances[i]);
    logc.col(i) = (-sq.array() / (2.0 * variances[i]) + c).matrix();
  }
  Vec mx = logc.rowwise().maxCoeff();
  Mat resp = (logc.colwise() - mx).array().exp();
  Vec norm = resp.rowwise().sum();
  Mat out = Mat::Zero(n, x.cols());
  for (Eigen::Index i = 0; i < k; ++i) {
    Vec r = resp.col(i).array() / norm.array();
    out -= ((x.rowwise() - means.row(i)).array().colwise() * r.array()).matrix() / variances[i];
  }
  return out;
}

Mat GaussianMixture::sample(int n, std::uint64_t seed) const {
  rng::RngStream stream(seed);
  const auto k = means.rows();
  Mat out(n, means.cols());
  Vec cum(k);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    acc += weights[i];
    cum[i] = acc;
  }
  for (int r = 0; r < n; ++r) {
    const double u = stream.uniform();
    Eigen::Index c = 0;
    while (c + 1 < k && u > cum[c]) ++c;
    const double sd = std::sqrt(variances[c]);
    for (Eigen::Index j = 0; j < means.cols(); ++j) out(r, j) = means(c, j) + sd * stream.normal();
  }
  return out;
}

Vec GaussianMixture::per_dim_variance() const {
  const auto d = means.cols();
  Vec mean = Vec::Zero(d);
  for (Eigen::Index i = 0; i < means.rows(); ++i) mean += weights[i] * means.row(i).transpose();
  Vec var = Vec::Zero(d);
  for (Eigen::Index i = 0; i < means.rows(); ++i) {
    Vec centered = means.row(i).transpose() - mean;
    var += weights[i] * (centered.array().square() + variances[i]).matrix();
  }
  return var;
}

namespace {

TargetDistribution from_mixture(GaussianMixture gm, std::string id) {
  gm.validate();
  TargetDistribution t;
  t.dim = static_cast<int>(gm.means.cols());
  t.id = std::move(id);
  t.modes.reserve(static_cast<std::size_t>(gm.means.rows()));
  for (Eigen::Index i = 0; i < gm.means.rows(); ++i)
    t.modes.push_back({gm.means.row(i).transpose(), gm.weights[i]});
  Vec sd = gm.variances.array().sqrt();
  t.bbox_lo = gm.means.colwise().minCoeff().transpose().array() - 6.0 * sd.maxCoeff();
  t.bbox_hi = gm.means.colwise().maxCoeff().transpose().array() + 6.0 * sd.maxCoeff();
  t.base_sigma2 = gm.per_dim_variance().maxCoeff();
  auto shared = std::make_shared<GaussianMixture>(std::move(gm));
  t.log_density = [shared](const Vec& x) { return shared->log_density(x); };
  t.score = [shared](const Vec& x) { return shared->score(x); };
  t.log_density_batch = [shared](const Mat& x) { return shared->log_density_batch(x); };
  t.score_batch = [shared](const Mat& x) { return shared->score_batch(x); };
  t.sample = [shared](int n, std::uint64_t seed) { return shared->sample(n, seed); };
  return t;
}

}  // namespace

TargetDistribution make_motivating_mixture() {
  GaussianMixture gm;
  gm.means.resize(2, 2);
  gm.means.row(0) = Eigen::RowVector2d(-1.5, -1.5);
  gm.means.row(1) = Eigen::RowVector2d(1.5, 1.5);
  gm.variances = (Vec(2) << 0.05, 0.1).finished();
  gm.weights = (Vec(2) << 1.0 / 3.0, 2.0 / 3.0).finished();
  return from_mixture(std::move(gm), "two_mix");
}

TargetDistribution make_extended_mixture() {
  GaussianMixture gm;
  gm.means.resize(4, 2);
  const double xs[4] = {-3.0, -1.0, 1.0, 3.0};
  for (int i = 0; i < 4; ++i) gm.means.row(i) = Eigen::RowVector2d(xs[i], 0.0);
  gm.variances = Vec::Constant(4, 0.05);
  gm.weights = (Vec(4) << 0.1, 0.2, 0.3, 0.4).finished();
  return from_mixture(std::move(gm), "four_line");
}

TargetDistribution make_eight_gaussians() {
  GaussianMixture gm;
  gm.means.resize(8, 2);
  for (int i = 0; i < 8; ++i) {
    const double t = kTwoPi * static_cast<double>(i) / 8.0;
    gm.means.row(i) = Eigen::RowVector2d(std::cos(t), std::sin(t));
  }
  gm.variances = Vec::Constant(8, 0.15 * 0.15);
  gm.weights = Vec::Constant(8, 1.0 / 8.0);
  return from_mixture(std::move(gm), "eight_gaussians");
}

TargetDistribution make_rings() {
  // Radial marginal: mixture of N(i+1, 0.15^2), i in {0..3}; angle uniform.
  // Cartesian density: p(x) = p_r(|x|) * (1/2pi) / |x|  (polar Jacobian).
  struct Radial {
    double log_p(double r) const {
      double mx = -std::numeric_limits<double>::infinity();
      double terms[4];
      for (int i = 0; i < 4; ++i) {
        terms[i] = std::log(0.25) + log_normal_1d(r, static_cast<double>(i + 1), 0.15 * 0.15);
        mx = std::max(mx, terms[i]);
      }
      double s = 0.0;
      for (double t : terms) s += std::exp(t - mx);
      return mx + std::log(s);
    }
    double dlog_p(double r) const {
      // d/dr log p_r = sum_i resp_i * (mu_i - r) / var
      double mx = -std::numeric_limits<double>::infinity();
      double terms[4];
      for (int i = 0; i < 4; ++i) {
        terms[i] = std::log(0.25) + log_normal_1d(r, static_cast<double>(i + 1), 0.15 * 0.15);
        mx = std::max(mx, terms[i]);
      }
      double s = 0.0, g = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double e = std::exp(terms[i] - mx);
        s += e;
        g += e * (static_cast<double>(i + 1) - r) / (0.15 * 0.15);
      }
      return g / s;
    }
  };
  auto radial = std::make_shared<Radial>();

  TargetDistribution t;
  t.dim = 2;
  t.id = "rings";
  t.log_density = [radial](const Vec& x) {
    const double r = x.norm();
    if (r <= 0.0) return kLogDensityFloor;
    return radial->log_p(r) - std::log(kTwoPi) - std::log(r);
  };
  t.score = [radial](const Vec& x) {
    const double r = x.norm();
    if (r <= 1e-12) return Vec::Zero(2).eval();
    const double dr = radial->dlog_p(r) - 1.0 / r;
    return (dr / r * x).eval();
  };
  t.sample = [radial](int n, std::uint64_t seed) {
    rng::RngStream stream(seed);
    Mat out(n, 2);
    for (int i = 0; i < n; ++i) {
      double r = 0.0;
      do {
        const double u = stream.uniform();
        const int comp = std::min(3, static_cast<int>(u * 4.0));
        r = static_cast<double>(comp + 1) + 0.15 * stream.normal();
      } while (r <= 0.0);
      const double theta = kTwoPi * stream.uniform();
      out(i, 0) = r * std::cos(theta);
      out(i, 1) = r * std::sin(theta);
    }
    return out;
  };
  numerics::ScalarField f;
  f.dim = 2;
  f.value = t.log_density;
  f.grad = t.score;
  f = numerics::with_default_batch(std::move(f));
  t.log_density_batch = f.value_batch;
  t.score_batch = f.grad_batch;
  t.bbox_lo = Vec::Constant(2, -(4.0 + 6.0 * 0.15));
  t.bbox_hi = Vec::Constant(2, 4.0 + 6.0 * 0.15);
  // E[x_j^2] = E[r^2]/2 with E[r^2] = mean_i ((i+1)^2 + 0.15^2)
  t.base_sigma2 = ((1.0 + 4.0 + 9.0 + 16.0) / 4.0 + 0.15 * 0.15) / 2.0;
  return t;
}

TargetDistribution make_highdim_four_gaussians(int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw InputError("make_highdim_four_gaussians: dim must be even and >= 2");
  const double a = 0.5919;
  GaussianMixture gm;
  gm.means.resize(4, dim);
  Vec mu1 = Vec::Constant(dim, a);
  Vec mu2(dim);
  for (int j = 0; j < dim; ++j) mu2[j] = (j < dim / 2) ? -a : a;
  gm.means.row(0) = mu1.transpose();
  gm.means.row(1) = mu2.transpose();
  gm.means.row(2) = -mu2.transpose();
  gm.means.row(3) = -mu1.transpose();
  gm.variances = Vec::Constant(4, 1.0);
  gm.weights = Vec::Constant(4, 0.25);
  return from_mixture(std::move(gm), "highdim4:" + std::to_string(dim));
}

TargetDistribution make_target(const std::string& id) {
  if (id == "two_mix") return make_motivating_mixture();
  if (id == "four_line") return make_extended_mixture();
  if (id == "eight_gaussians") return make_eight_gaussians();
  if (id == "rings") return make_rings();
  if (id.rfind("highdim4:", 0) == 0) {
    const std::string rest = id.substr(9);
    try {
      return make_highdim_four_gaussians(std::stoi(rest));
    } catch (const std::invalid_argument&) {
      throw InputError("make_target: bad dimension in '" + id + "'");
    }
  }
  throw InputError("make_target: unknown target id '" + id + "'");
}

std::vector<std::string> target_ids() {
  return {"two_mix", "four_line", "eight_gaussians", "rings", "highdim4:<dim>"};
}

}  // namespace ebmflow::targets
