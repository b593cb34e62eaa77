#include "ebmflow/coupling_flow.hpp"

#include <cmath>

#include "ebmflow/exec.hpp"

namespace ebmflow::flow {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

namespace {

Mat gather_cols(const Mat& x, const std::vector<int>& idx) {
  Mat out(x.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(idx[j]);
  return out;
}

void scatter_cols(Mat& dst, const std::vector<int>& idx, const Mat& src) {
  for (std::size_t j = 0; j < idx.size(); ++j) dst.col(idx[j]) = src.col(static_cast<Eigen::Index>(j));
}

}  // namespace

CouplingFlow CouplingFlow::create(int dim, int n_layers, std::vector<int> hidden, BaseDistribution base,
                                  std::uint64_t seed) {
  if (dim <= 0) throw InputError("CouplingFlow: dim must be positive");
  if (n_layers <= 0) throw InputError("CouplingFlow: need at least one coupling layer");
  if (base.dim() != dim) throw InputError("CouplingFlow: base dimension mismatch");
  CouplingFlow f;
  f.dim_ = dim;
  f.hidden_ = hidden;
  f.base_ = base;
  rng::RngStream stream = rng::RngStream::substream(seed, 0x666c6f77ULL);
  for (int k = 0; k < n_layers; ++k) {
    CouplingLayer layer;
    // Alternating masks: even layers condition on even coordinates.
    for (int j = 0; j < dim; ++j) {
      const bool even = (j % 2 == 0);
      if (even == (k % 2 == 0))
        layer.mask_idx.push_back(j);
      else
        layer.trans_idx.push_back(j);
    }
    std::vector<int> widths;
    widths.push_back(static_cast<int>(layer.mask_idx.size()));
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(static_cast<int>(layer.trans_idx.size()));
    const std::string prefix = "layer" + std::to_string(k);
    layer.scale_net = numerics::Mlp::create(f.params_, prefix + ".scale", widths, numerics::Activation::Tanh);
    layer.shift_net = numerics::Mlp::create(f.params_, prefix + ".shift", widths, numerics::Activation::Tanh);
    layer.cap_offset = f.params_.add(prefix + ".cap", {1});
    layer.scale_net.init_random(f.params_, stream, 0.0);
    layer.shift_net.init_random(f.params_, stream, 0.0);
    f.params_.span(layer.cap_offset, 1)[0] = 1.0;
    f.layers_.push_back(std::move(layer));
  }
  return f;
}

std::pair<Mat, Vec> CouplingFlow::forward(const Mat& z) const {
  FlowCache cache;
  return forward(z, cache);
}

std::pair<Mat, Vec> CouplingFlow::forward(const Mat& z, FlowCache& cache) const {
  if (z.cols() != dim_) throw InputError("CouplingFlow::forward: wrong dimension");
  cache.layers.assign(layers_.size(), LayerCache{});
  Mat h = z;
  Vec logdet = Vec::Zero(z.rows());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    auto& lc = cache.layers[k];
    const double cap = params_.span(layer.cap_offset, 1)[0];
    Mat a = gather_cols(h, layer.mask_idx);
    Mat b = gather_cols(h, layer.trans_idx);
    Mat sraw = layer.scale_net.forward(params_, a, lc.scale_cache);
    lc.tanh_sraw = numerics::act_value_mat(numerics::Activation::Tanh, sraw);
    lc.s = cap * lc.tanh_sraw;
    Mat t = layer.shift_net.forward(params_, a, lc.shift_cache);
    lc.low_b = b;
    Mat b_out = b.array() * lc.s.array().exp() + t.array();
    scatter_cols(h, layer.trans_idx, b_out);
    logdet += lc.s.rowwise().sum();
  }
  return {h, logdet};
}

std::pair<Mat, Vec> CouplingFlow::inverse(const Mat& x) const {
  FlowCache cache;
  return inverse(x, cache);
}

std::pair<Mat, Vec> CouplingFlow::inverse(const Mat& x, FlowCache& cache) const {
  if (x.cols() != dim_) throw InputError("CouplingFlow::inverse: wrong dimension");
  cache.layers.assign(layers_.size(), LayerCache{});
  Mat h = x;
  Vec logdet_inv = Vec::Zero(x.rows());
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& layer = layers_[k];
    auto& lc = cache.layers[k];
    const double cap = params_.span(layer.cap_offset, 1)[0];
    Mat a = gather_cols(h, layer.mask_idx);
    Mat b = gather_cols(h, layer.trans_idx);
    Mat sraw = layer.scale_net.forward(params_, a, lc.scale_cache);
    lc.tanh_sraw = numerics::act_value_mat(numerics::Activation::Tanh, sraw);
    lc.s = cap * lc.tanh_sraw;
    Mat t = layer.shift_net.forward(params_, a, lc.shift_cache);
    Mat b_out = (b - t).array() * (-lc.s).array().exp();
    lc.low_b = b_out;
    scatter_cols(h, layer.trans_idx, b_out);
    logdet_inv -= lc.s.rowwise().sum();
  }
  return {h, logdet_inv};
}

double CouplingFlow::log_prob(const Vec& x) const { return log_prob_batch(x.transpose())[0]; }

Vec CouplingFlow::log_prob_batch(const Mat& x) const {
  auto [z, logdet_inv] = inverse(x);
  return base_.log_density_batch(z) + logdet_inv;
}

Mat CouplingFlow::sample(int count, rng::RngStream& stream) const {
  return forward(base_.sample(count, stream)).first;
}

std::pair<Mat, Vec> CouplingFlow::sample_with_log_prob(int count, rng::RngStream& stream) const {
  Mat z = base_.sample(count, stream);
  auto [x, logdet] = forward(z);
  Vec logp = base_.log_density_batch(z) - logdet;
  return {x, logp};
}

Mat CouplingFlow::backward_forward_pass(const FlowCache& cache, const Mat& dx, const Vec& dlogdet,
                                        std::span<double> pgrad) const {
  if (cache.layers.size() != layers_.size()) throw InputError("CouplingFlow: cache does not match flow");
  Mat g = dx;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& layer = layers_[k];
    const auto& lc = cache.layers[k];
    Mat gb = gather_cols(g, layer.trans_idx);
    Mat ga = gather_cols(g, layer.mask_idx);
    Mat exp_s = lc.s.array().exp();
    // b_out = b_in * exp(s) + t; logdet += rowsum(s)
    Mat ds = gb.array() * lc.low_b.array() * exp_s.array();
    ds.colwise() += dlogdet;
    Mat dt = gb;
    Mat db_in = gb.array() * exp_s.array();
    ga += net_vjp(layer, lc, ds, dt, pgrad);
    scatter_cols(g, layer.trans_idx, db_in);
    scatter_cols(g, layer.mask_idx, ga);
  }
  return g;
}

Mat CouplingFlow::backward_inverse_pass(const FlowCache& cache, const Mat& dz, const Vec& dlogdet_inv,
                                        std::span<double> pgrad) const {
  if (cache.layers.size() != layers_.size()) throw InputError("CouplingFlow: cache does not match flow");
  Mat g = dz;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    const auto& lc = cache.layers[k];
    Mat gb = gather_cols(g, layer.trans_idx);
    Mat ga = gather_cols(g, layer.mask_idx);
    Mat exp_neg_s = (-lc.s).array().exp();
    // z_b = (x_b - t) * exp(-s); logdet_inv -= rowsum(s)
    Mat ds = -(gb.array() * lc.low_b.array());
    ds.colwise() -= dlogdet_inv;
    Mat dt = -(gb.array() * exp_neg_s.array());
    Mat db_in = gb.array() * exp_neg_s.array();
    ga += net_vjp(layer, lc, ds, dt, pgrad);
    scatter_cols(g, layer.trans_idx, db_in);
    scatter_cols(g, layer.mask_idx, ga);
  }
  return g;
}

Mat CouplingFlow::net_vjp(const CouplingLayer& layer, const LayerCache& lc, const Mat& ds, const Mat& dt,
                          std::span<double> pgrad) const {
  const double cap = params_.span(layer.cap_offset, 1)[0];
  // s = cap * tanh(sraw)
  Mat dsraw = ds.array() * cap * (1.0 - lc.tanh_sraw.array().square());
  if (!pgrad.empty()) pgrad[layer.cap_offset] += (ds.array() * lc.tanh_sraw.array()).sum();
  Mat da = layer.scale_net.backward(params_, lc.scale_cache, dsraw, pgrad);
  da += layer.shift_net.backward(params_, lc.shift_cache, dt, pgrad);
  return da;
}

numerics::GradientRecord CouplingFlow::mle_gradient(const Mat& batch) const {
  if (batch.rows() == 0) throw InputError("CouplingFlow::mle_gradient: empty batch");
  const int n = static_cast<int>(batch.rows());
  const double inv_n = 1.0 / static_cast<double>(n);
  const int block = 256;
  const int nb = exec::num_blocks(n, block);
  std::vector<Eigen::VectorXd> buffers(static_cast<std::size_t>(nb));
  std::vector<double> values(static_cast<std::size_t>(nb), 0.0);
  exec::for_blocks(
      n, true,
      [&](int begin, int count, int b) {
        auto& buf = buffers[static_cast<std::size_t>(b)];
        buf = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params_.size()));
        FlowCache cache;
        Mat rows = batch.middleRows(begin, count);
        auto [z, ldi] = inverse(rows, cache);
        values[static_cast<std::size_t>(b)] =
            (base_.log_density_batch(z) + ldi).sum() * inv_n;
        Mat dzr = base_.score_batch(z) * inv_n;
        Vec dldi = Vec::Constant(count, inv_n);
        backward_inverse_pass(cache, dzr, dldi, {buf.data(), params_.size()});
      },
      block);
  numerics::GradientRecord rec;
  rec.grads = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params_.size()));
  for (int b = 0; b < nb; ++b) {
    rec.grads += buffers[static_cast<std::size_t>(b)];
    rec.value += values[static_cast<std::size_t>(b)];
  }
  return rec;
}

bool CouplingFlow::mle_step(const Mat& batch, double rate) {
  numerics::GradientRecord g = mle_gradient(batch);
  if (!g.grads.allFinite() || !std::isfinite(g.value)) return false;
  numerics::sgd_step(params_, g, rate, numerics::StepDirection::Ascent);
  return true;
}

numerics::GradientRecord CouplingFlow::reverse_kl_gradient(const Mat& z,
                                                           const numerics::ScalarField& target) const {
  if (z.rows() == 0) throw InputError("CouplingFlow::reverse_kl_gradient: empty batch");
  const int n = static_cast<int>(z.rows());
  const double inv_n = 1.0 / static_cast<double>(n);
  FlowCache cache;
  auto [x, logdet] = forward(z, cache);
  Vec logp_base = base_.log_density_batch(z);
  Vec logpi = target.value_batch(x);
  numerics::GradientRecord rec;
  rec.value = (logp_base - logdet - logpi).mean();
  rec.grads = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params_.size()));
  Mat dx = -target.grad_batch(x) * inv_n;
  Vec dld = Vec::Constant(n, -inv_n);
  backward_forward_pass(cache, dx, dld, {rec.grads.data(), params_.size()});
  if (!std::isfinite(rec.value) || !rec.grads.allFinite())
    throw NumericError("reverse_kl_gradient: non-finite loss or gradient");
  return rec;
}

void CouplingFlow::reverse_kl_pretrain(const numerics::ScalarField& target, int steps, double rate,
                                       int batch_size, rng::RngStream& stream) {
  for (int s = 0; s < steps; ++s) {
    Mat z = base_.sample(batch_size, stream);
    numerics::GradientRecord g = reverse_kl_gradient(z, target);
    numerics::sgd_step(params_, g, rate, numerics::StepDirection::Descent);
  }
}

numerics::ScalarField CouplingFlow::pullback_field(const numerics::ScalarField& f) const {
  numerics::ScalarField u;
  u.dim = dim_;
  const CouplingFlow* self = this;
  u.value_batch = [self, f](const Mat& z) {
    auto [x, logdet] = self->forward(z);
    return (f.value_batch(x) + logdet).eval();
  };
  u.grad_batch = [self, f](const Mat& z) {
    FlowCache cache;
    auto [x, logdet] = self->forward(z, cache);
    (void)logdet;
    Mat dx = f.grad_batch(x);
    Vec dld = Vec::Ones(z.rows());
    return self->backward_forward_pass(cache, dx, dld, {});
  };
  u.value_and_grad_batch = [self, f](const Mat& z) {
    FlowCache cache;
    auto [x, logdet] = self->forward(z, cache);
    auto [v, dx] = f.eval_value_and_grad(x);
    Vec val = v + logdet;
    Mat dz = self->backward_forward_pass(cache, dx, Vec::Ones(z.rows()), {});
    return std::make_pair(val, dz);
  };
  u.value = [u](const Vec& z) { return u.value_batch(z.transpose())[0]; };
  u.grad = [u](const Vec& z) { return u.grad_batch(z.transpose()).row(0).transpose().eval(); };
  return u;
}

}  // namespace ebmflow::flow
