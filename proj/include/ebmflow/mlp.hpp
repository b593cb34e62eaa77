#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/errors.hpp"
#include "ebmflow/param_store.hpp"
#include "ebmflow/rng.hpp"

namespace ebmflow::numerics {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Smooth activations only: Langevin samplers need C^1 energies.
enum class Activation { Tanh, Softplus, Silu };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
    case Activation::Silu: return "silu";
  }
  return "tanh";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "softplus") return Activation::Softplus;
  if (s == "silu") return Activation::Silu;
  throw InputError("unknown activation '" + s + "'");
}

// Whole-array activation forms so Eigen can use its vectorized exp/log1p;
// elementwise std::exp through unaryExpr dominates the runtime otherwise.
inline Eigen::MatrixXd act_value_mat(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::Tanh:
      // tanh(x) = 1 - 2 / (exp(2x) + 1); saturates correctly at +/-1
      return (1.0 - 2.0 * ((2.0 * z.array()).exp() + 1.0).inverse()).matrix();
    case Activation::Softplus:
      return (z.array().max(0.0) + (-z.array().abs()).exp().log1p()).matrix();
    case Activation::Silu:
      return (z.array() * ((-z.array()).exp() + 1.0).inverse()).matrix();
  }
  return z;
}

inline Eigen::MatrixXd act_deriv_mat(Activation a, const Eigen::MatrixXd& z) {
  switch (a) {
    case Activation::Tanh: {
      Eigen::ArrayXXd t = 1.0 - 2.0 * ((2.0 * z.array()).exp() + 1.0).inverse();
      return (1.0 - t.square()).matrix();
    }
    case Activation::Softplus:
      return ((-z.array()).exp() + 1.0).inverse().matrix();
    case Activation::Silu: {
      Eigen::ArrayXXd s = ((-z.array()).exp() + 1.0).inverse();
      return (s * (1.0 + z.array() * (1.0 - s))).matrix();
    }
  }
  return z;
}

inline double act_value(Activation a, double x) {
  Eigen::MatrixXd z(1, 1);
  z(0, 0) = x;
  return act_value_mat(a, z)(0, 0);
}

inline double act_deriv(Activation a, double x) {
  Eigen::MatrixXd z(1, 1);
  z(0, 0) = x;
  return act_deriv_mat(a, z)(0, 0);
}

// Forward-pass intermediates needed by the layer-wise backward pass.
struct MlpCache {
  std::vector<Mat> inputs;  // inputs[l] = input matrix of layer l
  std::vector<Mat> pre;     // pre[l]    = pre-activation of layer l
};

// Fully-connected network over a ParamStore region. The Mlp itself is a
// cheap descriptor (widths + offsets); all parameter values live in the store,
// so evaluation is deterministic given (store, input).
class Mlp {
 public:
  Mlp() = default;

  // Registers weight/bias blocks "<name>.w<l>" / "<name>.b<l>" in the store.
  static Mlp create(ParamStore& store, const std::string& name, std::vector<int> widths, Activation act) {
    validate_widths(widths);
    Mlp m;
    m.name_ = name;
    m.widths_ = std::move(widths);
    m.act_ = act;
    for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) {
      const auto in = static_cast<std::size_t>(m.widths_[l]);
      const auto out = static_cast<std::size_t>(m.widths_[l + 1]);
      m.w_off_.push_back(store.add(name + ".w" + std::to_string(l), {out, in}));
      m.b_off_.push_back(store.add(name + ".b" + std::to_string(l), {out}));
    }
    return m;
  }

  // Rebinds to blocks previously registered under the same name (checkpoints).
  static Mlp attach(const ParamStore& store, const std::string& name, std::vector<int> widths, Activation act) {
    validate_widths(widths);
    Mlp m;
    m.name_ = name;
    m.widths_ = std::move(widths);
    m.act_ = act;
    for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) {
      const auto& we = store.entry(name + ".w" + std::to_string(l));
      const auto& be = store.entry(name + ".b" + std::to_string(l));
      if (we.size() != static_cast<std::size_t>(m.widths_[l]) * static_cast<std::size_t>(m.widths_[l + 1]) ||
          be.size() != static_cast<std::size_t>(m.widths_[l + 1]))
        throw InputError("Mlp::attach: stored shapes do not match widths for '" + name + "'");
      m.w_off_.push_back(we.offset);
      m.b_off_.push_back(be.offset);
    }
    return m;
  }

  int in_dim() const { return widths_.front(); }
  int out_dim() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  Activation activation() const { return act_; }
  const std::string& name() const { return name_; }
  std::size_t n_layers() const { return w_off_.size(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l)
      n += static_cast<std::size_t>(widths_[l] + 1) * static_cast<std::size_t>(widths_[l + 1]);
    return n;
  }

  // Xavier-uniform hidden layers; final layer scaled by `final_scale`.
  // final_scale = 0 gives an exactly-zero output map, the identity/zero-energy
  // initialization used throughout.
  void init_random(ParamStore& store, rng::RngStream& stream, double final_scale = 0.0) const {
    for (std::size_t l = 0; l < w_off_.size(); ++l) {
      const int in = widths_[l];
      const int out = widths_[l + 1];
      const bool last = (l + 1 == w_off_.size());
      const double a = last ? final_scale : std::sqrt(6.0 / static_cast<double>(in + out));
      auto w = store.span(w_off_[l], static_cast<std::size_t>(in) * static_cast<std::size_t>(out));
      for (double& v : w) v = a * (2.0 * stream.uniform() - 1.0);
      auto b = store.span(b_off_[l], static_cast<std::size_t>(out));
      for (double& v : b) v = 0.0;
    }
  }

  Mat forward(const ParamStore& store, const Mat& x) const {
    MlpCache* none = nullptr;
    return forward_impl(store, x, none);
  }

  Mat forward(const ParamStore& store, const Mat& x, MlpCache& cache) const {
    MlpCache* c = &cache;
    return forward_impl(store, x, c);
  }

  // Backward pass for upstream gradient dY (n x out). Returns dX (n x in) and,
  // when param_grad is non-empty, accumulates parameter gradients into it.
  // param_grad must span the full store this Mlp lives in.
  Mat backward(const ParamStore& store, const MlpCache& cache, const Mat& dy,
               std::span<double> param_grad) const {
    if (cache.pre.size() != w_off_.size()) throw InputError("Mlp::backward: cache does not match network");
    if (dy.cols() != out_dim()) throw InputError("Mlp::backward: upstream gradient has wrong width");
    const bool want_params = !param_grad.empty();

    Mat dz = dy;
    for (std::size_t li = w_off_.size(); li-- > 0;) {
      const int in = widths_[li];
      const int out = widths_[li + 1];
      if (li + 1 != w_off_.size()) {
        // dz currently holds dA of this layer's output; fold in activation.
        dz.array() *= act_deriv_mat(act_, cache.pre[li]).array();
      }
      Eigen::Map<const RowMajorMat> w(store.data() + w_off_[li], out, in);
      if (want_params) {
        Eigen::Map<RowMajorMat> dw(param_grad.data() + w_off_[li], out, in);
        dw.noalias() += dz.transpose() * cache.inputs[li];
        Eigen::Map<Vec> db(param_grad.data() + b_off_[li], out);
        db.noalias() += dz.colwise().sum().transpose();
      }
      Mat dx(dz.rows(), in);
      dx.noalias() = dz * w;
      dz.swap(dx);
    }
    return dz;
  }

 private:
  static void validate_widths(const std::vector<int>& widths) {
    if (widths.size() < 2) throw InputError("Mlp: need at least input and output widths");
    for (int w : widths)
      if (w <= 0) throw InputError("Mlp: layer widths must be positive");
  }

  Mat forward_impl(const ParamStore& store, const Mat& x, MlpCache* cache) const {
    if (x.cols() != in_dim()) throw InputError("Mlp::forward: input has dimension " + std::to_string(x.cols()) +
                                               ", expected " + std::to_string(in_dim()));
    if (cache) {
      cache->inputs.assign(w_off_.size(), Mat());
      cache->pre.assign(w_off_.size(), Mat());
    }
    Mat a = x;
    for (std::size_t l = 0; l < w_off_.size(); ++l) {
      const int in = widths_[l];
      const int out = widths_[l + 1];
      Eigen::Map<const RowMajorMat> w(store.data() + w_off_[l], out, in);
      Eigen::Map<const Vec> b(store.data() + b_off_[l], out);
      if (cache) cache->inputs[l] = a;
      Mat z(a.rows(), out);
      z.noalias() = a * w.transpose();
      z.rowwise() += b.transpose();
      if (cache) cache->pre[l] = z;
      if (l + 1 != w_off_.size()) {
        a = act_value_mat(act_, z);
      } else {
        a.swap(z);
      }
    }
    return a;
  }

  std::string name_;
  std::vector<int> widths_;
  Activation act_ = Activation::Tanh;
  std::vector<std::size_t> w_off_, b_off_;
};

}  // namespace ebmflow::numerics
