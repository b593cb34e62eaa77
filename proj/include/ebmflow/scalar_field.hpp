#pragma once

#include <functional>
#include <string>

#include <Eigen/Core>

#include "ebmflow/errors.hpp"
#include "ebmflow/param_store.hpp"

namespace ebmflow::numerics {

// Differentiable scalar function of R^d carrying its own analytic gradient
// (layer-wise backprop for models, closed form for targets). Batched forms
// evaluate one row per sample.
struct ScalarField {
  int dim = 0;
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
  std::function<Eigen::VectorXd(const Eigen::MatrixXd&)> value_batch;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> grad_batch;
  // Optional fused form; saves one forward pass on gradient-based kernels.
  std::function<std::pair<Eigen::VectorXd, Eigen::MatrixXd>(const Eigen::MatrixXd&)> value_and_grad_batch;

  std::pair<Eigen::VectorXd, Eigen::MatrixXd> eval_value_and_grad(const Eigen::MatrixXd& x) const {
    if (value_and_grad_batch) return value_and_grad_batch(x);
    return {value_batch(x), grad_batch(x)};
  }
};

// Fills in batched forms by looping over rows when only scalar forms exist.
inline ScalarField with_default_batch(ScalarField f) {
  if (!f.value_batch) {
    auto v = f.value;
    f.value_batch = [v](const Eigen::MatrixXd& x) {
      Eigen::VectorXd out(x.rows());
      for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = v(x.row(i).transpose());
      return out;
    };
  }
  if (!f.grad_batch) {
    auto g = f.grad;
    f.grad_batch = [g](const Eigen::MatrixXd& x) {
      Eigen::MatrixXd out(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = g(x.row(i).transpose()).transpose();
      return out;
    };
  }
  return f;
}

// Exact gradient of f at x (analytic/reverse-mode, never finite differences).
inline Eigen::VectorXd grad_wrt_input(const ScalarField& f, const Eigen::VectorXd& x) {
  if (x.size() != f.dim) throw InputError("grad_wrt_input: point has wrong dimension");
  Eigen::VectorXd g = f.grad(x);
  if (!g.allFinite())
    throw NumericError("grad_wrt_input: non-finite gradient at queried point");
  return g;
}

// Scalar loss of a ParamStore with an analytic gradient path.
struct ParamLoss {
  std::function<double(const ParamStore&)> value;
  // Fills `grad` (sized to the store) and returns the loss value.
  std::function<double(const ParamStore&, std::span<double>)> value_and_grad;
};

inline GradientRecord grad_wrt_params(const ParamLoss& loss, const ParamStore& params) {
  GradientRecord rec;
  rec.grads = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  rec.value = loss.value_and_grad(params, {rec.grads.data(), params.size()});
  if (!std::isfinite(rec.value)) throw NumericError("grad_wrt_params: loss is non-finite");
  if (!rec.grads.allFinite()) throw NumericError("grad_wrt_params: gradient has non-finite entries");
  return rec;
}

}  // namespace ebmflow::numerics
