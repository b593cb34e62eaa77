#pragma once

#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/base_distribution.hpp"
#include "ebmflow/errors.hpp"
#include "ebmflow/mlp.hpp"
#include "ebmflow/param_store.hpp"
#include "ebmflow/rng.hpp"
#include "ebmflow/scalar_field.hpp"

namespace ebmflow::flow {

// One affine coupling layer. Coordinates in `mask_idx` pass through and feed
// the conditioner nets; coordinates in `trans_idx` are transformed as
// b' = b * exp(s(a)) + t(a) with s = cap * tanh(scale_net(a)). The bounded
// scale keeps the log-determinant from blowing up early in training.
struct CouplingLayer {
  numerics::Mlp scale_net;
  numerics::Mlp shift_net;
  std::vector<int> mask_idx;
  std::vector<int> trans_idx;
  std::size_t cap_offset = 0;  // learnable scalar cap
};

struct LayerCache {
  numerics::MlpCache scale_cache, shift_cache;
  Eigen::MatrixXd tanh_sraw;  // tanh of raw scale-net output
  Eigen::MatrixXd s;          // bounded log-scale
  Eigen::MatrixXd low_b;      // transformed coords on the latent side of the layer
};

struct FlowCache {
  std::vector<LayerCache> layers;
};

// RealNVP-style flow: alternating even/odd masks, affine coupling (bijective
// for every parameter value), exact density and sampling. Evaluation is
// read-only on parameters; training steps mutate them under exclusive access.
class CouplingFlow {
 public:
  CouplingFlow() = default;

  // Final net layers start at zero, so the initial map is exactly the
  // identity and the pushforward density equals the base density.
  static CouplingFlow create(int dim, int n_layers, std::vector<int> hidden, BaseDistribution base,
                             std::uint64_t seed);

  int dim() const { return dim_; }
  int n_layers() const { return static_cast<int>(layers_.size()); }
  const std::vector<int>& hidden_widths() const { return hidden_; }
  const BaseDistribution& base() const { return base_; }
  numerics::ParamStore& params() { return params_; }
  const numerics::ParamStore& params() const { return params_; }

  // x = T(z) and log |J_T(z)|.
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> forward(const Eigen::MatrixXd& z) const;
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> forward(const Eigen::MatrixXd& z, FlowCache& cache) const;
  // z = T^{-1}(x) and log |J_{T^{-1}}(x)| = -log |J_T(z)|.
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> inverse(const Eigen::MatrixXd& x) const;
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> inverse(const Eigen::MatrixXd& x, FlowCache& cache) const;

  double log_prob(const Eigen::VectorXd& x) const;
  Eigen::VectorXd log_prob_batch(const Eigen::MatrixXd& x) const;

  Eigen::MatrixXd sample(int count, rng::RngStream& stream) const;
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> sample_with_log_prob(int count, rng::RngStream& stream) const;

  // VJP through the forward pass: upstream gradients dx on outputs and
  // dlogdet on the per-row log-determinant. Returns d/dz; accumulates
  // parameter gradients when pgrad is non-empty.
  Eigen::MatrixXd backward_forward_pass(const FlowCache& cache, const Eigen::MatrixXd& dx,
                                        const Eigen::VectorXd& dlogdet, std::span<double> pgrad) const;
  // VJP through the inverse pass (dz on latent outputs, dlogdet_inv on the
  // inverse log-determinant). Returns d/dx.
  Eigen::MatrixXd backward_inverse_pass(const FlowCache& cache, const Eigen::MatrixXd& dz,
                                        const Eigen::VectorXd& dlogdet_inv, std::span<double> pgrad) const;

  // Mean log-likelihood of the batch and its parameter gradient.
  numerics::GradientRecord mle_gradient(const Eigen::MatrixXd& batch) const;
  // One likelihood-ascent step; returns false (and leaves parameters
  // untouched) when the gradient is non-finite.
  bool mle_step(const Eigen::MatrixXd& batch, double rate);

  // Pathwise reverse-KL gradient: mean over rows of
  //   log rho(z) - logdet(z) - log pi(T(z)).
  numerics::GradientRecord reverse_kl_gradient(const Eigen::MatrixXd& z,
                                               const numerics::ScalarField& target) const;
  // Gradient steps on the reverse KL; target log-density may be unnormalized.
  void reverse_kl_pretrain(const numerics::ScalarField& target, int steps, double rate, int batch_size,
                           rng::RngStream& stream);

  // Latent-space pullback of a log-density field: U(z) = f(T(z)) + logdet(z),
  // with analytic gradient (the neutra-style preconditioned target).
  numerics::ScalarField pullback_field(const numerics::ScalarField& f) const;

 private:
  Eigen::MatrixXd net_vjp(const CouplingLayer& layer, const LayerCache& lc, const Eigen::MatrixXd& ds,
                          const Eigen::MatrixXd& dt, std::span<double> pgrad) const;

  int dim_ = 0;
  std::vector<int> hidden_;
  std::vector<CouplingLayer> layers_;
  BaseDistribution base_;
  numerics::ParamStore params_;
};

}  // namespace ebmflow::flow
