#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "ebmflow/checkpoint.hpp"
#include "ebmflow/mlp.hpp"
#include "ebmflow/param_store.hpp"
#include "ebmflow/rng.hpp"
#include "ebmflow/scalar_field.hpp"
#include "test_util.hpp"

using namespace ebmflow;
using numerics::Activation;
using numerics::Mlp;
using numerics::ParamStore;
using testutil::Mat;
using testutil::Vec;

namespace {

// 2->2 tanh layer + linear readout with hand-set weights.
struct HandNet {
  ParamStore store;
  Mlp net;

  HandNet() {
    net = Mlp::create(store, "f", {2, 2, 1}, Activation::Tanh);
    // W0 = [[0.5, -1.0], [2.0, 0.25]], b0 = (0.1, -0.2)
    auto w0 = store.span(store.entry("f.w0").offset, 4);
    w0[0] = 0.5; w0[1] = -1.0; w0[2] = 2.0; w0[3] = 0.25;
    auto b0 = store.span(store.entry("f.b0").offset, 2);
    b0[0] = 0.1; b0[1] = -0.2;
    // W1 = [[1.5, -0.5]], b1 = 0.3
    auto w1 = store.span(store.entry("f.w1").offset, 2);
    w1[0] = 1.5; w1[1] = -0.5;
    store.span(store.entry("f.b1").offset, 1)[0] = 0.3;
  }
};

}  // namespace

TEST_CASE("param store layout covers the array without overlap") {
  ParamStore store;
  const auto o1 = store.add("a", {2, 3});
  const auto o2 = store.add("b", {4});
  CHECK(o1 == 0);
  CHECK(o2 == 6);
  CHECK(store.size() == 10);
  std::size_t covered = 0;
  for (const auto& e : store.layout()) covered += e.size();
  CHECK(covered == store.size());
  CHECK_THROWS_AS(store.add("a", {1}), InputError);
  CHECK_THROWS_AS((void)store.entry("missing"), InputError);
}

TEST_CASE("mlp forward: zero weights give zero output") {
  ParamStore store;
  Mlp net = Mlp::create(store, "f", {2, 8, 1}, Activation::Softplus);
  Mat x(1, 2);
  x << 0.3, -4.0;
  CHECK(net.forward(store, x)(0, 0) == 0.0);
}

TEST_CASE("mlp forward: single affine layer with identity weights") {
  ParamStore store;
  Mlp net = Mlp::create(store, "f", {2, 2}, Activation::Tanh);
  auto w = store.span(store.entry("f.w0").offset, 4);
  w[0] = 1.0; w[3] = 1.0;  // identity
  Mat x(1, 2);
  x << 1.0, 2.0;
  Mat y = net.forward(store, x);
  CHECK(y(0, 0) == doctest::Approx(1.0));
  CHECK(y(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("mlp forward matches a hand-evaluated trace") {
  HandNet h;
  Mat x(1, 2);
  x << 0.5, -0.5;
  // pre = (0.5*0.5 - 1.0*(-0.5) + 0.1, 2.0*0.5 + 0.25*(-0.5) - 0.2) = (0.85, 0.675)
  // out = 1.5*tanh(0.85) - 0.5*tanh(0.675) + 0.3
  const double expected = 1.5 * std::tanh(0.85) - 0.5 * std::tanh(0.675) + 0.3;
  CHECK(h.net.forward(h.store, x)(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("mlp forward is pure (bit-identical repeats)") {
  ParamStore store;
  Mlp net = Mlp::create(store, "f", {3, 16, 16, 2}, Activation::Silu);
  rng::RngStream stream(12);
  net.init_random(store, stream, 0.5);
  rng::RngStream xs(5);
  Mat x(7, 3);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 3; ++j) x(i, j) = xs.normal();
  Mat a = net.forward(store, x);
  Mat b = net.forward(store, x);
  CHECK(a == b);
}

TEST_CASE("mlp rejects dimension mismatch") {
  ParamStore store;
  Mlp net = Mlp::create(store, "f", {2, 4, 1}, Activation::Tanh);
  CHECK_THROWS_AS(net.forward(store, Mat::Zero(1, 3)), InputError);
}

TEST_CASE("grad_wrt_input on analytic fields") {
  numerics::ScalarField quad;
  quad.dim = 2;
  quad.value = [](const Vec& x) { return 0.5 * x.squaredNorm(); };
  quad.grad = [](const Vec& x) { return x; };
  Vec x(2);
  x << 1.0, -2.0;
  Vec g = numerics::grad_wrt_input(quad, x);
  CHECK(g[0] == 1.0);
  CHECK(g[1] == -2.0);

  // standard normal log-density at the mode
  numerics::ScalarField normal;
  normal.dim = 2;
  normal.value = [](const Vec& x) { return -0.5 * x.squaredNorm(); };
  normal.grad = [](const Vec& x) { return (-x).eval(); };
  CHECK(numerics::grad_wrt_input(normal, Vec::Zero(2)).norm() == 0.0);
}

TEST_CASE("grad_wrt_input matches finite differences on a mixture log-density") {
  // two-component mixture, checked at (0.3, 0.3)
  auto logp = [](const Vec& x) {
    const double a = -0.5 * (x - Vec::Constant(2, 1.0)).squaredNorm();
    const double b = -0.5 * (x + Vec::Constant(2, 1.0)).squaredNorm();
    const double mx = std::max(a, b);
    return mx + std::log(0.5 * std::exp(a - mx) + 0.5 * std::exp(b - mx));
  };
  numerics::ScalarField f;
  f.dim = 2;
  f.value = logp;
  f.grad = [&](const Vec& x) {
    const double a = -0.5 * (x - Vec::Constant(2, 1.0)).squaredNorm();
    const double b = -0.5 * (x + Vec::Constant(2, 1.0)).squaredNorm();
    const double mx = std::max(a, b);
    const double wa = 0.5 * std::exp(a - mx), wb = 0.5 * std::exp(b - mx);
    return (((-(x - Vec::Constant(2, 1.0))) * wa + (-(x + Vec::Constant(2, 1.0))) * wb) / (wa + wb)).eval();
  };
  Vec x(2);
  x << 0.3, 0.3;
  Vec analytic = numerics::grad_wrt_input(f, x);
  Vec fd = testutil::fd_gradient(f.value, x);
  CHECK(testutil::max_rel_err(analytic, fd) < 1e-6);
}

TEST_CASE("grad_wrt_params: trivial cases") {
  ParamStore store;
  store.add("p", {2});
  store.span(0, 2)[0] = 3.0;
  store.span(0, 2)[1] = 4.0;

  numerics::ParamLoss constant;
  constant.value = [](const ParamStore&) { return 7.0; };
  constant.value_and_grad = [](const ParamStore&, std::span<double>) { return 7.0; };
  auto rec = numerics::grad_wrt_params(constant, store);
  CHECK(rec.value == 7.0);
  CHECK(rec.grads.norm() == 0.0);

  numerics::ParamLoss sqnorm;
  sqnorm.value = [](const ParamStore& s) { return s.vector().squaredNorm(); };
  sqnorm.value_and_grad = [](const ParamStore& s, std::span<double> g) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * s.data()[i];
    return s.vector().squaredNorm();
  };
  auto rec2 = numerics::grad_wrt_params(sqnorm, store);
  CHECK(rec2.grads[0] == doctest::Approx(6.0));
  CHECK(rec2.grads[1] == doctest::Approx(8.0));
}

TEST_CASE("mlp parameter gradients match central finite differences") {
  ParamStore store;
  Mlp net = Mlp::create(store, "f", {2, 6, 6, 1}, Activation::Softplus);
  rng::RngStream stream(77);
  net.init_random(store, stream, 0.4);
  Vec x0(2);
  x0 << 0.3, -0.7;

  numerics::ParamLoss loss;  // loss = E(x0)
  loss.value = [&](const ParamStore& s) { return net.forward(s, x0.transpose())(0, 0); };
  loss.value_and_grad = [&](const ParamStore& s, std::span<double> g) {
    numerics::MlpCache cache;
    Mat y = net.forward(s, x0.transpose(), cache);
    net.backward(s, cache, Mat::Ones(1, 1), g);
    return y(0, 0);
  };
  auto rec = numerics::grad_wrt_params(loss, store);
  Vec fd = testutil::fd_gradient([&](const Vec& p) {
    ParamStore probe = store;
    probe.vector() = p;
    return loss.value(probe);
  }, store.vector(), 1e-5);
  CHECK(testutil::max_rel_err(rec.grads, fd, 1e-6) < 1e-3);
}

TEST_CASE("analytic gradients agree with finite differences on 100 random probes") {
  ParamStore store;
  Mlp net = Mlp::create(store, "f", {2, 8, 8, 1}, Activation::Silu);
  rng::RngStream stream(3);
  net.init_random(store, stream, 0.3);
  rng::RngStream probes(9);
  int worst_count = 0;
  for (int probe = 0; probe < 100; ++probe) {
    Vec x(2);
    x << probes.normal(), probes.normal();
    numerics::MlpCache cache;
    net.forward(store, x.transpose(), cache);
    Vec g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(store.size()));
    net.backward(store, cache, Mat::Ones(1, 1), {g.data(), store.size()});
    Vec fd = testutil::fd_gradient([&](const Vec& p) {
      ParamStore s2 = store;
      s2.vector() = p;
      return net.forward(s2, x.transpose())(0, 0);
    }, store.vector(), 1e-5);
    if (testutil::max_rel_err(g, fd, 1e-6) >= 1e-3) ++worst_count;
  }
  CHECK(worst_count == 0);
}

TEST_CASE("input gradients propagate through the net") {
  HandNet h;
  Vec x(2);
  x << 0.2, 0.9;
  numerics::MlpCache cache;
  h.net.forward(h.store, x.transpose(), cache);
  Mat dx = h.net.backward(h.store, cache, Mat::Ones(1, 1), {});
  Vec fd = testutil::fd_gradient(
      [&](const Vec& p) { return h.net.forward(h.store, p.transpose())(0, 0); }, x, 1e-6);
  CHECK(testutil::max_rel_err(dx.row(0).transpose(), fd) < 1e-6);
}

TEST_CASE("sgd_step applies the update rule exactly") {
  ParamStore store;
  store.add("p", {2});
  store.span(0, 2)[0] = 1.0;
  store.span(0, 2)[1] = 1.0;
  numerics::GradientRecord g;
  g.grads = (Vec(2) << 1.0, -1.0).finished();

  numerics::sgd_step(store, g, 0.1, numerics::StepDirection::Descent);
  CHECK(store.data()[0] == doctest::Approx(0.9));
  CHECK(store.data()[1] == doctest::Approx(1.1));

  // zero gradient leaves parameters unchanged
  numerics::GradientRecord zero;
  zero.grads = Vec::Zero(2);
  ParamStore before = store;
  numerics::sgd_step(store, zero, 0.5, numerics::StepDirection::Descent);
  CHECK(store.vector() == before.vector());

  // rate 0 is the identity
  numerics::sgd_step(store, g, 0.0, numerics::StepDirection::Ascent);
  CHECK(store.vector() == before.vector());

  // ascent at rate r equals descent with the negated gradient
  ParamStore a = store, b = store;
  numerics::sgd_step(a, g, 0.2, numerics::StepDirection::Ascent);
  numerics::GradientRecord neg;
  neg.grads = -g.grads;
  numerics::sgd_step(b, neg, 0.2, numerics::StepDirection::Descent);
  CHECK(a.vector() == b.vector());

  numerics::GradientRecord wrong;
  wrong.grads = Vec::Zero(3);
  CHECK_THROWS_AS(numerics::sgd_step(store, wrong, 0.1, numerics::StepDirection::Descent), InputError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  ParamStore store;
  Mlp net = Mlp::create(store, "f", {3, 8, 2}, Activation::Tanh);
  rng::RngStream stream(1234);
  net.init_random(store, stream, 1.0);
  store.data()[0] = 0.1 + 0.2;  // a value with a non-terminating binary tail

  const std::string prefix = "ckpt_test_params";
  io::save_param_store(prefix, store);
  ParamStore loaded = io::load_param_store(prefix);
  REQUIRE(loaded.size() == store.size());
  CHECK(std::memcmp(loaded.data(), store.data(), store.size() * sizeof(double)) == 0);
  REQUIRE(loaded.layout().size() == store.layout().size());
  for (std::size_t i = 0; i < store.layout().size(); ++i) {
    CHECK(loaded.layout()[i].name == store.layout()[i].name);
    CHECK(loaded.layout()[i].offset == store.layout()[i].offset);
    CHECK(loaded.layout()[i].shape == store.layout()[i].shape);
  }
  std::remove((prefix + ".json").c_str());
  std::remove((prefix + ".bin").c_str());
}
