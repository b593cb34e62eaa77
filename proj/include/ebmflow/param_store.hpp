#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ebmflow/errors.hpp"

namespace ebmflow::numerics {

struct ParamEntry {
  std::string name;
  std::size_t offset = 0;
  std::vector<std::size_t> shape;

  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t s : shape) n *= s;
    return n;
  }
};

// Flat parameter vector with named, non-overlapping sub-ranges that cover the
// whole array. Energy-net and flow parameters both live in stores like this.
class ParamStore {
 public:
  // Appends a zero-initialized block and returns its offset.
  std::size_t add(std::string name, std::vector<std::size_t> shape) {
    ParamEntry e{std::move(name), values_.size(), std::move(shape)};
    for (const auto& other : layout_) {
      if (other.name == e.name) throw InputError("ParamStore: duplicate entry name '" + e.name + "'");
    }
    values_.resize(values_.size() + e.size(), 0.0);
    layout_.push_back(e);
    return layout_.back().offset;
  }

  std::size_t size() const { return values_.size(); }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  std::span<double> span(std::size_t offset, std::size_t count) {
    check_range(offset, count);
    return {values_.data() + offset, count};
  }
  std::span<const double> span(std::size_t offset, std::size_t count) const {
    check_range(offset, count);
    return {values_.data() + offset, count};
  }

  Eigen::Map<Eigen::VectorXd> vector() { return {values_.data(), static_cast<Eigen::Index>(values_.size())}; }
  Eigen::Map<const Eigen::VectorXd> vector() const {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }

  const std::vector<ParamEntry>& layout() const { return layout_; }

  const ParamEntry& entry(const std::string& name) const {
    for (const auto& e : layout_) {
      if (e.name == name) return e;
    }
    throw InputError("ParamStore: no entry named '" + name + "'");
  }

  bool has_entry(const std::string& name) const {
    for (const auto& e : layout_) {
      if (e.name == name) return true;
    }
    return false;
  }

 private:
  void check_range(std::size_t offset, std::size_t count) const {
    if (offset + count > values_.size()) throw InputError("ParamStore: span out of range");
  }

  std::vector<double> values_;
  std::vector<ParamEntry> layout_;
};

// Scalar value plus its gradient with respect to one ParamStore layout.
struct GradientRecord {
  double value = 0.0;
  Eigen::VectorXd grads;
};

enum class StepDirection { Descent, Ascent };

// Plain SGD update: params -/+ rate * grads, exactly the textbook rule.
inline void sgd_step(ParamStore& params, const GradientRecord& grad, double rate, StepDirection dir) {
  if (static_cast<std::size_t>(grad.grads.size()) != params.size())
    throw InputError("sgd_step: gradient length does not match parameter store");
  const double sign = (dir == StepDirection::Descent) ? -1.0 : 1.0;
  params.vector() += sign * rate * grad.grads;
}

// Adam is an opt-in alternative; trainers default to plain SGD.
struct AdamState {
  Eigen::VectorXd m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void init(std::size_t n) {
    m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    t = 0;
  }
};

inline void adam_step(ParamStore& params, const GradientRecord& grad, double rate, StepDirection dir,
                      AdamState& state) {
  if (static_cast<std::size_t>(grad.grads.size()) != params.size())
    throw InputError("adam_step: gradient length does not match parameter store");
  if (state.m.size() != grad.grads.size()) state.init(params.size());
  const double sign = (dir == StepDirection::Descent) ? -1.0 : 1.0;
  ++state.t;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad.grads;
  state.v = state.beta2 * state.v.array().matrix() +
            (1.0 - state.beta2) * grad.grads.array().square().matrix();
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  Eigen::ArrayXd mhat = state.m.array() / bc1;
  Eigen::ArrayXd vhat = state.v.array() / bc2;
  params.vector().array() += sign * rate * mhat / (vhat.sqrt() + state.eps);
}

}  // namespace ebmflow::numerics
