#pragma once

#include <cmath>
#include <cstdint>
#include <Eigen/Core>

namespace ebmflow::rng {

// SplitMix64: the state advances by a fixed increment and the output is a
// hash of the state, so a stream is fully determined by its starting state.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent counter-based stream. Chains, trainers and samplers each own
// their stream, which makes results independent of how work is scheduled
// across threads.
class RngStream {
 public:
  RngStream() : state_(0) {}
  explicit RngStream(std::uint64_t seed) { state_ = scramble(seed, 0x1234567812345678ULL); }

  // Decorrelated substream: used to give every chain its own stream.
  static RngStream substream(std::uint64_t seed, std::uint64_t id) {
    RngStream s;
    s.state_ = scramble(seed, scramble(id, 0x9e3779b97f4a7c15ULL));
    return s;
  }

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in the open interval (0, 1); never returns 0 or 1.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54; }

  // Uniform integer in [0, n) without modulo bias.
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller (one value per call; two uniforms consumed).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  static std::uint64_t scramble(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    std::uint64_t out = splitmix64_next(s);
    out ^= splitmix64_next(s);
    return out;
  }

  std::uint64_t state_;
};

}  // namespace ebmflow::rng
