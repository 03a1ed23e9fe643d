#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "bbx/tensor.hpp"

namespace bbx {

// Deterministic PCG32 stream. Identical seeds give identical draws on every
// platform, which keeps sampling-heavy attacks replayable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : state_(0), inc_((stream << 1u) | 1u) {
    next_u32();
    state_ += seed;
    next_u32();
  }

  // Derives an independent stream, e.g. one per example in a campaign.
  Rng split(std::uint64_t stream) const { return Rng(state_, stream ^ (inc_ >> 1)); }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31));
  }

  std::uint64_t next_u64() {
    return (static_cast<std::uint64_t>(next_u32()) << 32) | next_u32();
  }

  // Uniform in [0, 1).
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return n <= 1 ? 0 : static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  double gaussian() {
    // Box-Muller; cached second value kept out intentionally so the stream
    // consumption per draw is fixed.
    double u1 = 0;
    do {
      u1 = uniform();
    } while (u1 <= 0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double rademacher() { return (next_u32() & 1u) ? 1.0 : -1.0; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

inline Tensor gaussian_tensor(Rng& rng, std::vector<std::size_t> shape) {
  std::vector<double> data(Tensor::count(shape));
  for (auto& v : data) v = rng.gaussian();
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor rademacher_tensor(Rng& rng, std::vector<std::size_t> shape) {
  std::vector<double> data(Tensor::count(shape));
  for (auto& v : data) v = rng.rademacher();
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor uniform_tensor(Rng& rng, std::vector<std::size_t> shape, double lo, double hi) {
  std::vector<double> data(Tensor::count(shape));
  for (auto& v : data) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(data));
}

// Unit-L2 direction drawn uniformly on the sphere.
inline Tensor uniform_sphere(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t = gaussian_tensor(rng, std::move(shape));
  double n = norm(t, NormKind::L2);
  while (n == 0) {
    t = gaussian_tensor(rng, t.shape());
    n = norm(t, NormKind::L2);
  }
  return t * (1.0 / n);
}

}  // namespace bbx
