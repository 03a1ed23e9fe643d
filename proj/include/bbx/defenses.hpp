#pragma once

#include <cmath>
#include <memory>

#include "bbx/oracle.hpp"
#include "bbx/rng.hpp"
#include "bbx/spectral.hpp"

namespace bbx {

struct RndConfig {
  double sigma = 0.02;
  std::uint64_t seed = 0;
};

enum class AaaVariant { Linear, Sine };

struct AaaConfig {
  AaaVariant variant = AaaVariant::Linear;
  double tau = 1.0;    // attractor period in margin space
  double kappa = 1.0;  // reversal slope / amplitude
};

// Random Noise Defense: every query evaluates the inner oracle on x + nu,
// nu ~ N(0, sigma^2 I), drawn fresh per query. Counting delegates to inner.
class RndOracle : public ModelOracle {
 public:
  RndOracle(std::shared_ptr<ModelOracle> inner, RndConfig cfg)
      : inner_(std::move(inner)), cfg_(cfg), rng_(cfg.seed, 0x5244) {}

  OracleMeta meta() const override { return inner_->meta(); }

  Tensor query_logits(const Tensor& batch) override {
    return inner_->query_logits(noisy(batch));
  }

  std::vector<std::size_t> query_label(const Tensor& batch) override {
    return inner_->query_label(noisy(batch));
  }

  Tensor peek_logits(const Tensor& batch) override { return inner_->peek_logits(noisy(batch)); }

  std::vector<std::size_t> peek_label(const Tensor& batch) override {
    return inner_->peek_label(noisy(batch));
  }

  std::uint64_t queries_used() const override { return inner_->queries_used(); }

 private:
  Tensor noisy(const Tensor& batch) {
    if (cfg_.sigma == 0) return batch;
    Tensor out = batch;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += cfg_.sigma * rng_.gaussian();
    return out;
  }

  std::shared_ptr<ModelOracle> inner_;
  RndConfig cfg_;
  Rng rng_;
};

// Attack-on-attacker defense: remaps the top-two-logit margin onto a
// periodic attractor with locally reversed slope, preserving the argmax, so
// score-based optimizers read improvement where the true margin worsened.
// Hard-label access is untouched.
class AaaOracle : public ModelOracle {
 public:
  AaaOracle(std::shared_ptr<ModelOracle> inner, AaaConfig cfg)
      : inner_(std::move(inner)), cfg_(cfg) {
    if (cfg_.tau <= 0 || cfg_.kappa <= 0)
      throw std::invalid_argument("aaa requires tau > 0 and kappa > 0");
  }

  OracleMeta meta() const override { return inner_->meta(); }

  Tensor query_logits(const Tensor& batch) override { return remap(inner_->query_logits(batch)); }

  std::vector<std::size_t> query_label(const Tensor& batch) override {
    return inner_->query_label(batch);
  }

  Tensor peek_logits(const Tensor& batch) override { return remap(inner_->peek_logits(batch)); }

  std::vector<std::size_t> peek_label(const Tensor& batch) override {
    return inner_->peek_label(batch);
  }

  std::uint64_t queries_used() const override { return inner_->queries_used(); }

  // The margin attractor map, exposed for direct testing.
  double attractor(double m) const {
    double period = std::floor(m / cfg_.tau);
    double mid = (period + 0.5) * cfg_.tau;
    double out;
    if (cfg_.variant == AaaVariant::Linear) {
      out = mid - cfg_.kappa * (m - mid);
    } else {
      out = mid - cfg_.kappa * (cfg_.tau / (2.0 * kPi)) * std::sin(2.0 * kPi * (m - mid) / cfg_.tau);
    }
    return std::max(out, 1e-9);  // argmax must survive the remap
  }

 private:
  Tensor remap(Tensor z) const {
    std::size_t k = meta().classes;
    std::size_t b = z.size() / k;
    for (std::size_t i = 0; i < b; ++i) {
      double* row = z.data() + i * k;
      std::size_t top = 0, second = k;
      for (std::size_t j = 1; j < k; ++j)
        if (row[j] > row[top]) top = j;
      double best = -1e300;
      for (std::size_t j = 0; j < k; ++j)
        if (j != top && row[j] > best) {
          best = row[j];
          second = j;
        }
      double m = row[top] - row[second];
      double shift = (attractor(m) - m) / 2.0;
      row[top] += shift;
      row[second] -= shift;
    }
    return z;
  }

  std::shared_ptr<ModelOracle> inner_;
  AaaConfig cfg_;
};

inline std::shared_ptr<ModelOracle> wrap_rnd(std::shared_ptr<ModelOracle> inner, RndConfig cfg) {
  return std::make_shared<RndOracle>(std::move(inner), cfg);
}

inline std::shared_ptr<ModelOracle> wrap_aaa(std::shared_ptr<ModelOracle> inner, AaaConfig cfg) {
  return std::make_shared<AaaOracle>(std::move(inner), cfg);
}

}  // namespace bbx
