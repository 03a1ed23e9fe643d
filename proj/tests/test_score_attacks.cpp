#include <doctest.h>

#include <cmath>
#include <memory>

#include "bbx/model.hpp"
#include "bbx/oracle.hpp"
#include "bbx/score_attacks.hpp"

using namespace bbx;

namespace {

// logits = Wx + b over a [1, n] image-shaped input
std::shared_ptr<LocalOracle> linear_oracle(std::vector<double> w, std::vector<double> b,
                                           std::size_t n, std::size_t out) {
  Layer l;
  l.in = n;
  l.out = out;
  l.act = Activation::Identity;
  l.weight = std::move(w);
  l.bias = std::move(b);
  return std::make_shared<LocalOracle>(MlpModel({1, n}, {l}));
}

// margin flips once x0 drops below 0.5; x1 is irrelevant
std::shared_ptr<LocalOracle> threshold_oracle() {
  return linear_oracle({1.0, 0.0, -1.0, 0.0}, {0.0, 1.0}, 2, 2);
}

double cosine(const Tensor& a, const Tensor& b) {
  return dot(a, b) / (norm(a, NormKind::L2) * norm(b, NormKind::L2));
}

}  // namespace

TEST_CASE("attack name parsing") {
  CHECK(score_attack_from_string("simba") == ScoreAttackKind::Simba);
  CHECK(score_attack_from_string("square") == ScoreAttackKind::Square);
  CHECK(score_attack_from_string("ppba") == ScoreAttackKind::Ppba);
  CHECK(score_attack_from_string("nes") == ScoreAttackKind::Nes);
  CHECK(score_attack_from_string("zo_signsgd") == ScoreAttackKind::ZoSignSgd);
  CHECK(score_attack_from_string("signhunter") == ScoreAttackKind::SignHunter);
  CHECK(score_attack_from_string("bandits") == ScoreAttackKind::Bandits);
  CHECK_THROWS_AS(score_attack_from_string("fgsm"), ConfigInvalid);
}

TEST_CASE("low-frequency DCT ordering") {
  Tensor x({2, 3}, 0.0);
  auto order = detail::low_freq_order(x);
  // (r+c, r, c) ascending: (0,0) (0,1) (0,2)... -> 0, 1, 3, 2, 4, 5
  CHECK(order == std::vector<std::size_t>({0, 1, 3, 2, 4, 5}));

  Tensor multi({2, 2, 2}, 0.0);  // two planes interleave per position
  auto o2 = detail::low_freq_order(multi);
  CHECK(o2 == std::vector<std::size_t>({0, 4, 1, 5, 2, 6, 3, 7}));

  CHECK_THROWS_AS(detail::trailing_hw(Tensor({4}, 0.0)), NotImageShaped);
}

TEST_CASE("nes estimator points along the true gradient") {
  // f(x) = ||x - a||^2, grad = 2 (x - a); q must dwarf the dimension for the
  // estimator noise to allow cosine > 0.99
  Rng setup(101);
  Tensor a = uniform_tensor(setup, {2}, -1.0, 1.0);
  Tensor x = uniform_tensor(setup, {2}, -1.0, 1.0);
  auto f = [&a](const Tensor& p) {
    Tensor d = p - a;
    return dot(d, d);
  };
  Tensor grad = 2.0 * (x - a);
  Rng rng(102);
  Tensor ghat = nes_estimate(f, x, 1e-3, 100, rng);
  CHECK(cosine(ghat, grad) > 0.99);
}

TEST_CASE("nes estimator is exact in expectation for linear objectives") {
  // linear f: antithetic differences are noiseless, each pair contributes
  // (w . u) u, so with q=1 the estimate is (w . u) u exactly
  Tensor w({3}, {1.0, -2.0, 0.5});
  auto f = [&w](const Tensor& p) { return dot(w, p); };
  Tensor x({3}, 0.0);
  Rng rng(103);
  Rng probe(103);
  Tensor u = gaussian_tensor(probe, {3});
  Tensor ghat = nes_estimate(f, x, 0.01, 1, rng);
  double wu = dot(w, u);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ghat[i] == doctest::Approx(wu * u[i]).epsilon(1e-9));
}

TEST_CASE("zo sign estimate recovers gradient signs") {
  Rng setup(104);
  Tensor w = uniform_tensor(setup, {16}, 0.2, 1.0);
  for (std::size_t i = 0; i < w.size(); i += 2) w[i] = -w[i];
  auto f = [&w](const Tensor& p) { return dot(w, p); };
  Tensor x({16}, 0.0);
  Rng rng(105);
  Tensor ghat = zo_sign_estimate(f, x, 0.0, 1e-4, 1000, rng);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if ((ghat[i] > 0) == (w[i] > 0)) ++agree;
  CHECK(agree == w.size());
}

TEST_CASE("signhunter visits whole, halves, quarters") {
  SignHunterState st(4);
  CHECK(st.current_block() == std::pair<std::size_t, std::size_t>{0, 4});
  st.feedback(false);
  CHECK(st.current_block() == std::pair<std::size_t, std::size_t>{0, 2});
  st.feedback(false);
  CHECK(st.current_block() == std::pair<std::size_t, std::size_t>{2, 4});
  st.feedback(false);
  CHECK(st.current_block() == std::pair<std::size_t, std::size_t>{0, 1});
  st.feedback(false);
  CHECK(st.current_block() == std::pair<std::size_t, std::size_t>{1, 2});
  st.feedback(false);
  st.feedback(false);
  CHECK(st.current_block() == std::pair<std::size_t, std::size_t>{3, 4});
  st.feedback(false);
  // singleton level exhausted: wrap to the whole block
  CHECK(st.current_block() == std::pair<std::size_t, std::size_t>{0, 4});
}

TEST_CASE("signhunter flip bookkeeping") {
  SignHunterState st(4);
  auto f = st.flipped();
  CHECK(f == std::vector<double>({-1, -1, -1, -1}));
  st.feedback(true);  // adopt the whole-block flip
  CHECK(st.signs() == std::vector<double>({-1, -1, -1, -1}));
  CHECK(st.flipped() == std::vector<double>({1, 1, -1, -1}));
  st.feedback(true);
  CHECK(st.signs() == std::vector<double>({1, 1, -1, -1}));
}

TEST_CASE("signhunter solves separable sign recovery within 2n-1 flips") {
  // objective -s . t is minimized at s = sign(t); greedy block descent over
  // one full tree pass (2n-1 nodes for n a power of two) must land there
  Rng rng(106);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 8;
    std::vector<double> t(n);
    for (auto& v : t) v = rng.uniform(0.1, 1.0) * rng.rademacher();
    SignHunterState st(n);
    auto obj = [&t](const std::vector<double>& s) {
      double o = 0;
      for (std::size_t i = 0; i < s.size(); ++i) o -= s[i] * t[i];
      return o;
    };
    double best = obj(st.signs());
    for (int step = 0; step < 15; ++step) {  // 2n-1 = 15 nodes
      double cand = obj(st.flipped());
      bool improved = cand < best;
      if (improved) best = cand;
      st.feedback(improved);
    }
    for (std::size_t i = 0; i < n; ++i) CHECK(st.signs()[i] == (t[i] > 0 ? 1.0 : -1.0));
  }
}

TEST_CASE("simba crosses a nearby threshold in a handful of queries") {
  auto oracle = threshold_oracle();
  Tensor x({1, 2}, {0.52, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.step = 0.1;
  cfg.max_queries = 50;
  AttackTrace tr = simba(*oracle, x, crit, cfg, Rng(107));
  CHECK(tr.success);
  CHECK(tr.queries <= 6);  // init + at most +-step on each of two coordinates
  CHECK(tr.final_norm <= cfg.eps + 1e-12);
}

TEST_CASE("simba dct basis also works and respects the ball") {
  auto oracle = threshold_oracle();
  Tensor x({1, 2}, {0.53, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.step = 0.1;
  cfg.max_queries = 100;
  cfg.params["dct_basis"] = 1;
  AttackTrace tr = simba(*oracle, x, crit, cfg, Rng(108));
  CHECK(tr.success);
  CHECK(tr.final_norm <= cfg.eps + 1e-12);
}

TEST_CASE("square schedule halves p at the published budget fractions") {
  double p0 = 0.05;
  CHECK(detail::square_p(p0, 0, 10000) == doctest::Approx(0.05));
  CHECK(detail::square_p(p0, 20, 10000) == doctest::Approx(0.05 / 2));    // frac 0.002
  CHECK(detail::square_p(p0, 100, 10000) == doctest::Approx(0.05 / 4));   // frac 0.01
  CHECK(detail::square_p(p0, 5000, 10000) == doctest::Approx(0.05 / 128));
  CHECK(detail::square_p(p0, 9000, 10000) == doctest::Approx(0.05 / 512));

  CHECK(detail::square_side(1.0, 8, 8) == 8);
  CHECK(detail::square_side(0.25, 8, 8) == 4);
  CHECK(detail::square_side(1e-9, 8, 8) == 1);   // never below 1
  CHECK(detail::square_side(1.0, 2, 16) == 2);   // capped by min(h, w)
}

TEST_CASE("square attack succeeds on the threshold model under both norms") {
  for (NormKind nk : {NormKind::Linf, NormKind::L2}) {
    auto oracle = threshold_oracle();
    Tensor x({1, 2}, {0.55, 0.5});
    Criterion crit{false, 0, 0};
    AttackConfig cfg;
    cfg.norm = nk;
    cfg.eps = 0.15;
    cfg.max_queries = 300;
    AttackTrace tr = square_attack(*oracle, x, crit, cfg, Rng(109));
    CHECK(tr.success);
    CHECK(tr.final_norm <= cfg.eps + 1e-12);
  }
}

TEST_CASE("square rejects a bad p_init") {
  auto oracle = threshold_oracle();
  Tensor x({1, 2}, {0.9, 0.5});
  AttackConfig cfg;
  cfg.params["p_init"] = 0.0;
  CHECK_THROWS_AS(square_attack(*oracle, x, Criterion{false, 0, 0}, cfg, Rng(1)), ConfigInvalid);
  cfg.params["p_init"] = 1.5;
  CHECK_THROWS_AS(square_attack(*oracle, x, Criterion{false, 0, 0}, cfg, Rng(1)), ConfigInvalid);
}

TEST_CASE("ppba walks the DCT subspace to a solution") {
  auto oracle = threshold_oracle();
  Tensor x({1, 2}, {0.6, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.2;
  cfg.max_queries = 2000;
  cfg.params["rho"] = 0.05;
  AttackTrace tr = ppba(*oracle, x, crit, cfg, Rng(110));
  CHECK(tr.success);
  CHECK(tr.final_norm <= cfg.eps + 1e-12);

  cfg.params["rho"] = -1.0;
  CHECK_THROWS_AS(ppba(*oracle, x, crit, cfg, Rng(1)), ConfigInvalid);
}

TEST_CASE("nes attack query accounting: 1 + 2q per iteration") {
  // far-from-boundary input so the attack can never succeed within eps
  auto oracle = linear_oracle({1.0, 0.0, -1.0, 0.0}, {5.0, 0.0}, 2, 2);
  Tensor x({1, 2}, {0.5, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.05;
  cfg.max_queries = 1 + 2 * 5 * 4;  // init + exactly 4 iterations at q=5
  cfg.params["q"] = 5;
  AttackTrace tr = nes(*oracle, x, crit, cfg, Rng(111));
  CHECK_FALSE(tr.success);
  CHECK(tr.queries == cfg.max_queries);
  CHECK(tr.final_norm <= cfg.eps + 1e-12);
}

TEST_CASE("nes attack solves the threshold model") {
  auto oracle = threshold_oracle();
  Tensor x({1, 2}, {0.54, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.max_queries = 3000;
  cfg.params["lr"] = 0.02;
  AttackTrace tr = nes(*oracle, x, crit, cfg, Rng(112));
  CHECK(tr.success);
  CHECK(tr.final_norm <= cfg.eps + 1e-12);

  cfg.params["q"] = 0;
  CHECK_THROWS_AS(nes(*oracle, x, crit, cfg, Rng(1)), ConfigInvalid);
}

TEST_CASE("zo_signsgd query accounting: q + 1 per iteration") {
  auto oracle = linear_oracle({1.0, 0.0, -1.0, 0.0}, {5.0, 0.0}, 2, 2);
  Tensor x({1, 2}, {0.5, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.05;
  cfg.max_queries = 1 + (5 + 1) * 3;  // init + 3 iterations at q=5
  cfg.params["q"] = 5;
  AttackTrace tr = zo_signsgd(*oracle, x, crit, cfg, Rng(113));
  CHECK_FALSE(tr.success);
  CHECK(tr.queries == cfg.max_queries);
}

TEST_CASE("zo_signsgd solves the threshold model") {
  auto oracle = threshold_oracle();
  Tensor x({1, 2}, {0.54, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.max_queries = 4000;
  cfg.params["lr"] = 0.02;
  AttackTrace tr = zo_signsgd(*oracle, x, crit, cfg, Rng(114));
  CHECK(tr.success);
  CHECK(tr.final_norm <= cfg.eps + 1e-12);
}

TEST_CASE("signhunter attack perturbs at the ball vertices") {
  auto oracle = threshold_oracle();
  Tensor x({1, 2}, {0.55, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.max_queries = 20;
  AttackTrace tr = signhunter(*oracle, x, crit, cfg, Rng(115));
  CHECK(tr.success);
  CHECK(tr.queries <= 4);  // init (+eps both) fails, flipping finds -eps fast
  // every coordinate sits exactly at a vertex of the Linf ball
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(std::abs(std::abs(tr.final_x_star[i] - x[i]) - cfg.eps) < 1e-12);
}

TEST_CASE("signhunter L2 variant rescales the sign pattern onto the sphere") {
  auto oracle = linear_oracle({1.0, 0.0, -1.0, 0.0}, {5.0, 0.0}, 2, 2);
  Tensor x({1, 2}, {0.5, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.norm = NormKind::L2;
  cfg.eps = 0.1;
  cfg.max_queries = 10;
  AttackTrace tr = signhunter(*oracle, x, crit, cfg, Rng(116));
  CHECK(tr.final_norm == doctest::Approx(cfg.eps).epsilon(1e-9));
}

TEST_CASE("bandits requires positive exploration and solves the threshold model") {
  auto oracle = threshold_oracle();
  Tensor x({1, 2}, {0.54, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.1;
  cfg.max_queries = 4000;
  cfg.params["lr"] = 0.02;
  AttackTrace tr = bandits(*oracle, x, crit, cfg, Rng(117));
  CHECK(tr.success);
  CHECK(tr.final_norm <= cfg.eps + 1e-12);

  cfg.params["prior_exploration"] = 0.0;
  CHECK_THROWS_AS(bandits(*oracle, x, crit, cfg, Rng(1)), ConfigInvalid);
}

TEST_CASE("bandits query accounting: two probes per iteration") {
  auto oracle = linear_oracle({1.0, 0.0, -1.0, 0.0}, {5.0, 0.0}, 2, 2);
  Tensor x({1, 2}, {0.5, 0.5});
  Criterion crit{false, 0, 0};
  AttackConfig cfg;
  cfg.eps = 0.05;
  cfg.max_queries = 1 + 2 * 6;  // init + 6 iterations
  AttackTrace tr = bandits(*oracle, x, crit, cfg, Rng(118));
  CHECK(tr.queries == cfg.max_queries);
}

TEST_CASE("dispatcher runs every kind under the ball invariant") {
  for (auto kind : {ScoreAttackKind::Simba, ScoreAttackKind::Square, ScoreAttackKind::Ppba,
                    ScoreAttackKind::Nes, ScoreAttackKind::ZoSignSgd, ScoreAttackKind::SignHunter,
                    ScoreAttackKind::Bandits}) {
    auto oracle = threshold_oracle();
    Tensor x({1, 2}, {0.7, 0.5});
    Criterion crit{false, 0, 0};
    AttackConfig cfg;
    cfg.eps = 0.05;  // cannot reach the boundary at 0.5
    cfg.max_queries = 200;
    AttackTrace tr = run_score_attack(kind, *oracle, x, crit, cfg, Rng(119));
    CHECK_FALSE(tr.success);
    CHECK(tr.queries <= cfg.max_queries);
    CHECK(tr.final_norm <= cfg.eps + 1e-12);
    for (std::size_t i = 0; i < tr.final_x_star.size(); ++i) {
      CHECK(tr.final_x_star[i] >= 0.0);
      CHECK(tr.final_x_star[i] <= 1.0);
    }
  }
}
