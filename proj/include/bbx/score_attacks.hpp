#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "bbx/attack.hpp"
#include "bbx/spectral.hpp"

namespace bbx {

enum class ScoreAttackKind { Simba, Square, Ppba, Nes, ZoSignSgd, SignHunter, Bandits };

inline ScoreAttackKind score_attack_from_string(const std::string& s) {
  if (s == "simba") return ScoreAttackKind::Simba;
  if (s == "square") return ScoreAttackKind::Square;
  if (s == "ppba") return ScoreAttackKind::Ppba;
  if (s == "nes") return ScoreAttackKind::Nes;
  if (s == "zo_signsgd") return ScoreAttackKind::ZoSignSgd;
  if (s == "signhunter") return ScoreAttackKind::SignHunter;
  if (s == "bandits") return ScoreAttackKind::Bandits;
  throw ConfigInvalid("unknown score attack: " + s);
}

namespace detail {

inline std::pair<std::size_t, std::size_t> trailing_hw(const Tensor& x) {
  if (x.rank() < 2) throw NotImageShaped("attack needs an image-shaped (rank >= 2) input");
  auto& s = x.shape();
  return {s[s.size() - 2], s[s.size() - 1]};
}

// Positions of the trailing-plane DCT coefficients ordered low-frequency
// first ((r+c), then r, then c), repeated across channel planes.
inline std::vector<std::size_t> low_freq_order(const Tensor& x) {
  auto [h, w] = trailing_hw(x);
  std::size_t planes = x.size() / (h * w);
  std::vector<std::size_t> plane_pos(h * w);
  std::iota(plane_pos.begin(), plane_pos.end(), 0);
  std::stable_sort(plane_pos.begin(), plane_pos.end(), [&](std::size_t a, std::size_t b) {
    std::size_t ra = a / w, ca = a % w, rb = b / w, cb = b % w;
    return std::tuple(ra + ca, ra, ca) < std::tuple(rb + cb, rb, cb);
  });
  std::vector<std::size_t> order;
  order.reserve(x.size());
  for (auto pos : plane_pos)
    for (std::size_t p = 0; p < planes; ++p) order.push_back(p * h * w + pos);
  return order;
}

}  // namespace detail

// ---------- gradient estimators (shared with tests) ----------

// Antithetic NES estimate: ghat = 1/(2 q sigma) * sum [f(x+s u) - f(x-s u)] u.
inline Tensor nes_estimate(const std::function<double(const Tensor&)>& f, const Tensor& x,
                           double sigma, std::size_t q, Rng& rng) {
  Tensor ghat(x.shape(), 0.0);
  for (std::size_t i = 0; i < q; ++i) {
    Tensor u = gaussian_tensor(rng, x.shape());
    double diff = f(x + sigma * u) - f(x - sigma * u);
    double c = diff / (2.0 * static_cast<double>(q) * sigma);
    for (std::size_t j = 0; j < u.size(); ++j) ghat[j] += c * u[j];
  }
  return ghat;
}

// Forward-difference average used by ZO-signSGD; f(x) is supplied by the
// caller so the base query is charged exactly once.
inline Tensor zo_sign_estimate(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double fx, double sigma, std::size_t q, Rng& rng) {
  Tensor ghat(x.shape(), 0.0);
  for (std::size_t i = 0; i < q; ++i) {
    Tensor u = gaussian_tensor(rng, x.shape());
    double c = (f(x + sigma * u) - fx) / (sigma * static_cast<double>(q));
    for (std::size_t j = 0; j < u.size(); ++j) ghat[j] += c * u[j];
  }
  return ghat;
}

// Divide-and-conquer sign search. Starts from all +1, flips blocks whole ->
// halves -> quarters ... keeping improving flips; wraps around at the end.
class SignHunterState {
 public:
  explicit SignHunterState(std::size_t n) : n_(n), s_(n, 1.0) {}

  const std::vector<double>& signs() const { return s_; }

  // [lo, hi) of the block whose flip is under test.
  std::pair<std::size_t, std::size_t> current_block() const {
    std::size_t chunks = std::size_t{1} << depth_;
    std::size_t len = (n_ + chunks - 1) / chunks;
    std::size_t lo = node_ * len;
    return {std::min(lo, n_), std::min(lo + len, n_)};
  }

  std::vector<double> flipped() const {
    auto [lo, hi] = current_block();
    std::vector<double> out = s_;
    for (std::size_t i = lo; i < hi; ++i) out[i] = -out[i];
    return out;
  }

  // improved: the flipped objective beat the incumbent.
  void feedback(bool improved) {
    if (improved) {
      auto [lo, hi] = current_block();
      for (std::size_t i = lo; i < hi; ++i) s_[i] = -s_[i];
    }
    advance();
  }

 private:
  void advance() {
    std::size_t chunks = std::size_t{1} << depth_;
    std::size_t len = (n_ + chunks - 1) / chunks;
    do {
      ++node_;
    } while (node_ < chunks && node_ * len >= n_);
    if (node_ >= chunks) {
      node_ = 0;
      if (len <= 1) depth_ = 0;  // tree exhausted: wrap around
      else ++depth_;
    }
  }

  std::size_t n_;
  std::size_t depth_ = 0;
  std::size_t node_ = 0;
  std::vector<double> s_;
};

// ---------- attacks ----------

// Random coordinate descent over an orthonormal basis (pixel or
// low-frequency-first DCT); tries +step then -step per basis vector.
inline AttackTrace simba(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                         const AttackConfig& cfg, Rng rng) {
  bool dct_basis = cfg.param("dct_basis", 0) != 0;
  struct State {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
    bool try_negative = false;
  };
  auto st = std::make_shared<State>();

  auto basis_vector = [dct_basis](const Tensor& like, std::size_t idx) {
    Tensor e(like.shape(), 0.0);
    e[idx] = 1.0;
    return dct_basis ? idct2(e) : e;
  };

  auto reset_order = [st, dct_basis](ScoreCtx& ctx) {
    if (dct_basis) {
      st->order = detail::low_freq_order(ctx.benign());
      // keep low frequencies early but randomize within the sweep
      std::size_t keep = std::max<std::size_t>(1, st->order.size() / 4);
      std::vector<std::size_t> head(st->order.begin(), st->order.begin() + keep);
      ctx.rng().shuffle(head);
      std::copy(head.begin(), head.end(), st->order.begin());
    } else {
      st->order.resize(ctx.benign().size());
      std::iota(st->order.begin(), st->order.end(), 0);
      ctx.rng().shuffle(st->order);
    }
    st->pos = 0;
  };

  ScoreInitFn init = [](ScoreCtx& ctx) { return ctx.benign(); };
  ScoreProposeFn propose = [st, reset_order, basis_vector, &cfg](ScoreCtx& ctx) {
    if (st->order.empty() || st->pos >= st->order.size()) reset_order(ctx);
    Tensor q = basis_vector(ctx.benign(), st->order[st->pos]);
    double a = st->try_negative ? -cfg.step : cfg.step;
    return ScoreProposal{ctx.current() + a * q};
  };
  ScoreAcceptFn accept = [st](ScoreCtx& ctx, const Tensor&, double m) {
    bool improved = m < ctx.current_margin();
    if (improved || st->try_negative) {
      st->try_negative = false;
      ++st->pos;
    } else {
      st->try_negative = true;
    }
    return improved;
  };
  return run_score_pipeline(oracle, x, crit, cfg, init, propose, accept, rng);
}

namespace detail {

// Published Square-Attack schedule: p_init halves at fixed fractions of the
// query budget.
inline double square_p(double p_init, std::uint64_t used, std::size_t budget) {
  double frac = static_cast<double>(used) / static_cast<double>(budget);
  static constexpr double kKnots[] = {0.001, 0.005, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8};
  double p = p_init;
  for (double knot : kKnots)
    if (frac > knot) p /= 2.0;
  return p;
}

inline std::size_t square_side(double p, std::size_t h, std::size_t w) {
  auto s = static_cast<std::size_t>(std::lround(std::sqrt(p * static_cast<double>(h * w))));
  return std::clamp<std::size_t>(s, 1, std::min(h, w));
}

// Pyramid-shaped bump used by the L2 variant.
inline void add_bump(Tensor& delta, std::size_t plane, std::size_t w, std::size_t r0,
                     std::size_t c0, std::size_t s, double scale, std::size_t hw) {
  double center = (static_cast<double>(s) - 1.0) / 2.0;
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t c = 0; c < s; ++c) {
      double d = std::max(std::abs(static_cast<double>(r) - center),
                          std::abs(static_cast<double>(c) - center));
      double v = (center + 1.0 - d) / (center + 1.0);
      delta[plane * hw + (r0 + r) * w + (c0 + c)] += scale * v;
    }
}

}  // namespace detail

// Random-search over square windows of the perturbation: Linf flips windows
// to +-eps vertices, L2 re-places a pyramid bump then rescales to ||.||2 = eps.
inline AttackTrace square_attack(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                                 const AttackConfig& cfg, Rng rng) {
  auto [h, w] = detail::trailing_hw(x);
  std::size_t hw = h * w;
  std::size_t planes = x.size() / hw;
  double p_init = cfg.param("p_init", 0.05);
  if (p_init <= 0 || p_init > 1) throw ConfigInvalid("p_init must be in (0, 1]");

  ScoreInitFn init = [&, h = h, w = w](ScoreCtx& ctx) {
    Tensor d(x.shape(), 0.0);
    if (cfg.norm == NormKind::Linf) {
      // vertical-stripe initialization at the ball vertices
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t c = 0; c < w; ++c) {
          double v = ctx.rng().rademacher() * cfg.eps;
          for (std::size_t r = 0; r < h; ++r) d[p * hw + r * w + c] = v;
        }
    } else {
      std::size_t s = std::max<std::size_t>(1, detail::square_side(p_init, h, w));
      for (std::size_t p = 0; p < planes; ++p)
        detail::add_bump(d, p, w, ctx.rng().below(h - s + 1), ctx.rng().below(w - s + 1), s,
                         ctx.rng().rademacher(), hw);
      double n = norm(d, NormKind::L2);
      if (n > 0) d = d * (cfg.eps / n);
    }
    return ctx.benign() + d;
  };

  ScoreProposeFn propose = [&, h = h, w = w](ScoreCtx& ctx) {
    double p = detail::square_p(p_init, ctx.queries(), cfg.max_queries);
    std::size_t s = detail::square_side(p, h, w);
    std::size_t r0 = ctx.rng().below(h - s + 1);
    std::size_t c0 = ctx.rng().below(w - s + 1);
    Tensor delta = ctx.current() - ctx.benign();
    if (cfg.norm == NormKind::Linf) {
      for (std::size_t pl = 0; pl < planes; ++pl) {
        double v = ctx.rng().rademacher() * cfg.eps;
        for (std::size_t r = 0; r < s; ++r)
          for (std::size_t c = 0; c < s; ++c) delta[pl * hw + (r0 + r) * w + (c0 + c)] = v;
      }
    } else {
      for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t r = 0; r < s; ++r)
          for (std::size_t c = 0; c < s; ++c) delta[pl * hw + (r0 + r) * w + (c0 + c)] = 0.0;
        detail::add_bump(delta, pl, w, r0, c0, s, ctx.rng().rademacher() * cfg.eps, hw);
      }
      double n = norm(delta, NormKind::L2);
      if (n > 0) delta = delta * (cfg.eps / n);
    }
    return ScoreProposal{ctx.benign() + delta};
  };

  ScoreAcceptFn accept = [](ScoreCtx& ctx, const Tensor&, double m) {
    return m < ctx.current_margin();
  };
  return run_score_pipeline(oracle, x, crit, cfg, init, propose, accept, rng);
}

// Random walk in the low-frequency DCT subspace with per-coordinate move
// probabilities learned from success/failure history.
inline AttackTrace ppba(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                        const AttackConfig& cfg, Rng rng) {
  double rho = cfg.param("rho", 0.01);
  if (rho <= 0) throw ConfigInvalid("rho must be > 0");
  auto order = detail::low_freq_order(x);
  std::size_t low_dim =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.param("low-dim", 1500)), x.size());
  if (low_dim == 0) throw ConfigInvalid("low-dim must be >= 1");
  order.resize(low_dim);

  struct State {
    std::vector<double> coef;            // current subspace coefficients
    std::vector<int> last_move;          // per-coordinate move of the pending step
    std::vector<std::array<double, 3>> succ, fail;  // history per move {-rho, 0, +rho}
  };
  auto st = std::make_shared<State>();
  st->coef.assign(low_dim, 0.0);
  st->last_move.assign(low_dim, 1);
  st->succ.assign(low_dim, {0, 0, 0});
  st->fail.assign(low_dim, {0, 0, 0});

  auto to_input = [order, &x](const std::vector<double>& coef) {
    Tensor spec(x.shape(), 0.0);
    for (std::size_t i = 0; i < coef.size(); ++i) spec[order[i]] = coef[i];
    return x + idct2(spec);
  };

  ScoreInitFn init = [](ScoreCtx& ctx) { return ctx.benign(); };
  ScoreProposeFn propose = [st, to_input, rho](ScoreCtx& ctx) {
    std::vector<double> cand = st->coef;
    for (std::size_t i = 0; i < cand.size(); ++i) {
      double p[3];
      double total = 0;
      for (int m = 0; m < 3; ++m) {
        // effectiveness estimate with an add-one prior -> uniform cold start
        p[m] = (st->succ[i][m] + 1.0) / (st->succ[i][m] + st->fail[i][m] + 2.0);
        total += p[m];
      }
      double u = ctx.rng().uniform() * total;
      int move = u < p[0] ? 0 : (u < p[0] + p[1] ? 1 : 2);
      st->last_move[i] = move;
      cand[i] += rho * static_cast<double>(move - 1);
    }
    return ScoreProposal{to_input(cand)};
  };
  ScoreAcceptFn accept = [st, rho](ScoreCtx& ctx, const Tensor&, double m) {
    bool improved = m < ctx.current_margin();
    for (std::size_t i = 0; i < st->coef.size(); ++i) {
      auto& rec = improved ? st->succ : st->fail;
      rec[i][st->last_move[i]] += 1.0;
      if (improved) st->coef[i] += rho * static_cast<double>(st->last_move[i] - 1);
    }
    return improved;
  };
  return run_score_pipeline(oracle, x, crit, cfg, init, propose, accept, rng);
}

// NES: antithetic gaussian gradient estimate (2q queries) + signed descent.
inline AttackTrace nes(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                       const AttackConfig& cfg, Rng rng) {
  double sigma = cfg.param("fd_eta", 0.01);
  double lr = cfg.param("lr", 0.01);
  auto q = static_cast<std::size_t>(cfg.param("q", 15));
  if (q < 1) throw ConfigInvalid("q must be >= 1");
  if (sigma <= 0) throw ConfigInvalid("fd_eta must be > 0");

  ScoreInitFn init = [](ScoreCtx& ctx) { return ctx.benign(); };
  ScoreProposeFn propose = [sigma, lr, q, &cfg](ScoreCtx& ctx) {
    auto f = [&ctx](const Tensor& p) { return ctx.query_margin(p); };
    Tensor ghat = nes_estimate(f, ctx.current(), sigma, q, ctx.rng());
    Tensor step = cfg.norm == NormKind::Linf
                      ? sign(ghat)
                      : (norm(ghat, NormKind::L2) > 0 ? ghat * (1.0 / norm(ghat, NormKind::L2))
                                                      : ghat);
    return ScoreProposal{ctx.current() - lr * step, /*skip_query=*/true};
  };
  ScoreAcceptFn accept = [](ScoreCtx&, const Tensor&, double) { return true; };
  return run_score_pipeline(oracle, x, crit, cfg, init, propose, accept, rng);
}

// ZO-signSGD: forward-difference estimate, elementwise sign update.
inline AttackTrace zo_signsgd(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                              const AttackConfig& cfg, Rng rng) {
  double sigma = cfg.param("fd_eta", 0.01);
  double lr = cfg.param("lr", 0.01);
  auto q = static_cast<std::size_t>(cfg.param("q", 30));
  if (q < 1) throw ConfigInvalid("q must be >= 1");
  if (sigma <= 0) throw ConfigInvalid("fd_eta must be > 0");

  ScoreInitFn init = [](ScoreCtx& ctx) { return ctx.benign(); };
  ScoreProposeFn propose = [sigma, lr, q](ScoreCtx& ctx) {
    auto f = [&ctx](const Tensor& p) { return ctx.query_margin(p); };
    double fx = ctx.query_margin(ctx.current());
    Tensor ghat = zo_sign_estimate(f, ctx.current(), fx, sigma, q, ctx.rng());
    return ScoreProposal{ctx.current() - lr * sign(ghat), /*skip_query=*/true};
  };
  ScoreAcceptFn accept = [](ScoreCtx&, const Tensor&, double) { return true; };
  return run_score_pipeline(oracle, x, crit, cfg, init, propose, accept, rng);
}

// SignHunter: binary block-flip search over the perturbation sign vector.
inline AttackTrace signhunter(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                              const AttackConfig& cfg, Rng rng) {
  auto st = std::make_shared<SignHunterState>(x.size());

  // The perturbation is always the scaled sign vector: eps per coordinate in
  // Linf, the eps-radius rescale of the full sign pattern in L2.
  auto with_signs = [](ScoreCtx& ctx, const std::vector<double>& s) {
    Tensor d(ctx.benign().shape(), s);
    double scale = ctx.config().eps;
    if (ctx.config().norm == NormKind::L2) scale = ctx.config().eps / norm(d, NormKind::L2);
    return ctx.benign() + scale * d;
  };

  ScoreInitFn init = [st, with_signs](ScoreCtx& ctx) { return with_signs(ctx, st->signs()); };
  ScoreProposeFn propose = [st, with_signs](ScoreCtx& ctx) {
    return ScoreProposal{with_signs(ctx, st->flipped())};
  };
  ScoreAcceptFn accept = [st](ScoreCtx& ctx, const Tensor&, double m) {
    bool improved = m < ctx.current_margin();
    st->feedback(improved);
    return improved;
  };
  return run_score_pipeline(oracle, x, crit, cfg, init, propose, accept, rng);
}

// Bandits: exponentiated-gradient prior over a coarse spatial grid; two
// queries per iteration estimate the prior's gradient.
inline AttackTrace bandits(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                           const AttackConfig& cfg, Rng rng) {
  auto [h, w] = detail::trailing_hw(x);
  std::size_t hw = h * w;
  std::size_t planes = x.size() / hw;
  double lr = cfg.param("lr", 0.01);
  double fd_eta = cfg.param("fd_eta", 0.01);
  double prior_lr = cfg.param("prior_lr", 0.1);
  double exploration = cfg.param("prior_exploration", 0.1);
  auto ps = static_cast<std::size_t>(cfg.param("prior_size", 20));
  if (exploration <= 0) throw ConfigInvalid("prior_exploration must be > 0");
  std::size_t ph = std::min(ps, h), pw = std::min(ps, w);

  auto st = std::make_shared<Tensor>(std::vector<std::size_t>{planes, ph, pw}, 0.0);

  auto upsample = [=](const Tensor& v) {
    Tensor out({planes, h, w}, 0.0);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          out[p * hw + r * w + c] = v[p * ph * pw + (r * ph / h) * pw + (c * pw / w)];
    return out.reshaped(x.shape());
  };

  ScoreInitFn init = [](ScoreCtx& ctx) { return ctx.benign(); };
  ScoreProposeFn propose = [=](ScoreCtx& ctx) {
    Tensor u = gaussian_tensor(ctx.rng(), st->shape());
    u = u * (1.0 / std::sqrt(static_cast<double>(u.size())));
    Tensor up_plus = upsample(*st + exploration * u);
    Tensor up_minus = upsample(*st - exploration * u);
    double np = norm(up_plus, NormKind::L2), nm = norm(up_minus, NormKind::L2);
    if (np == 0) np = 1;
    if (nm == 0) nm = 1;
    double l1 = ctx.query_margin(ctx.current() + fd_eta * (1.0 / np) * up_plus);
    double l2 = ctx.query_margin(ctx.current() + fd_eta * (1.0 / nm) * up_minus);
    // two-point estimate of d margin / d prior along u
    double coeff = (l1 - l2) / (exploration * fd_eta);
    // exponentiated-gradient ascent keeps the prior tracking the gradient
    for (std::size_t i = 0; i < st->size(); ++i) {
      double g = coeff * u[i];
      double pos = (1.0 + (*st)[i]) / 2.0 * std::exp(prior_lr * g);
      double neg = (1.0 - (*st)[i]) / 2.0 * std::exp(-prior_lr * g);
      (*st)[i] = std::clamp((pos - neg) / (pos + neg), -1.0 + 1e-12, 1.0 - 1e-12);
    }
    return ScoreProposal{ctx.current() - lr * sign(upsample(*st)), /*skip_query=*/true};
  };
  ScoreAcceptFn accept = [](ScoreCtx&, const Tensor&, double) { return true; };
  return run_score_pipeline(oracle, x, crit, cfg, init, propose, accept, rng);
}

inline AttackTrace run_score_attack(ScoreAttackKind kind, ModelOracle& oracle, const Tensor& x,
                                    const Criterion& crit, const AttackConfig& cfg, Rng rng) {
  switch (kind) {
    case ScoreAttackKind::Simba: return simba(oracle, x, crit, cfg, rng);
    case ScoreAttackKind::Square: return square_attack(oracle, x, crit, cfg, rng);
    case ScoreAttackKind::Ppba: return ppba(oracle, x, crit, cfg, rng);
    case ScoreAttackKind::Nes: return nes(oracle, x, crit, cfg, rng);
    case ScoreAttackKind::ZoSignSgd: return zo_signsgd(oracle, x, crit, cfg, rng);
    case ScoreAttackKind::SignHunter: return signhunter(oracle, x, crit, cfg, rng);
    case ScoreAttackKind::Bandits: return bandits(oracle, x, crit, cfg, rng);
  }
  throw ConfigInvalid("unreachable score attack kind");
}

}  // namespace bbx
