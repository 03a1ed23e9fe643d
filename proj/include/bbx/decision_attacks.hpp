#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "bbx/attack.hpp"

namespace bbx {

enum class DecisionAttackKind { Boundary, Sfa, Rays, Opt, SignOpt, Hsja };

inline DecisionAttackKind decision_attack_from_string(const std::string& s) {
  if (s == "boundary") return DecisionAttackKind::Boundary;
  if (s == "sfa") return DecisionAttackKind::Sfa;
  if (s == "rays") return DecisionAttackKind::Rays;
  if (s == "opt") return DecisionAttackKind::Opt;
  if (s == "sign_opt") return DecisionAttackKind::SignOpt;
  if (s == "hsja") return DecisionAttackKind::Hsja;
  throw ConfigInvalid("unknown decision attack: " + s);
}

namespace detail {

// Binary search along the segment benign -> adv for the adversarial point
// closest to benign; both endpoints' labels are already known.
inline Tensor boundary_bisect(DecisionCtx& ctx, Tensor benign_side, Tensor adv_side, double tol) {
  while (norm(adv_side - benign_side, NormKind::L2) > tol && !ctx.exhausted()) {
    Tensor mid = 0.5 * (benign_side + adv_side);
    if (ctx.query_is_adversarial(mid))
      adv_side = std::move(mid);
    else
      benign_side = std::move(mid);
  }
  return adv_side;
}

inline Tensor unit(const Tensor& t, NormKind kind) {
  double n = norm(t, kind);
  if (n == 0) throw std::invalid_argument("cannot normalize a zero direction");
  return t * (1.0 / n);
}

inline double box_diameter(std::size_t n, NormKind kind) {
  return kind == NormKind::Linf ? 1.0 : std::sqrt(static_cast<double>(n));
}

// g(theta) = min { lambda > 0 : clamp(x + lambda * theta_unit) adversarial },
// found by doubling then bisection. Returns the radius and the adversarial
// point at it, or nullopt when the ray never turns adversarial in the box.
struct RayHit {
  double g;
  Tensor point;
};

inline std::optional<RayHit> eval_g(DecisionCtx& ctx, const Tensor& theta_unit, double hint,
                                    double tol) {
  const Tensor& x = ctx.benign();
  double lambda_max = box_diameter(x.size(), ctx.config().norm);
  auto point = [&](double l) { return clamp_box(x + l * theta_unit, 0.0, 1.0); };
  double hi = std::clamp(hint, tol, lambda_max);
  Tensor hi_point = point(hi);
  while (!ctx.query_is_adversarial(hi_point)) {
    hi *= 2.0;
    if (hi > lambda_max * (1.0 + 1e-12)) return std::nullopt;
    hi_point = point(hi);
  }
  double lo = 0.0;
  while (hi - lo > tol && !ctx.exhausted()) {
    double mid = 0.5 * (lo + hi);
    Tensor mp = point(mid);
    if (ctx.query_is_adversarial(mp)) {
      hi = mid;
      hi_point = std::move(mp);
    } else {
      lo = mid;
    }
  }
  return RayHit{hi, std::move(hi_point)};
}

}  // namespace detail

// Boundary Attack: orthogonal (spherical) perturbation at the current
// distance followed by a contraction toward the benign point; step sizes
// adapt to the recent acceptance rate.
inline AttackTrace boundary_attack(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                                   const AttackConfig& cfg,
                                   const DecisionInitFn& init_fn, Rng rng) {
  struct State {
    double spherical_step, source_step, adaptation;
    std::size_t window, trials = 0, accepts = 0;
  };
  auto st = std::make_shared<State>();
  st->spherical_step = cfg.param("spherical_step", 0.01);
  st->source_step = cfg.param("source_step", 0.01);
  st->adaptation = cfg.param("step_adaptation", 1.5);
  st->window = static_cast<std::size_t>(cfg.param("update_stats_every_k", 10));
  if (st->window < 1) throw ConfigInvalid("update_stats_every_k must be >= 1");

  DecisionProposeFn propose = [st](DecisionCtx& ctx) {
    Tensor delta = ctx.current() - ctx.benign();
    double d = norm(delta, NormKind::L2);
    if (d == 0) return DecisionProposal{ctx.current(), true};
    Tensor dhat = delta * (1.0 / d);
    Tensor eta = gaussian_tensor(ctx.rng(), delta.shape());
    eta = eta - dot(eta, dhat) * dhat;  // orthogonal component
    double en = norm(eta, NormKind::L2);
    if (en > 0) eta = eta * (st->spherical_step * d / en);
    Tensor spherical = ctx.benign() + detail::unit(delta + eta, NormKind::L2) * d;
    Tensor cand = ctx.benign() + (1.0 - st->source_step) * (spherical - ctx.benign());
    return DecisionProposal{std::move(cand)};
  };
  DecisionAcceptFn accept = [st, &cfg](DecisionCtx& ctx, const Tensor& cand, bool adv) {
    bool ok = adv && ctx.dist(cand) <= ctx.current_dist() + 1e-12;
    ++st->trials;
    if (ok) ++st->accepts;
    if (st->trials >= st->window) {
      double rate = static_cast<double>(st->accepts) / static_cast<double>(st->trials);
      if (rate > 0.5) {
        st->spherical_step *= st->adaptation;
        st->source_step *= st->adaptation;
      } else if (rate < 0.2) {
        st->spherical_step /= st->adaptation;
        st->source_step /= st->adaptation;
      }
      st->source_step = std::min(st->source_step, 1.0);
      st->trials = st->accepts = 0;
    }
    return ok;
  };
  return run_decision_pipeline(oracle, x, crit, cfg, init_fn, propose, accept, rng);
}

// Sign Flip Attack (Linf only): alternates radius-shrinking projections with
// random sign flips of perturbation entries; flip probability adapts.
inline AttackTrace sfa(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                       const AttackConfig& cfg, const DecisionInitFn& init_fn, Rng rng) {
  if (cfg.norm != NormKind::Linf) throw NormUnsupported("sfa supports Linf only");
  struct State {
    bool project_phase = true;
    double flip_prob, shrink;
    std::size_t trials = 0, accepts = 0;
  };
  auto st = std::make_shared<State>();
  st->flip_prob = cfg.param("flip_prob", 0.1);
  st->shrink = cfg.param("shrink", 0.05);

  DecisionProposeFn propose = [st](DecisionCtx& ctx) {
    Tensor delta = ctx.current() - ctx.benign();
    double r = norm(delta, NormKind::Linf);
    if (r == 0) return DecisionProposal{ctx.current(), true};
    Tensor cand_delta(delta.shape(), 0.0);
    if (st->project_phase) {
      double r_new = r * (1.0 - st->shrink);
      for (std::size_t i = 0; i < delta.size(); ++i)
        cand_delta[i] = std::clamp(delta[i], -r_new, r_new);
    } else {
      // snap to the vertex then flip a random subset of signs
      for (std::size_t i = 0; i < delta.size(); ++i) {
        double s = delta[i] >= 0 ? 1.0 : -1.0;
        if (ctx.rng().uniform() < st->flip_prob) s = -s;
        cand_delta[i] = s * r;
      }
    }
    return DecisionProposal{ctx.benign() + cand_delta};
  };
  DecisionAcceptFn accept = [st](DecisionCtx& ctx, const Tensor& cand, bool adv) {
    bool ok = adv && ctx.dist(cand) <= ctx.current_dist() + 1e-12;
    if (!st->project_phase) {
      ++st->trials;
      if (ok) ++st->accepts;
      if (st->trials >= 10) {
        double rate = static_cast<double>(st->accepts) / static_cast<double>(st->trials);
        st->flip_prob *= rate > 0.7 ? 1.5 : (rate < 0.3 ? 0.7 : 1.0);
        st->flip_prob = std::clamp(st->flip_prob, 1e-4, 0.5);
        st->trials = st->accepts = 0;
      }
    }
    st->project_phase = !st->project_phase;
    return ok;
  };
  return run_decision_pipeline(oracle, x, crit, cfg, init_fn, propose, accept, rng);
}

// RayS (Linf only): hierarchical block flips of a sign vector, each candidate
// pattern evaluated by a binary line search for the smallest adversarial
// radius.
inline AttackTrace rays(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                        const AttackConfig& cfg, const DecisionInitFn& init_fn, Rng rng) {
  if (cfg.norm != NormKind::Linf) throw NormUnsupported("rays supports Linf only");
  double tol = cfg.param("tol", 1e-3);
  struct State {
    std::vector<double> signs;
    std::size_t depth = 0, node = 0;
    double best_r = 0;
    bool seeded = false;
  };
  auto st = std::make_shared<State>();

  auto advance = [st]() {
    std::size_t chunks = std::size_t{1} << st->depth;
    std::size_t len = (st->signs.size() + chunks - 1) / chunks;
    do {
      ++st->node;
    } while (st->node < chunks && st->node * len >= st->signs.size());
    if (st->node >= chunks) {
      st->node = 0;
      if (len <= 1) st->depth = 0;
      else ++st->depth;
    }
  };

  DecisionProposeFn propose = [st, advance, tol](DecisionCtx& ctx) -> DecisionProposal {
    if (!st->seeded) {
      Tensor delta = ctx.current() - ctx.benign();
      st->signs.assign(delta.size(), 1.0);
      for (std::size_t i = 0; i < delta.size(); ++i) st->signs[i] = delta[i] >= 0 ? 1.0 : -1.0;
      st->best_r = ctx.current_dist();
      st->seeded = true;
    }
    std::size_t chunks = std::size_t{1} << st->depth;
    std::size_t len = (st->signs.size() + chunks - 1) / chunks;
    std::size_t lo = std::min(st->node * len, st->signs.size());
    std::size_t hi = std::min(lo + len, st->signs.size());
    std::vector<double> cand_signs = st->signs;
    for (std::size_t i = lo; i < hi; ++i) cand_signs[i] = -cand_signs[i];
    advance();

    Tensor dir(ctx.benign().shape(), cand_signs);
    auto probe = [&](double r) { return clamp_box(ctx.benign() + r * dir, 0.0, 1.0); };
    Tensor at_best = probe(st->best_r);
    if (!ctx.query_is_adversarial(at_best))
      return DecisionProposal{ctx.current(), true};  // pattern rejected, keep iterate
    // pattern works at the incumbent radius: bisect down
    double hi_r = st->best_r, lo_r = 0.0;
    Tensor best_point = at_best;
    while (hi_r - lo_r > tol && !ctx.exhausted()) {
      double mid = 0.5 * (lo_r + hi_r);
      Tensor mp = probe(mid);
      if (ctx.query_is_adversarial(mp)) {
        hi_r = mid;
        best_point = std::move(mp);
      } else {
        lo_r = mid;
      }
    }
    st->signs = std::move(cand_signs);
    st->best_r = hi_r;
    return DecisionProposal{std::move(best_point), true};
  };
  DecisionAcceptFn accept = [](DecisionCtx& ctx, const Tensor& cand, bool adv) {
    return adv && ctx.dist(cand) <= ctx.current_dist() + 1e-12;
  };
  return run_decision_pipeline(oracle, x, crit, cfg, init_fn, propose, accept, rng);
}

namespace detail {

// Shared OPT / Sign-OPT driver; estimate_grad supplies the RGF or sign-vote
// gradient of g at the current direction.
inline AttackTrace opt_like(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                            const AttackConfig& cfg, const DecisionInitFn& init_fn, Rng rng,
                            const std::function<Tensor(DecisionCtx&, const Tensor&, double,
                                                       double)>& estimate_grad) {
  double alpha0 = cfg.param("alpha", 0.2);
  double tol = cfg.param("tol", 1e-3);
  struct State {
    Tensor theta;  // unit direction
    double g = 0;
    double alpha;
    bool seeded = false;
  };
  auto st = std::make_shared<State>();
  st->alpha = alpha0;

  DecisionProposeFn propose = [st, estimate_grad, tol, &cfg](DecisionCtx& ctx) -> DecisionProposal {
    if (!st->seeded) {
      Tensor delta = ctx.current() - ctx.benign();
      st->theta = unit(delta, cfg.norm);
      auto hit = eval_g(ctx, st->theta, norm(delta, cfg.norm), tol);
      if (!hit) return DecisionProposal{ctx.current(), true};
      st->g = hit->g;
      st->seeded = true;
      return DecisionProposal{hit->point, true};
    }
    Tensor ghat = estimate_grad(ctx, st->theta, st->g, tol);
    // descent with backtracking on the step size
    double a = st->alpha;
    for (int tries = 0; tries < 8 && !ctx.exhausted(); ++tries, a *= 0.5) {
      Tensor theta_new = st->theta - a * ghat;
      double n = norm(theta_new, cfg.norm);
      if (n == 0) continue;
      theta_new = theta_new * (1.0 / n);
      auto hit = eval_g(ctx, theta_new, st->g, tol);
      if (hit && hit->g < st->g) {
        st->theta = std::move(theta_new);
        st->g = hit->g;
        st->alpha = std::max(a, 1e-6);
        return DecisionProposal{hit->point, true};
      }
    }
    return DecisionProposal{ctx.current(), true};  // no improving step this round
  };
  DecisionAcceptFn accept = [](DecisionCtx& ctx, const Tensor& cand, bool adv) {
    return adv && ctx.dist(cand) <= ctx.current_dist() + 1e-12;
  };
  return run_decision_pipeline(oracle, x, crit, cfg, init_fn, propose, accept, rng);
}

}  // namespace detail

// OPT attack: RGF estimate of the distance field g(theta).
inline AttackTrace opt_attack(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                              const AttackConfig& cfg, const DecisionInitFn& init_fn, Rng rng) {
  double beta = cfg.param("beta", 0.001);
  auto q = static_cast<std::size_t>(cfg.param("grad_queries", 10));
  if (beta <= 0 || q < 1) throw ConfigInvalid("opt needs beta > 0 and grad_queries >= 1");
  auto estimate = [beta, q, &cfg](DecisionCtx& ctx, const Tensor& theta, double g,
                                  double tol) {
    Tensor ghat(theta.shape(), 0.0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < q && !ctx.exhausted(); ++i) {
      Tensor u = uniform_sphere(ctx.rng(), theta.shape());
      Tensor tp = theta + beta * u;
      tp = tp * (1.0 / norm(tp, cfg.norm));
      auto hit = detail::eval_g(ctx, tp, g, tol);
      double gp = hit ? hit->g : detail::box_diameter(theta.size(), cfg.norm);
      double c = (gp - g) / beta;
      for (std::size_t j = 0; j < ghat.size(); ++j) ghat[j] += c * u[j];
      ++used;
    }
    return used ? ghat * (1.0 / static_cast<double>(used)) : ghat;
  };
  return detail::opt_like(oracle, x, crit, cfg, init_fn, rng, estimate);
}

// Sign-OPT: one query per sampled direction votes on the sign of the
// directional derivative of g.
inline AttackTrace sign_opt(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                            const AttackConfig& cfg, const DecisionInitFn& init_fn, Rng rng) {
  double beta = cfg.param("beta", 0.001);
  auto k = static_cast<std::size_t>(cfg.param("k", 200));
  if (beta <= 0 || k < 1) throw ConfigInvalid("sign_opt needs beta > 0 and k >= 1");
  auto estimate = [beta, k, &cfg](DecisionCtx& ctx, const Tensor& theta, double g, double) {
    Tensor ghat(theta.shape(), 0.0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < k && !ctx.exhausted(); ++i) {
      Tensor u = uniform_sphere(ctx.rng(), theta.shape());
      Tensor tp = theta + beta * u;
      tp = tp * (1.0 / norm(tp, cfg.norm));
      Tensor probe = clamp_box(ctx.benign() + g * tp, 0.0, 1.0);
      // adversarial at the same radius => distance decreased along u
      double s = ctx.query_is_adversarial(probe) ? -1.0 : 1.0;
      for (std::size_t j = 0; j < ghat.size(); ++j) ghat[j] += s * u[j];
      ++used;
    }
    return used ? ghat * (1.0 / static_cast<double>(used)) : ghat;
  };
  return detail::opt_like(oracle, x, crit, cfg, init_fn, rng, estimate);
}

// HopSkipJumpAttack: boundary bisection, Monte-Carlo gradient-direction
// estimate with a growing probe budget, geometric step-size search.
inline AttackTrace hsja(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                        const AttackConfig& cfg, const DecisionInitFn& init_fn, Rng rng) {
  double gamma = cfg.param("gamma", 1.0);
  auto init_evals = static_cast<std::size_t>(cfg.param("init_num_evals", 100));
  auto max_evals = static_cast<std::size_t>(cfg.param("max_num_evals", 10000));
  if (gamma <= 0 || init_evals < 1) throw ConfigInvalid("hsja needs gamma > 0, init_num_evals >= 1");
  auto st = std::make_shared<std::size_t>(0);  // iteration counter

  DecisionProposeFn propose = [st, gamma, init_evals, max_evals, &cfg](DecisionCtx& ctx)
      -> DecisionProposal {
    auto n = static_cast<double>(ctx.benign().size());
    double theta_bs = cfg.norm == NormKind::L2 ? gamma / (std::sqrt(n) * n) : gamma / (n * n);
    // the dimension-derived tolerance is meant for large n; keep the
    // bisection fine enough to converge on low-dimensional problems too
    theta_bs = std::clamp(theta_bs, 1e-6, 1e-2);
    double t = static_cast<double>(++*st);

    // (1) project onto the boundary between benign and current
    Tensor xb = detail::boundary_bisect(ctx, ctx.benign(), ctx.current(),
                                        std::max(theta_bs * ctx.current_dist(), 1e-6));
    double d = norm(xb - ctx.benign(), cfg.norm);

    // (2) Monte-Carlo gradient-direction estimate at the boundary point
    auto bt = static_cast<std::size_t>(
        std::min(static_cast<double>(init_evals) * std::sqrt(t), static_cast<double>(max_evals)));
    bt = std::min<std::size_t>(bt, ctx.remaining() > 2 ? ctx.remaining() - 2 : 1);
    double delta_probe = std::max(theta_bs * std::sqrt(n) * d, 1e-6);
    std::vector<Tensor> dirs;
    std::vector<double> phis;
    dirs.reserve(bt);
    double phi_sum = 0;
    for (std::size_t b = 0; b < bt && !ctx.exhausted(); ++b) {
      Tensor u = cfg.norm == NormKind::L2 ? uniform_sphere(ctx.rng(), xb.shape())
                                          : rademacher_tensor(ctx.rng(), xb.shape());
      if (cfg.norm == NormKind::Linf) u = u * (1.0 / norm(u, NormKind::L2));
      Tensor probe = clamp_box(xb + delta_probe * u, 0.0, 1.0);
      double phi = ctx.query_is_adversarial(probe) ? 1.0 : -1.0;
      phi_sum += phi;
      phis.push_back(phi);
      dirs.push_back(std::move(u));
    }
    if (dirs.empty()) return DecisionProposal{ctx.current(), true};
    double phi_mean = phi_sum / static_cast<double>(dirs.size());
    Tensor ghat(xb.shape(), 0.0);
    for (std::size_t b = 0; b < dirs.size(); ++b) {
      double wgt = phis[b] - phi_mean;
      if (dirs.size() == 1 || std::abs(phi_mean) == 1.0) wgt = phis[b];
      for (std::size_t j = 0; j < ghat.size(); ++j) ghat[j] += wgt * dirs[b][j];
    }
    double gn = norm(ghat, NormKind::L2);
    if (gn == 0) return DecisionProposal{ctx.current(), true};
    Tensor dir = cfg.norm == NormKind::Linf ? sign(ghat) : ghat * (1.0 / gn);

    // (3) geometric step-size search away from the boundary
    double xi = d / std::sqrt(t);
    for (int tries = 0; tries < 20 && !ctx.exhausted(); ++tries, xi *= 0.5) {
      Tensor cand = clamp_box(xb + xi * dir, 0.0, 1.0);
      if (ctx.dist(cand) > ctx.current_dist()) continue;  // step left the trust region
      if (ctx.query_is_adversarial(cand)) return DecisionProposal{std::move(cand), true};
    }
    return DecisionProposal{std::move(xb), true};
  };
  DecisionAcceptFn accept = [](DecisionCtx& ctx, const Tensor& cand, bool adv) {
    return adv && ctx.dist(cand) <= ctx.current_dist() + 1e-12;
  };
  return run_decision_pipeline(oracle, x, crit, cfg, init_fn, propose, accept, rng);
}

inline AttackTrace run_decision_attack(DecisionAttackKind kind, ModelOracle& oracle,
                                       const Tensor& x, const Criterion& crit,
                                       const AttackConfig& cfg, const DecisionInitFn& init_fn,
                                       Rng rng) {
  switch (kind) {
    case DecisionAttackKind::Boundary: return boundary_attack(oracle, x, crit, cfg, init_fn, rng);
    case DecisionAttackKind::Sfa: return sfa(oracle, x, crit, cfg, init_fn, rng);
    case DecisionAttackKind::Rays: return rays(oracle, x, crit, cfg, init_fn, rng);
    case DecisionAttackKind::Opt: return opt_attack(oracle, x, crit, cfg, init_fn, rng);
    case DecisionAttackKind::SignOpt: return sign_opt(oracle, x, crit, cfg, init_fn, rng);
    case DecisionAttackKind::Hsja: return hsja(oracle, x, crit, cfg, init_fn, rng);
  }
  throw ConfigInvalid("unreachable decision attack kind");
}

}  // namespace bbx
