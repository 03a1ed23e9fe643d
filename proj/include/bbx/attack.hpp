#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bbx/oracle.hpp"
#include "bbx/rng.hpp"
#include "bbx/tensor.hpp"

namespace bbx {

struct ConfigInvalid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NormUnsupported : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotImageShaped : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown by decision pipelines when no adversarial starting point is found
// within the attempt budget. Queries consumed so far are carried along.
struct InitFailure : std::runtime_error {
  explicit InitFailure(std::uint64_t queries_spent)
      : std::runtime_error("no adversarial starting point found"), queries(queries_spent) {}
  std::uint64_t queries;
};

enum class TargetRule { Random, LeastLikely, MostLikely, Median, Specified };

inline TargetRule target_rule_from_string(const std::string& s) {
  if (s == "random") return TargetRule::Random;
  if (s == "least_likely") return TargetRule::LeastLikely;
  if (s == "most_likely") return TargetRule::MostLikely;
  if (s == "median") return TargetRule::Median;
  if (s == "specified") return TargetRule::Specified;
  throw ConfigInvalid("unknown target rule: " + s);
}

struct AttackConfig {
  NormKind norm = NormKind::Linf;
  double eps = 0.05;
  double step = 0.01;
  std::size_t max_queries = 10000;
  std::size_t iterations = 100;  // transfer attacks only
  bool targeted = false;
  TargetRule target_rule = TargetRule::Median;
  std::size_t specified_target = 0;
  bool record_history = false;
  std::size_t history_every = 10;
  std::map<std::string, double> params;  // per-attack hyperparameters

  double param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }

  void validate() const {
    if (eps < 0) throw ConfigInvalid("eps must be >= 0");
    if (max_queries < 1) throw ConfigInvalid("max_queries must be >= 1");
    if (step <= 0) throw ConfigInvalid("step must be > 0");
  }
};

// Eq.-2 adversarial criterion: untargeted wants a different prediction,
// targeted wants exactly the target class.
struct Criterion {
  bool targeted = false;
  std::size_t y = 0;
  std::size_t t = 0;

  bool satisfied(std::size_t predicted) const { return targeted ? predicted == t : predicted != y; }
  std::size_t anchor_class() const { return targeted ? t : y; }
};

// Margin Delta: z_y - max_{j!=y} z_j untargeted, max_{j!=t} z_j - z_t
// targeted. Negative means the attack criterion holds.
inline double margin_loss(const std::vector<double>& logits, const Criterion& crit) {
  std::size_t k = logits.size();
  std::size_t c = crit.anchor_class();
  if (c >= k || crit.y >= k) throw InvalidClass("criterion class out of range");
  double best_other = -1e300;
  for (std::size_t j = 0; j < k; ++j)
    if (j != c) best_other = std::max(best_other, logits[j]);
  return crit.targeted ? best_other - logits[c] : logits[c] - best_other;
}

inline double margin_loss(const Tensor& logits, const Criterion& crit) {
  return margin_loss(std::vector<double>(logits.data(), logits.data() + logits.size()), crit);
}

inline std::size_t pick_target(const std::vector<double>& logits, std::size_t y, TargetRule rule,
                               Rng& rng, std::size_t specified = 0) {
  std::size_t k = logits.size();
  if (k < 2 || y >= k) throw InvalidClass("need K >= 2 and valid y");
  switch (rule) {
    case TargetRule::Specified:
      if (specified >= k || specified == y) throw InvalidClass("invalid specified target");
      return specified;
    case TargetRule::Random: {
      std::size_t t = rng.below(k - 1);
      return t >= y ? t + 1 : t;
    }
    case TargetRule::LeastLikely: {
      std::size_t best = y == 0 ? 1 : 0;
      for (std::size_t j = 0; j < k; ++j)
        if (j != y && logits[j] < logits[best]) best = j;
      return best;
    }
    case TargetRule::MostLikely: {
      std::size_t best = y == 0 ? 1 : 0;
      for (std::size_t j = 0; j < k; ++j)
        if (j != y && logits[j] > logits[best]) best = j;
      return best;
    }
    case TargetRule::Median: {
      // rank ascending by logit, ties broken by class index; take the
      // lower-middle rank, stepping outward if it lands on y
      std::vector<std::size_t> order(k);
      for (std::size_t i = 0; i < k; ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return logits[a] < logits[b] || (logits[a] == logits[b] && a < b);
      });
      std::size_t mid = (k - 1) / 2;
      for (std::size_t off = 0; off < k; ++off) {
        for (int dir : {+1, -1}) {
          long idx = static_cast<long>(mid) + dir * static_cast<long>(off);
          if (idx >= 0 && idx < static_cast<long>(k) && order[static_cast<std::size_t>(idx)] != y)
            return order[static_cast<std::size_t>(idx)];
        }
      }
      throw InvalidClass("no valid target class");
    }
  }
  throw ConfigInvalid("unreachable target rule");
}

struct AttackTrace {
  bool success = false;
  std::uint64_t queries = 0;
  Tensor final_x_star;
  double final_norm = 0;
  std::vector<std::pair<std::uint64_t, double>> history;  // (query index, objective)
};

namespace detail {
struct BudgetExhausted {};
struct SuccessFound {};
}  // namespace detail

// Shared query bookkeeping for both query pipelines. Owns the per-run query
// counter so traces never exceed the budget by construction.
class QueryCtx {
 public:
  QueryCtx(ModelOracle& oracle, Tensor benign, Criterion crit, AttackConfig cfg, Rng rng)
      : oracle_(oracle), benign_(std::move(benign)), crit_(crit), cfg_(std::move(cfg)),
        rng_(rng) {
    cfg_.validate();
  }

  const Tensor& benign() const { return benign_; }
  const Criterion& criterion() const { return crit_; }
  const AttackConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }
  ModelOracle& oracle() { return oracle_; }

  std::uint64_t queries() const { return queries_; }
  std::uint64_t remaining() const { return cfg_.max_queries - queries_; }
  bool exhausted() const { return queries_ >= cfg_.max_queries; }

  double dist(const Tensor& t) const { return norm(t - benign_, cfg_.norm); }

  // One counted hard-label query.
  bool query_is_adversarial(const Tensor& cand) {
    charge();
    auto labels = oracle_.query_label(cand);
    return crit_.satisfied(labels[0]);
  }

  // One counted score query of the margin objective. Throws SuccessFound
  // after recording the point when the criterion is met.
  double query_margin_at(const Tensor& cand) {
    charge();
    Tensor z = oracle_.query_logits(cand);
    double m = margin_loss(z, crit_);
    maybe_record(std::max(0.0, m));
    if (m < 0) {
      success_point_ = cand;
      throw detail::SuccessFound{};
    }
    return m;
  }

  const std::optional<Tensor>& success_point() const { return success_point_; }
  std::vector<std::pair<std::uint64_t, double>>& history() { return history_; }

 private:
  void charge() {
    if (queries_ >= cfg_.max_queries) throw detail::BudgetExhausted{};
    ++queries_;
  }

  void maybe_record(double objective) {
    if (cfg_.record_history && (queries_ % cfg_.history_every == 0 || queries_ == 1))
      history_.emplace_back(queries_, objective);
  }

  ModelOracle& oracle_;
  Tensor benign_;
  Criterion crit_;
  AttackConfig cfg_;
  Rng rng_;
  std::uint64_t queries_ = 0;
  std::optional<Tensor> success_point_;
  std::vector<std::pair<std::uint64_t, double>> history_;
};

// ---------- score pipeline ----------

class ScoreCtx : public QueryCtx {
 public:
  using QueryCtx::QueryCtx;

  // Projects into the eps-ball and the [0,1] box, then issues a counted
  // margin query. All probe points of every attack funnel through here,
  // which is what keeps the ball/box invariant airtight.
  double query_margin(const Tensor& cand) {
    return query_margin_at(feasible(cand));
  }

  Tensor feasible(const Tensor& cand) const {
    return clamp_box(project_ball(cand, benign(), config().eps, config().norm), 0.0, 1.0);
  }

  const Tensor& current() const { return current_; }
  double current_margin() const { return current_margin_; }

  void set_current(Tensor t, double margin) {
    current_ = std::move(t);
    current_margin_ = margin;
  }

 private:
  Tensor current_;
  double current_margin_ = 0;
};

struct ScoreProposal {
  Tensor candidate;
  // Estimation attacks probe through ctx themselves and step without a
  // candidate evaluation; they set this to skip the pipeline's query.
  bool skip_query = false;
};

using ScoreInitFn = std::function<Tensor(ScoreCtx&)>;
using ScoreProposeFn = std::function<ScoreProposal(ScoreCtx&)>;
// accept(ctx, candidate, candidate_margin) -> adopt candidate as current?
using ScoreAcceptFn = std::function<bool(ScoreCtx&, const Tensor&, double)>;

// Alg.-2 loop: init inside the ball, then propose/query/accept until the
// margin goes negative or the budget runs out.
inline AttackTrace run_score_pipeline(ModelOracle& oracle, const Tensor& x, const Criterion& crit,
                                      const AttackConfig& cfg, const ScoreInitFn& init,
                                      const ScoreProposeFn& propose, const ScoreAcceptFn& accept,
                                      Rng rng) {
  ScoreCtx ctx(oracle, x, crit, cfg, rng);
  AttackTrace trace;
  try {
    Tensor x0 = ctx.feasible(init(ctx));
    double m0 = ctx.query_margin_at(x0);
    ctx.set_current(x0, m0);
    while (!ctx.exhausted()) {
      ScoreProposal p = propose(ctx);
      Tensor cand = ctx.feasible(p.candidate);
      double m = p.skip_query ? ctx.current_margin() : ctx.query_margin_at(cand);
      if (accept(ctx, cand, m)) ctx.set_current(cand, m);
    }
  } catch (const detail::BudgetExhausted&) {
  } catch (const detail::SuccessFound&) {
  }
  Tensor final_point = ctx.success_point() ? *ctx.success_point()
                       : (ctx.current().size() ? ctx.current() : x);
  trace.queries = ctx.queries();
  trace.final_x_star = final_point;
  trace.final_norm = ctx.dist(final_point);
  // non-counting recheck fixes the success flag
  auto labels = oracle.peek_label(final_point);
  trace.success = crit.satisfied(labels[0]);
  trace.history = std::move(ctx.history());
  return trace;
}

// ---------- decision pipeline ----------

class DecisionCtx : public QueryCtx {
 public:
  using QueryCtx::QueryCtx;

  const Tensor& current() const { return current_; }
  double current_dist() const { return current_dist_; }
  bool has_current() const { return current_.size() > 0; }

  // Adopt a candidate already verified adversarial by the caller.
  void set_current(Tensor t) {
    current_dist_ = dist(t);
    if (config().record_history)
      history().emplace_back(queries(), current_dist_);
    current_ = std::move(t);
  }

 private:
  Tensor current_;
  double current_dist_ = 0;
};

struct DecisionProposal {
  Tensor candidate;
  // set when the proposer already queried the candidate (no requery needed)
  std::optional<bool> known_adversarial;
};

using DecisionInitFn = std::function<std::optional<Tensor>(DecisionCtx&)>;
using DecisionProposeFn = std::function<DecisionProposal(DecisionCtx&)>;
// accept(ctx, candidate, is_adversarial) -> adopt as current iterate?
using DecisionAcceptFn = std::function<bool(DecisionCtx&, const Tensor&, bool)>;

// Alg.-1 loop: start from an adversarial point and shrink the perturbation
// norm while the criterion keeps holding; stop once distance <= eps or the
// query budget is gone.
inline AttackTrace run_decision_pipeline(ModelOracle& oracle, const Tensor& x,
                                         const Criterion& crit, const AttackConfig& cfg,
                                         const DecisionInitFn& init,
                                         const DecisionProposeFn& propose,
                                         const DecisionAcceptFn& accept, Rng rng) {
  DecisionCtx ctx(oracle, x, crit, cfg, rng);
  AttackTrace trace;
  try {
    auto x0 = init(ctx);
    if (!x0) throw InitFailure(ctx.queries());
    ctx.set_current(clamp_box(*x0, 0.0, 1.0));
    while (!ctx.exhausted() && ctx.current_dist() > cfg.eps) {
      DecisionProposal p = propose(ctx);
      Tensor cand = clamp_box(std::move(p.candidate), 0.0, 1.0);
      bool adv = p.known_adversarial ? *p.known_adversarial : ctx.query_is_adversarial(cand);
      if (adv && accept(ctx, cand, adv)) ctx.set_current(std::move(cand));
    }
  } catch (const detail::BudgetExhausted&) {
  }
  trace.queries = ctx.queries();
  if (ctx.has_current()) {
    trace.final_x_star = ctx.current();
    trace.final_norm = ctx.current_dist();
    auto labels = oracle.peek_label(ctx.current());
    trace.success = crit.satisfied(labels[0]) && trace.final_norm <= cfg.eps;
  } else {
    trace.final_x_star = x;
    trace.final_norm = 0;
    trace.success = false;
  }
  trace.history = std::move(ctx.history());
  return trace;
}

// Default decision-attack initialization: up to 100 uniform draws in the box
// for untargeted runs; targeted runs use a caller-supplied gallery example.
inline DecisionInitFn default_decision_init(std::optional<Tensor> target_example = std::nullopt) {
  return [target_example](DecisionCtx& ctx) -> std::optional<Tensor> {
    if (ctx.query_is_adversarial(ctx.benign())) return ctx.benign();
    if (ctx.criterion().targeted) {
      if (target_example && ctx.query_is_adversarial(*target_example)) return *target_example;
      return std::nullopt;
    }
    for (int attempt = 0; attempt < 100 && !ctx.exhausted(); ++attempt) {
      Tensor cand = uniform_tensor(ctx.rng(), ctx.benign().shape(), 0.0, 1.0);
      if (ctx.query_is_adversarial(cand)) return cand;
    }
    return std::nullopt;
  };
}

}  // namespace bbx
