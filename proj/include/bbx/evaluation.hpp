#pragma once

#include <algorithm>
#include <chrono>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbx/dataset.hpp"
#include "bbx/decision_attacks.hpp"
#include "bbx/score_attacks.hpp"
#include "bbx/transfer.hpp"

namespace bbx {

struct DatasetMissing : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NoReports : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Metrics {
  double asr = 0;
  std::optional<double> aqn;
  std::optional<double> mqn;
};

struct ExampleResult {
  std::size_t index = 0;       // dataset index
  std::size_t label = 0;
  std::size_t target = 0;      // targeted campaigns only
  bool init_failed = false;    // decision attacks whose init found no start
  AttackTrace trace;
};

struct CampaignReport {
  std::vector<ExampleResult> examples;
  Metrics metrics;
  nlohmann::json config;
  double wall_seconds = 0;
};

// asr over all traces; aqn/mqn over successful traces only (absent when none
// succeeded). Median is the lower-middle element for even counts.
inline Metrics compute_metrics(const std::vector<AttackTrace>& traces) {
  Metrics m;
  if (traces.empty()) return m;
  std::vector<std::uint64_t> qs;
  for (const auto& t : traces)
    if (t.success) qs.push_back(t.queries);
  m.asr = static_cast<double>(qs.size()) / static_cast<double>(traces.size());
  if (!qs.empty()) {
    double sum = 0;
    for (auto q : qs) sum += static_cast<double>(q);
    m.aqn = sum / static_cast<double>(qs.size());
    std::sort(qs.begin(), qs.end());
    m.mqn = static_cast<double>(qs[(qs.size() - 1) / 2]);
  }
  return m;
}

enum class AttackFamily { Score, Decision };

struct QueryAttack {
  AttackFamily family;
  ScoreAttackKind score{};
  DecisionAttackKind decision{};
  std::string name;
};

inline QueryAttack query_attack_from_string(const std::string& s) {
  QueryAttack a;
  a.name = s;
  try {
    a.score = score_attack_from_string(s);
    a.family = AttackFamily::Score;
    return a;
  } catch (const ConfigInvalid&) {
  }
  a.decision = decision_attack_from_string(s);
  a.family = AttackFamily::Decision;
  return a;
}

inline const std::vector<std::string>& query_attack_names() {
  static const std::vector<std::string> names = {
      "simba", "square", "ppba", "nes", "zo_signsgd", "signhunter", "bandits",
      "boundary", "sfa", "rays", "opt", "sign_opt", "hsja"};
  return names;
}

struct CampaignSpec {
  QueryAttack attack;
  AttackConfig cfg;
  std::size_t count = 10;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// First dataset example of the requested class, used to seed targeted
// decision attacks.
inline std::optional<Tensor> target_gallery_example(const Dataset& ds, std::size_t cls) {
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == cls) return ds.example(i);
  return std::nullopt;
}

// Runs one attack on one example; shared by campaigns and the CLI.
inline ExampleResult attack_example(ModelOracle& oracle, const Dataset& ds, std::size_t index,
                                    const CampaignSpec& spec, ModelOracle& clean,
                                    Rng rng) {
  ExampleResult res;
  res.index = index;
  res.label = ds.labels[index];
  Tensor x = ds.example(index);
  Criterion crit;
  crit.targeted = spec.cfg.targeted;
  crit.y = res.label;
  if (crit.targeted) {
    Tensor z = clean.peek_logits(x);
    std::vector<double> logits(z.data(), z.data() + z.size());
    crit.t = pick_target(logits, crit.y, spec.cfg.target_rule, rng, spec.cfg.specified_target);
    res.target = crit.t;
  }
  try {
    if (spec.attack.family == AttackFamily::Score) {
      res.trace = run_score_attack(spec.attack.score, oracle, x, crit, spec.cfg, rng);
    } else {
      std::optional<Tensor> gallery;
      if (crit.targeted) gallery = target_gallery_example(ds, crit.t);
      res.trace = run_decision_attack(spec.attack.decision, oracle, x, crit, spec.cfg,
                                      default_decision_init(gallery), rng);
    }
  } catch (const InitFailure& e) {
    res.init_failed = true;
    res.trace.success = false;
    res.trace.queries = e.queries;
    res.trace.final_x_star = x;
    res.trace.final_norm = 0;
  }
  return res;
}

// Campaign over the first `count` examples that the clean oracle classifies
// correctly. `clean` supplies eligibility and target picking; `oracle` is
// the (possibly defended) attack target.
inline CampaignReport run_campaign(ModelOracle& oracle, ModelOracle& clean, const Dataset& ds,
                                   const CampaignSpec& spec) {
  if (ds.size() == 0) throw DatasetMissing("empty dataset");
  auto t0 = std::chrono::steady_clock::now();
  Rng campaign_rng(spec.seed, 0xCA);

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < ds.size() && eligible.size() < spec.count; ++i)
    if (clean.peek_label(ds.example(i))[0] == ds.labels[i]) eligible.push_back(i);

  std::vector<ExampleResult> results(eligible.size());
  auto worker = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t k = begin; k < eligible.size(); k += stride)
      results[k] = attack_example(oracle, ds, eligible[k], spec, clean,
                                  campaign_rng.split(eligible[k] + 1));
  };
  if (spec.jobs <= 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < spec.jobs; ++j) pool.emplace_back(worker, j, spec.jobs);
    for (auto& t : pool) t.join();
  }

  CampaignReport report;
  report.examples = std::move(results);
  std::vector<AttackTrace> traces;
  traces.reserve(report.examples.size());
  for (const auto& r : report.examples) traces.push_back(r.trace);
  report.metrics = compute_metrics(traces);
  report.config = {{"attack", spec.attack.name},
                   {"norm", to_string(spec.cfg.norm)},
                   {"eps", spec.cfg.eps},
                   {"targeted", spec.cfg.targeted},
                   {"max_queries", spec.cfg.max_queries},
                   {"count", spec.count},
                   {"seed", spec.seed}};
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

struct TransferCampaignReport {
  std::vector<double> per_target_asr;
  double mean_asr = 0;
  std::vector<std::size_t> eligible;   // surrogate-correct dataset indices
  std::vector<Tensor> crafted;
};

// Crafts one adversarial set on the surrogate and measures each target's
// misclassification rate over it.
inline TransferCampaignReport run_transfer_campaign(const MlpModel& surrogate,
                                                    const std::vector<const MlpModel*>& targets,
                                                    const std::string& preset_name,
                                                    const AttackConfig& cfg, const Dataset& ds,
                                                    std::size_t count, std::uint64_t seed) {
  if (targets.empty()) throw ConfigInvalid("transfer campaign needs at least one target");
  TransferCampaignReport report;
  TransferPreset preset = make_preset(preset_name);
  Rng rng(seed, 0x7F);

  std::vector<Tensor> gallery;
  for (std::size_t i = 0; i < ds.size() && gallery.size() < 16; ++i) gallery.push_back(ds.example(i));

  for (std::size_t i = 0; i < ds.size() && report.eligible.size() < count; ++i) {
    if (surrogate.predict(ds.example(i)) != ds.labels[i]) continue;
    report.eligible.push_back(i);
    Criterion crit{cfg.targeted, ds.labels[i], 0};
    if (cfg.targeted) {
      Tensor z = surrogate.forward(ds.example(i));
      std::vector<double> logits(z.data(), z.data() + z.size());
      crit.t = pick_target(logits, crit.y, cfg.target_rule, rng, cfg.specified_target);
    }
    report.crafted.push_back(run_transfer_preset(surrogate, ds.example(i), crit, cfg, preset,
                                                 rng.split(i + 1), gallery));
  }

  for (const auto* target : targets) {
    std::size_t hits = 0;
    for (std::size_t k = 0; k < report.crafted.size(); ++k) {
      std::size_t pred = target->predict(report.crafted[k]);
      std::size_t y = ds.labels[report.eligible[k]];
      if (pred != y) ++hits;
    }
    report.per_target_asr.push_back(
        report.crafted.empty() ? 0.0
                               : static_cast<double>(hits) / static_cast<double>(report.crafted.size()));
  }
  double sum = 0;
  for (double a : report.per_target_asr) sum += a;
  report.mean_asr = sum / static_cast<double>(report.per_target_asr.size());
  return report;
}

// ---------- report serialization ----------

inline nlohmann::json report_to_json(const CampaignReport& report) {
  nlohmann::json j;
  j["config"] = report.config;
  j["metrics"] = {{"asr", report.metrics.asr},
                  {"aqn", report.metrics.aqn ? nlohmann::json(*report.metrics.aqn)
                                             : nlohmann::json(nullptr)},
                  {"mqn", report.metrics.mqn ? nlohmann::json(*report.metrics.mqn)
                                             : nlohmann::json(nullptr)}};
  j["examples"] = nlohmann::json::array();
  for (const auto& r : report.examples)
    j["examples"].push_back({{"index", r.index},
                             {"success", r.trace.success},
                             {"queries", r.trace.queries},
                             {"final_norm", r.trace.final_norm}});
  j["meta"] = {{"wall_seconds", report.wall_seconds}};
  return j;
}

inline void write_report(const CampaignReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << report_to_json(report).dump(2) << "\n";
}

// "budget,asr" rows: success counted once the trace met the criterion within
// the row's budget.
inline void write_curve_csv(const CampaignReport& report, const std::vector<std::size_t>& budgets,
                            const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "budget,asr\n";
  for (auto b : budgets) {
    std::size_t hits = 0;
    for (const auto& r : report.examples)
      if (r.trace.success && r.trace.queries <= b) ++hits;
    double asr = report.examples.empty()
                     ? 0.0
                     : static_cast<double>(hits) / static_cast<double>(report.examples.size());
    f << b << "," << asr << "\n";
  }
}

struct LeaderboardRecord {
  std::string attack;
  std::string setting;  // "targeted|untargeted-linf|l2"
  double asr = 0;
  std::optional<double> aqn;
  std::optional<double> mqn;
};

inline std::vector<LeaderboardRecord> build_leaderboard(
    const std::vector<nlohmann::json>& reports) {
  if (reports.empty()) throw NoReports("no reports to merge");
  std::vector<LeaderboardRecord> records;
  for (const auto& j : reports) {
    LeaderboardRecord r;
    r.attack = j.at("config").value("attack", "unknown");
    std::string t = j.at("config").value("targeted", false) ? "targeted" : "untargeted";
    r.setting = t + "-" + j.at("config").value("norm", "linf");
    r.asr = j.at("metrics").at("asr").get<double>();
    if (!j.at("metrics").at("aqn").is_null()) r.aqn = j.at("metrics").at("aqn").get<double>();
    if (!j.at("metrics").at("mqn").is_null()) r.mqn = j.at("metrics").at("mqn").get<double>();
    records.push_back(std::move(r));
  }
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.setting != b.setting) return a.setting < b.setting;
    if (a.asr != b.asr) return a.asr > b.asr;
    double qa = a.aqn.value_or(1e300), qb = b.aqn.value_or(1e300);
    return qa < qb;
  });
  return records;
}

inline nlohmann::json leaderboard_to_json(const std::vector<LeaderboardRecord>& records) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : records)
    j.push_back({{"attack", r.attack},
                 {"setting", r.setting},
                 {"asr", r.asr},
                 {"aqn", r.aqn ? nlohmann::json(*r.aqn) : nlohmann::json(nullptr)},
                 {"mqn", r.mqn ? nlohmann::json(*r.mqn) : nlohmann::json(nullptr)}});
  return j;
}

}  // namespace bbx
