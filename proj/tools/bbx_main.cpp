#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bbx/bbx.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitOracle = 3;
constexpr int kExitIo = 4;

struct GlobalOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 1;
  std::string out_dir = ".";
};

// Schema check: every object key must be known; all offenders are reported
// at once.
void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where,
                std::vector<std::string>& offenders) {
  if (!obj.is_object()) return;
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key())) offenders.push_back(where + "." + it.key());
}

void validate_config(const json& cfg) {
  std::vector<std::string> offenders;
  check_keys(cfg, {"dataset", "model", "oracle", "defense", "attack", "evaluation", "evaluate",
                   "analyze", "serve", "seed", "jobs", "out"},
             "config", offenders);
  if (cfg.contains("dataset"))
    check_keys(cfg["dataset"], {"path", "generate"}, "dataset", offenders);
  if (cfg.contains("dataset") && cfg["dataset"].contains("generate"))
    check_keys(cfg["dataset"]["generate"], {"n", "sigma"}, "dataset.generate", offenders);
  if (cfg.contains("model"))
    check_keys(cfg["model"], {"weights", "hidden", "epochs", "lr", "batch", "adv"}, "model",
               offenders);
  if (cfg.contains("model") && cfg["model"].contains("adv"))
    check_keys(cfg["model"]["adv"], {"eps", "step", "steps"}, "model.adv", offenders);
  if (cfg.contains("oracle"))
    check_keys(cfg["oracle"], {"kind", "weights", "host", "port", "retries"}, "oracle", offenders);
  if (cfg.contains("defense"))
    check_keys(cfg["defense"], {"kind", "sigma", "tau", "kappa", "seed"}, "defense", offenders);
  auto check_attack = [&](const json& a, const std::string& where) {
    check_keys(a,
               {"kind", "norm", "eps", "step", "max_queries", "iterations", "targeted",
                "target_rule", "target", "params", "params_0255"},
               where, offenders);
  };
  if (cfg.contains("attack")) check_attack(cfg["attack"], "attack");
  if (cfg.contains("evaluate") && cfg["evaluate"].is_array()) {
    std::size_t i = 0;
    for (const auto& a : cfg["evaluate"]) check_attack(a, "evaluate[" + std::to_string(i++) + "]");
  }
  if (cfg.contains("evaluation"))
    check_keys(cfg["evaluation"], {"count", "seed", "budgets", "curve", "traces", "targets"},
               "evaluation", offenders);
  if (cfg.contains("analyze"))
    check_keys(cfg["analyze"],
               {"tool", "example", "loss", "grid", "extent", "resolution", "anchors"}, "analyze",
               offenders);
  if (cfg.contains("serve")) check_keys(cfg["serve"], {"host", "port"}, "serve", offenders);
  if (!offenders.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : offenders) msg += " " + k;
    throw bbx::ConfigInvalid(msg);
  }
}

json load_config(const GlobalOpts& g) {
  if (g.config_path.empty()) return json::object();
  std::ifstream f(g.config_path);
  if (!f) throw bbx::IoError("cannot open config: " + g.config_path);
  json cfg;
  try {
    f >> cfg;
  } catch (const std::exception& e) {
    throw bbx::ConfigInvalid(std::string("config parse error: ") + e.what());
  }
  validate_config(cfg);
  return cfg;
}

std::uint64_t effective_seed(const GlobalOpts& g, const json& cfg) {
  if (g.seed_set) return g.seed;
  return cfg.value("seed", std::uint64_t{0});
}

bbx::Dataset load_or_generate_dataset(const json& cfg, std::uint64_t seed) {
  if (!cfg.contains("dataset")) throw bbx::ConfigInvalid("config needs a \"dataset\" section");
  const json& d = cfg["dataset"];
  if (d.contains("path")) {
    std::string path = d["path"].get<std::string>();
    if (!fs::exists(path)) throw bbx::DatasetMissing("dataset path does not exist: " + path);
    return bbx::load_dataset(path);
  }
  const json& gen = d.value("generate", json::object());
  auto n = gen.value("n", std::size_t{200});
  double sigma = gen.value("sigma", 0.1);
  bbx::Rng rng(seed, 0xDA);
  return bbx::make_blobs(n, rng, sigma);
}

bbx::AttackConfig parse_attack_config(const json& a) {
  bbx::AttackConfig cfg;
  cfg.norm = bbx::norm_from_string(a.value("norm", std::string("linf")));
  cfg.eps = a.value("eps", 0.05);
  cfg.step = a.value("step", 0.01);
  cfg.targeted = a.value("targeted", false);
  cfg.max_queries = a.value("max_queries",
                            std::size_t{cfg.targeted ? 100000u : 10000u});
  cfg.iterations = a.value("iterations", std::size_t{100});
  cfg.target_rule = bbx::target_rule_from_string(a.value("target_rule", std::string("median")));
  cfg.specified_target = a.value("target", std::size_t{0});
  bool scale255 = a.value("params_0255", false);
  const json params = a.value("params", json::object());
  for (auto it = params.begin(); it != params.end(); ++it)
    cfg.params[it.key()] = it.value().get<double>() / (scale255 ? 255.0 : 1.0);
  cfg.validate();
  return cfg;
}

std::shared_ptr<bbx::ModelOracle> wrap_defense(std::shared_ptr<bbx::ModelOracle> inner,
                                               const json& cfg) {
  if (!cfg.contains("defense")) return inner;
  const json& d = cfg["defense"];
  std::string kind = d.value("kind", std::string("none"));
  if (kind == "none") return inner;
  if (kind == "rnd") {
    bbx::RndConfig rc;
    rc.sigma = d.value("sigma", 0.02);
    rc.seed = d.value("seed", std::uint64_t{0});
    return bbx::wrap_rnd(std::move(inner), rc);
  }
  if (kind == "aaa_linear" || kind == "aaa_sine") {
    bbx::AaaConfig ac;
    ac.variant = kind == "aaa_sine" ? bbx::AaaVariant::Sine : bbx::AaaVariant::Linear;
    ac.tau = d.value("tau", 1.0);
    ac.kappa = d.value("kappa", 1.0);
    return bbx::wrap_aaa(std::move(inner), ac);
  }
  throw bbx::ConfigInvalid("unknown defense kind: " + kind);
}

// Clean (undefended) local twin for eligibility; remote oracles use peek_*.
struct OraclePair {
  std::shared_ptr<bbx::ModelOracle> attack_target;
  std::shared_ptr<bbx::ModelOracle> clean;
  std::shared_ptr<bbx::MlpModel> local_model;  // set for local oracles
};

OraclePair build_oracle(const json& cfg) {
  if (!cfg.contains("oracle")) throw bbx::ConfigInvalid("config needs an \"oracle\" section");
  const json& o = cfg["oracle"];
  std::string kind = o.value("kind", std::string("local"));
  OraclePair pair;
  if (kind == "local") {
    std::string weights = o.value("weights", std::string());
    if (weights.empty()) throw bbx::ConfigInvalid("local oracle needs oracle.weights");
    if (!fs::exists(weights)) throw bbx::IoError("weights file does not exist: " + weights);
    pair.local_model = std::make_shared<bbx::MlpModel>(bbx::load_bbw(weights));
    pair.clean = std::make_shared<bbx::LocalOracle>(*pair.local_model);
    pair.attack_target = wrap_defense(std::make_shared<bbx::LocalOracle>(*pair.local_model), cfg);
    return pair;
  }
  if (kind == "remote") {
    std::string host = o.value("host", std::string("127.0.0.1"));
    int port = o.value("port", 8080);
    int retries = o.value("retries", 3);
    auto remote = std::make_shared<bbx::RemoteOracle>(host, port, retries);
    pair.clean = remote;
    pair.attack_target = wrap_defense(remote, cfg);
    return pair;
  }
  throw bbx::ConfigInvalid("unknown oracle kind: " + kind);
}

void write_traces_jsonl(const bbx::CampaignReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw bbx::IoError("cannot open for write: " + path);
  for (const auto& r : report.examples) {
    json j{{"index", r.index},
           {"label", r.label},
           {"success", r.trace.success},
           {"queries", r.trace.queries},
           {"final_norm", r.trace.final_norm},
           {"init_failed", r.init_failed}};
    if (!r.trace.history.empty()) {
      json h = json::array();
      for (auto& [q, v] : r.trace.history) h.push_back({q, v});
      j["history"] = std::move(h);
    }
    f << j.dump() << "\n";
  }
}

int cmd_train(const GlobalOpts& g, const json& cfg) {
  std::uint64_t seed = effective_seed(g, cfg);
  bbx::Dataset ds = load_or_generate_dataset(cfg, seed);
  const json& m = cfg.value("model", json::object());
  bbx::TrainConfig tc;
  tc.hidden = m.value("hidden", std::vector<std::size_t>{16});
  tc.epochs = m.value("epochs", std::size_t{50});
  tc.lr = m.value("lr", 0.1);
  tc.batch = m.value("batch", std::size_t{16});
  if (m.contains("adv")) {
    bbx::PgdAtConfig at;
    at.eps = m["adv"].value("eps", 0.3);
    at.step = m["adv"].value("step", 0.075);
    at.steps = m["adv"].value("steps", std::size_t{10});
    tc.adv = at;
  }
  bbx::Rng rng(seed, 0x7E);
  bbx::MlpModel model = bbx::train(ds, tc, rng);

  fs::create_directories(g.out_dir);
  std::string out = (fs::path(g.out_dir) / "model.bbw").string();
  bbx::save_bbw(model, out);
  double acc = bbx::accuracy(model, ds);
  std::cout << "weights: " << out << "\nclean_accuracy: " << acc << "\n";
  json meta{{"clean_accuracy", acc}, {"seed", seed}, {"adversarial_training", tc.adv.has_value()}};
  if (tc.adv) {
    bbx::Rng eval_rng(seed, 0x7D);
    double rob = bbx::robust_accuracy(model, ds, *tc.adv, eval_rng);
    std::cout << "robust_accuracy: " << rob << "\n";
    meta["robust_accuracy"] = rob;
    meta["at"] = {{"eps", tc.adv->eps}, {"step", tc.adv->step}, {"steps", tc.adv->steps}};
  }
  std::ofstream mf((fs::path(g.out_dir) / "train_meta.json").string());
  mf << meta.dump(2) << "\n";
  return kExitOk;
}

int cmd_serve(const GlobalOpts& g, const json& cfg) {
  (void)g;
  OraclePair pair = build_oracle(cfg);
  const json& s = cfg.value("serve", json::object());
  std::string host = s.value("host", std::string("127.0.0.1"));
  int port = s.value("port", 8080);
  bbx::OracleServer server(pair.attack_target);
  std::cout << "serving on " << host << ":" << port << "\n" << std::flush;
  server.listen(host, port);
  return kExitOk;
}

bbx::CampaignReport run_one_campaign(const GlobalOpts& g, const json& cfg, const json& attack_json,
                                     const bbx::Dataset& ds, OraclePair& pair) {
  bbx::CampaignSpec spec;
  std::string kind = attack_json.value("kind", std::string());
  spec.attack = bbx::query_attack_from_string(kind);
  spec.cfg = parse_attack_config(attack_json);
  const json& ev = cfg.value("evaluation", json::object());
  spec.count = ev.value("count", std::size_t{10});
  spec.seed = effective_seed(g, cfg) + ev.value("seed", std::uint64_t{0});
  spec.jobs = g.jobs;
  return bbx::run_campaign(*pair.attack_target, *pair.clean, ds, spec);
}

int cmd_attack(const GlobalOpts& g, const json& cfg) {
  std::uint64_t seed = effective_seed(g, cfg);
  bbx::Dataset ds = load_or_generate_dataset(cfg, seed);
  if (!cfg.contains("attack")) throw bbx::ConfigInvalid("config needs an \"attack\" section");
  const json& a = cfg["attack"];
  std::string kind = a.value("kind", std::string());
  fs::create_directories(g.out_dir);

  // transfer presets run against the local surrogate, query attacks against
  // the oracle
  bool is_transfer = std::find(bbx::transfer_preset_names().begin(),
                               bbx::transfer_preset_names().end(),
                               kind) != bbx::transfer_preset_names().end();
  if (is_transfer) {
    OraclePair pair = build_oracle(cfg);
    if (!pair.local_model)
      throw bbx::ConfigInvalid("transfer attacks need a local surrogate oracle");
    bbx::AttackConfig acfg = parse_attack_config(a);
    const json& ev = cfg.value("evaluation", json::object());
    auto report = bbx::run_transfer_campaign(*pair.local_model, {pair.local_model.get()}, kind,
                                             acfg, ds, ev.value("count", std::size_t{10}), seed);
    json j{{"config", {{"attack", kind},
                       {"norm", bbx::to_string(acfg.norm)},
                       {"eps", acfg.eps},
                       {"targeted", acfg.targeted},
                       {"seed", seed}}},
           {"metrics", {{"asr", report.mean_asr}, {"aqn", nullptr}, {"mqn", nullptr}}},
           {"per_target_asr", report.per_target_asr}};
    std::ofstream f((fs::path(g.out_dir) / "report.json").string());
    if (!f) throw bbx::IoError("cannot write report");
    f << j.dump(2) << "\n";
    std::cout << "asr: " << report.mean_asr << "\n";
    return kExitOk;
  }

  OraclePair pair = build_oracle(cfg);
  bbx::CampaignReport report = run_one_campaign(g, cfg, a, ds, pair);
  bbx::write_report(report, (fs::path(g.out_dir) / "report.json").string());
  const json& ev = cfg.value("evaluation", json::object());
  if (ev.value("curve", false)) {
    std::vector<std::size_t> budgets =
        ev.value("budgets", std::vector<std::size_t>{10, 100, 1000, 10000});
    bbx::write_curve_csv(report, budgets, (fs::path(g.out_dir) / "curve.csv").string());
  }
  if (ev.value("traces", false))
    write_traces_jsonl(report, (fs::path(g.out_dir) / "traces.jsonl").string());
  std::cout << "asr: " << report.metrics.asr << "\n";
  return kExitOk;
}

int cmd_evaluate(const GlobalOpts& g, const json& cfg) {
  std::uint64_t seed = effective_seed(g, cfg);
  bbx::Dataset ds = load_or_generate_dataset(cfg, seed);
  if (!cfg.contains("evaluate") || !cfg["evaluate"].is_array() || cfg["evaluate"].empty())
    throw bbx::ConfigInvalid("config needs a nonempty \"evaluate\" array");
  OraclePair pair = build_oracle(cfg);
  fs::create_directories(g.out_dir);
  std::size_t i = 0;
  for (const auto& a : cfg["evaluate"]) {
    bbx::CampaignReport report = run_one_campaign(g, cfg, a, ds, pair);
    std::string name = "report_" + std::to_string(i++) + "_" +
                       a.value("kind", std::string("attack")) + ".json";
    bbx::write_report(report, (fs::path(g.out_dir) / name).string());
    std::cout << a.value("kind", std::string()) << " asr: " << report.metrics.asr << "\n";
  }
  return kExitOk;
}

int cmd_analyze(const GlobalOpts& g, const json& cfg) {
  std::uint64_t seed = effective_seed(g, cfg);
  bbx::Dataset ds = load_or_generate_dataset(cfg, seed);
  OraclePair pair = build_oracle(cfg);
  if (!cfg.contains("analyze")) throw bbx::ConfigInvalid("config needs an \"analyze\" section");
  const json& an = cfg["analyze"];
  std::string tool = an.value("tool", std::string());
  fs::create_directories(g.out_dir);
  auto out_base = [&](const std::string& stem) { return (fs::path(g.out_dir) / stem).string(); };

  if (tool == "fsm" || tool == "fullgrad" || tool == "surface") {
    if (!pair.local_model)
      throw bbx::NotDifferentiable("gradient-based analysis needs a local model");
  }
  auto idx = an.value("example", std::size_t{0});
  if (idx >= ds.size()) throw bbx::ConfigInvalid("analyze.example out of range");
  bbx::Tensor x = ds.example(idx);

  if (tool == "fsm") {
    auto map = bbx::fsm(*pair.local_model, x, bbx::LossKind::CrossEntropy, ds.labels[idx]);
    bbx::export_with_sidecar(map.values, {{"kind", "fsm_magnitude"}, {"example", idx}},
                             out_base("fsm"));
    bbx::export_grid_csv(map.values, out_base("fsm") + ".csv");
    return kExitOk;
  }
  if (tool == "fullgrad") {
    auto map = bbx::fullgrad(*pair.local_model, x);
    bbx::export_with_sidecar(map.values, {{"kind", "fullgrad"}, {"example", idx}},
                             out_base("fullgrad"));
    return kExitOk;
  }
  if (tool == "surface") {
    bbx::Rng rng(seed, 0xA0);
    bbx::Tensor alpha =
        bbx::grad_input(*pair.local_model, x, bbx::LossKind::CrossEntropy, ds.labels[idx]);
    if (bbx::norm(alpha, bbx::NormKind::L2) == 0) alpha = bbx::gaussian_tensor(rng, x.shape());
    auto grid = bbx::decision_surface(*pair.local_model, x, ds.labels[idx], alpha, rng,
                                      an.value("grid", std::size_t{21}),
                                      an.value("extent", 0.5));
    json sidecar{{"kind", "decision_surface"},
                 {"example", idx},
                 {"i_axis", grid.is},
                 {"j_axis", grid.js},
                 {"alpha", std::vector<double>(grid.alpha.data(), grid.alpha.data() + grid.alpha.size())},
                 {"beta", std::vector<double>(grid.beta.data(), grid.beta.data() + grid.beta.size())}};
    bbx::export_with_sidecar(grid.values, sidecar, out_base("surface"));
    bbx::export_grid_csv(grid.values, out_base("surface") + ".csv");
    return kExitOk;
  }
  if (tool == "dbviz") {
    auto anchors = an.value("anchors", std::vector<std::size_t>{0, 1, 2});
    if (anchors.size() != 3) throw bbx::ConfigInvalid("dbviz needs exactly 3 anchors");
    for (auto a2 : anchors)
      if (a2 >= ds.size()) throw bbx::ConfigInvalid("dbviz anchor out of range");
    auto plane = bbx::dbviz_plane(*pair.clean, ds.example(anchors[0]), ds.example(anchors[1]),
                                  ds.example(anchors[2]), an.value("resolution", std::size_t{20}));
    json sidecar{{"kind", "dbviz"},
                 {"anchors", anchors},
                 {"anchor_coords",
                  {{plane.a1_b, plane.a1_p}, {plane.a2_b, plane.a2_p}, {plane.a3_b, plane.a3_p}}}};
    bbx::export_with_sidecar(plane.labels, sidecar, out_base("dbviz"));
    bbx::export_grid_csv(plane.labels, out_base("dbviz") + ".csv");
    return kExitOk;
  }
  throw bbx::ConfigInvalid("unknown analyze tool: " + tool);
}

int cmd_leaderboard(const GlobalOpts& g, const std::string& report_dir) {
  std::vector<json> reports;
  if (!fs::exists(report_dir)) throw bbx::IoError("report dir does not exist: " + report_dir);
  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(report_dir))
    if (entry.path().extension() == ".json" &&
        entry.path().filename().string().rfind("report", 0) == 0)
      paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    std::ifstream f(p);
    json j;
    f >> j;
    if (j.contains("config") && j.contains("metrics")) reports.push_back(std::move(j));
  }
  auto records = bbx::build_leaderboard(reports);  // throws NoReports when empty
  fs::create_directories(g.out_dir);
  std::string out = (fs::path(g.out_dir) / "leaderboard.json").string();
  std::ofstream f(out);
  if (!f) throw bbx::IoError("cannot write leaderboard");
  f << bbx::leaderboard_to_json(records).dump(2) << "\n";
  std::cout << "leaderboard: " << out << " (" << records.size() << " records)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"black-box adversarial attack benchmark"};
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", g.seed, "global RNG seed");
  app.add_option("--jobs", g.jobs, "worker pool size");
  app.add_option("--out", g.out_dir, "output directory");

  auto* train = app.add_subcommand("train", "train a model, write .bbw weights");
  auto* serve = app.add_subcommand("serve", "serve an oracle over HTTP");
  auto* attack = app.add_subcommand("attack", "run one attack campaign");
  auto* evaluate = app.add_subcommand("evaluate", "run the configured campaign matrix");
  auto* analyze = app.add_subcommand("analyze", "saliency / surface / plane exports");
  auto* leaderboard = app.add_subcommand("leaderboard", "merge reports into a leaderboard");
  std::string report_dir = ".";
  leaderboard->add_option("--reports", report_dir, "directory of report JSON files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  g.seed_set = seed_opt->count() > 0;

  try {
    json cfg = load_config(g);
    if (train->parsed()) return cmd_train(g, cfg);
    if (serve->parsed()) return cmd_serve(g, cfg);
    if (attack->parsed()) return cmd_attack(g, cfg);
    if (evaluate->parsed()) return cmd_evaluate(g, cfg);
    if (analyze->parsed()) return cmd_analyze(g, cfg);
    if (leaderboard->parsed()) return cmd_leaderboard(g, report_dir);
    return kExitConfig;
  } catch (const bbx::ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bbx::UnknownPreset& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bbx::NormUnsupported& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bbx::Unreachable& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return kExitOracle;
  } catch (const bbx::ProtocolError& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return kExitOracle;
  } catch (const bbx::MetaMismatch& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return kExitOracle;
  } catch (const bbx::BindFailure& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return kExitOracle;
  } catch (const bbx::NotDifferentiable& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return kExitOracle;
  } catch (const bbx::DatasetMissing& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const bbx::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
