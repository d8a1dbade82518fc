// Command-line front end: data ingest, guidance, experience pool, training,
// design, evaluation, baselines and reports. Every subcommand works inside
// the run directory named by the config (out_dir) or --out.

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>

#include "matdesign/evaluation.hpp"

using namespace matdesign;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  CliOverrides overrides;
  std::uint64_t seed = 0;
  std::string llm;
  std::string out;
};

RunConfig load_config(const Globals& g) {
  const std::filesystem::path path =
      g.config.empty() ? default_data_dir() / "configs" / "default.json" : std::filesystem::path(g.config);
  auto config = RunConfig::load(path);
  auto o = g.overrides;
  if (!g.llm.empty()) o.llm_mode = g.llm;
  if (!g.out.empty()) o.out_dir = g.out;
  apply_overrides(config, o);
  return config;
}

std::filesystem::path guidance_path(const RunConfig& c) { return c.out_dir / "guidance.bin"; }

void write_json(const std::filesystem::path& path, const json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::string pct(const Rate& r) {
  const auto p = r.percent();
  if (!p) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << *p;
  return s.str();
}

void print_rates(const std::string& name, const SuccessRates& r) {
  std::cout << name << ": SR_legal " << pct(r.legal) << "  SR_cls " << pct(r.cls);
  for (std::size_t i = 0; i < r.sr80.size(); ++i) std::cout << "  SR_80[" << kSr80Columns[i] << "] " << pct(r.sr80[i]);
  std::cout << "  SR_done " << pct(r.done) << "  (" << r.steps << " steps, " << r.epochs << " epochs)\n";
}

// ------------------------------------------------------------------ subcommands

void cmd_ingest(const RunConfig& c) {
  auto in = RunInputs::prepare(c);
  const auto& d = in->data;
  json summary = {{"dataset", c.data.dataset_path().string()},
                  {"classification_rows", d.classification.size()},
                  {"regression_rows", d.regression.size()},
                  {"bmg_compositions", in->pool_source.size()},
                  {"bases", in->bases.size()}};
  write_json(c.out_dir / "ingest" / "dataset_summary.json", summary);
  write_json(c.out_dir / "ingest" / "thresholds.json", in->thresholds.to_json());
  write_json(c.out_dir / "ingest" / "bases.json", bases_manifest(in->bases));
  std::cout << "rows: " << d.classification.size() << " classification, " << d.regression.size() << " regression\n";
  std::cout << "thresholds (" << c.data.percentile * 100 << "th percentile):\n";
  for (int p = 0; p < kPropertyCount; ++p) {
    const auto& tau = in->thresholds.tau[static_cast<std::size_t>(p)];
    std::cout << "  " << std::setw(8) << kPropertyNames[static_cast<std::size_t>(p)] << "  "
              << (tau ? std::to_string(*tau) : std::string("-")) << "  weight "
              << in->thresholds.weight[static_cast<std::size_t>(p)] << '\n';
  }
  std::cout << "bases:";
  for (const auto& b : in->bases) std::cout << ' ' << b.symbol() << '(' << b.allowed.size() << ')';
  std::cout << "\nwrote " << (c.out_dir / "ingest").string() << '\n';
}

void cmd_train_guidance(const RunConfig& c, bool force) {
  auto in = RunInputs::prepare(c);
  if (force) std::filesystem::remove(guidance_path(c));
  const auto bundle = load_or_train_guidance(*in, guidance_path(c));
  std::cout << "guidance bundle v" << bundle->version << " at " << guidance_path(c).string() << '\n';
  const auto r2 = bundle->mean_cv_r2();
  std::cout << "mean CV R2 " << (r2 ? std::to_string(*r2) : std::string("n/a")) << ", " << bundle->features.size()
            << " appended features\n";
}

void cmd_build_tep(const RunConfig& c) {
  auto in = RunInputs::prepare(c);
  const auto bundle = load_or_train_guidance(*in, guidance_path(c));
  const RunPaths paths{c.out_dir};
  const auto pool = load_or_build_pool(*in, bundle, paths.pool(bundle->version));
  const auto stats = pool_stats(pool, c.tep.histogram_bins);
  write_json(c.out_dir / "pool_stats.json", stats.to_json());
  std::cout << "experience pool: " << pool.size() << " entries from " << in->pool_source.size()
            << " compositions, mean reward " << stats.mean << ", " << 100.0 * stats.fraction_in_band
            << "% in [0.4, 0.6], " << stats.illegal << " illegal\n";
}

void cmd_train(const RunConfig& c, bool resume, std::optional<int> epochs) {
  auto in = RunInputs::prepare(c);
  auto llm = make_llm(c.llm);
  const auto bundle = load_or_train_guidance(*in, guidance_path(c));
  auto trainer = resume ? Trainer::resume(in, llm, c.out_dir) : Trainer(in, bundle, llm);
  std::cout << (resume ? "resuming" : "training") << " in " << c.out_dir.string() << " from epoch "
            << trainer.epoch() << " (t=" << trainer.t() << ")\n";
  trainer.run(epochs);
  std::cout << "stopped at epoch " << trainer.epoch() << ", t=" << trainer.t() << ", guidance v"
            << trainer.bundle()->version << ", state " << hex64(trainer.state_hash()) << '\n';
  print_rates("training", success_rates(read_trajectory(trainer.paths().trajectory()), in->thresholds));
}

void cmd_design(const RunConfig& c, int episodes, std::size_t top) {
  auto in = RunInputs::prepare(c);
  auto trained = load_trained(*in, c.out_dir);
  BundlePredictor predictor(trained.bundle);
  const auto report = design(greedy_policy(trained.agent), predictor, in->bases, in->reward, c.env,
                             episodes > 0 ? episodes : c.eval.episodes, c.seed);
  write_json(c.out_dir / "designs.json", report.to_json());
  std::cout << report.episodes << " episodes, " << report.steps << " steps, " << report.hits << " qualifying states, "
            << report.candidates.size() << " distinct\n";
  for (std::size_t i = 0; i < std::min(top, report.candidates.size()); ++i) {
    const auto& d = report.candidates[i];
    std::cout << "  " << std::setw(3) << i + 1 << "  " << formula(d.composition) << "  score " << d.score << "  p(BMG) "
              << d.prediction.cls_prob << '\n';
  }
}

void cmd_evaluate(const RunConfig& c, int episodes) {
  auto in = RunInputs::prepare(c);
  auto trained = load_trained(*in, c.out_dir);
  const int n = episodes > 0 ? episodes : c.eval.episodes;
  const auto agent = evaluate_policy(greedy_policy(trained.agent), trained.bundle, *in, n, c.seed);
  const auto random = evaluate_policy(random_policy(c.env.delta_max, c.seed), trained.bundle, *in, n, c.seed);
  json doc = {{"episodes", n}, {"agent", agent.to_json()}, {"random", random.to_json()}};
  const auto log_path = RunPaths{c.out_dir}.trajectory();
  if (std::filesystem::exists(log_path)) {
    const auto rates = success_rates(read_trajectory(log_path), in->thresholds);
    doc["training"] = rates.to_json();
    print_rates("training", rates);
  }
  write_json(c.out_dir / "evaluation.json", doc);
  std::cout << "mean episode reward over " << n << " episodes: agent " << agent.mean << " (" << agent.legal << "/"
            << agent.steps << " legal), random " << random.mean << " (" << random.legal << "/" << random.steps
            << " legal)\n";
}

void cmd_baseline(const RunConfig& c, const std::string& method, double resolution) {
  auto in = RunInputs::prepare(c);
  const auto bundle = load_or_train_guidance(*in, guidance_path(c));
  BundlePredictor predictor(bundle, c.eval.budget);
  BaselineRun run;
  if (method == "random") {
    run = random_baseline(*in, predictor, c.seed);
  } else {
    const double h = resolution > 0 ? resolution : c.eval.grid_resolution;
    run = grid_baseline(*in, predictor, h > 0 ? std::optional(h) : std::nullopt);
  }
  std::filesystem::create_directories(c.out_dir);
  const auto log_path = c.out_dir / ("baseline_" + method + ".jsonl");
  std::filesystem::remove(log_path);
  append_trajectory(log_path, run.log);
  json doc = run.to_json();
  if (!run.log.empty()) {
    const auto rates = success_rates(run.log, in->thresholds);
    doc["rates"] = rates.to_json();
    print_rates(method, rates);
  }
  write_json(c.out_dir / ("baseline_" + method + ".json"), doc);
  std::cout << method << " baseline: " << run.calls << " prediction calls, " << run.log.size() << " steps"
            << (run.resolution ? ", spacing " + std::to_string(*run.resolution) + " at.%" : std::string()) << '\n';
}

void cmd_report(const RunConfig& c, const std::string& out) {
  const std::filesystem::path dir = out.empty() ? c.out_dir / "report" : std::filesystem::path(out);
  write_report(c.out_dir, dir);
  std::ifstream txt(dir / "summary.txt");
  std::cout << txt.rdbuf();
  std::cout << "wrote " << dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement-learning inverse design of bulk metallic glasses"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config, "Run configuration (JSON); defaults to the bundled default.json");
  app.add_option("-s,--seed", g.seed, "Override the run seed")->each([&](const std::string&) { g.overrides.seed = g.seed; });
  app.add_option("--llm", g.llm, "LLM mode")->check(CLI::IsMember({"offline", "live"}));
  app.add_option("-o,--out", g.out, "Override the run directory");
  app.add_flag("--no-tep", g.overrides.no_tep, "Disable experience-pool replacement");
  app.add_flag("--no-amr", g.overrides.no_amr, "Disable model refinement");
  app.add_flag("--no-kbr", g.overrides.no_kbr, "Disable the knowledge reward");

  auto* ingest = app.add_subcommand("ingest", "Load the dataset; write thresholds and exploration bases");
  bool force = false;
  auto* guidance = app.add_subcommand("train-guidance", "Train (or reuse) the classification and regression models");
  guidance->add_flag("--force", force, "Retrain even when a matching bundle exists");
  auto* tep = app.add_subcommand("build-tep", "Build the experience pool and report its reward distribution");
  bool resume = false;
  int epochs = 0;
  auto* train = app.add_subcommand("train", "Train the agent");
  train->add_flag("--resume", resume, "Continue from the run's checkpoint");
  train->add_option("--epochs", epochs, "Stop after this many epochs in this invocation")->check(CLI::PositiveNumber);
  int episodes = 0;
  std::size_t top = 10;
  auto* des = app.add_subcommand("design", "Roll out the trained policy and list candidate compositions");
  des->add_option("--episodes", episodes, "Rollouts (default: eval.episodes)");
  des->add_option("--top", top, "Candidates to print");
  auto* eval = app.add_subcommand("evaluate", "Success rates of the run and trained-vs-random rollouts");
  eval->add_option("--episodes", episodes, "Rollouts (default: eval.episodes)");
  std::string method = "random";
  double resolution = 0.0;
  auto* base = app.add_subcommand("baseline", "Run a budgeted random or grid-search baseline");
  base->add_option("method", method, "random or grid")->check(CLI::IsMember({"random", "grid"}));
  base->add_option("--resolution", resolution, "Grid spacing in at.% (default: config or auto)");
  std::string report_out;
  auto* report = app.add_subcommand("report", "Write summary tables and series exports");
  report->add_option("--dir", report_out, "Output directory (default: <run>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const auto config = load_config(g);
    if (ingest->parsed()) cmd_ingest(config);
    if (guidance->parsed()) cmd_train_guidance(config, force);
    if (tep->parsed()) cmd_build_tep(config);
    if (train->parsed()) cmd_train(config, resume, epochs > 0 ? std::optional(epochs) : std::nullopt);
    if (des->parsed()) cmd_design(config, episodes, top);
    if (eval->parsed()) cmd_evaluate(config, episodes);
    if (base->parsed()) cmd_baseline(config, method, resolution);
    if (report->parsed()) cmd_report(config, report_out);
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    std::cerr << (code == kExitConfig ? "config error: " : code == kExitData ? "data error: " : "error: ") << e.what()
              << '\n';
    return code;
  }
  return kExitOk;
}
