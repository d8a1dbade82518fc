#include <doctest.h>

#include <fstream>
#include <map>

#include "matdesign/evaluation.hpp"
#include "run_fixture.hpp"
#include "stub_predictor.hpp"

using namespace matdesign;

namespace {

struct FinishedRun {
  std::shared_ptr<const RunInputs> inputs;
  std::filesystem::path dir;
  std::uint64_t hash = 0;
};

FinishedRun train_to_end(RunConfig cfg) {
  auto in = RunInputs::prepare(cfg);
  Trainer tr(in, testsupport::cached_guidance(*in), make_llm(cfg.llm));
  tr.run();
  return {in, cfg.out_dir, tr.state_hash()};
}

const FinishedRun& reference_run() {
  static const FinishedRun run = train_to_end(testsupport::tiny_config("trainer_ref"));
  return run;
}

std::map<std::uint64_t, std::shared_ptr<const GuidanceBundle>> bundles_of(const FinishedRun& run) {
  std::map<std::uint64_t, std::shared_ptr<const GuidanceBundle>> out;
  for (const auto& entry : std::filesystem::directory_iterator(run.dir / "bundles")) {
    auto b = std::make_shared<const GuidanceBundle>(GuidanceBundle::load(entry.path(), run.inputs->table));
    out[b->version] = b;
  }
  return out;
}

}  // namespace

TEST_CASE("step and episode counts are conserved") {
  const auto& run = reference_run();
  const auto log = read_trajectory(run.dir / "trajectory.jsonl");
  const auto episodes = read_json_lines(run.dir / "episodes.jsonl");
  const auto& cfg = run.inputs->config;
  CHECK(static_cast<std::int64_t>(log.size()) == cfg.train.t_max);
  CHECK(static_cast<int>(episodes.size()) == cfg.train.epochs);
  std::int64_t steps = 0;
  for (const auto& e : episodes) steps += e.at("steps").get<int>();
  CHECK(steps == static_cast<std::int64_t>(log.size()));
  for (std::size_t i = 0; i < log.size(); ++i) {
    CHECK(log[i].t == static_cast<std::int64_t>(i));
    CHECK(log[i].k >= 1);
    CHECK(log[i].k <= cfg.env.episode_steps);
    if (i > 0 && log[i].epoch == log[i - 1].epoch) CHECK(log[i].k == log[i - 1].k + 1);
  }
}

TEST_CASE("episode summaries follow from the trajectory") {
  const auto& run = reference_run();
  const auto rebuilt = summaries_from_trajectory(read_trajectory(run.dir / "trajectory.jsonl"));
  const auto logged = read_json_lines(run.dir / "episodes.jsonl");
  REQUIRE(rebuilt.size() == logged.size());
  for (std::size_t i = 0; i < rebuilt.size(); ++i) {
    const auto s = EpisodeSummary::from_json(logged[i]);
    CHECK(s.epoch == rebuilt[i].epoch);
    CHECK(s.steps == rebuilt[i].steps);
    CHECK(s.legal == rebuilt[i].legal);
    CHECK(s.bmg == rebuilt[i].bmg);
    CHECK(s.done == rebuilt[i].done);
    CHECK(s.total_reward == doctest::Approx(rebuilt[i].total_reward).epsilon(1e-12));
    CHECK(s.values == rebuilt[i].values);
  }
}

TEST_CASE("every logged reward is reproduced by its bundle") {
  const auto& run = reference_run();
  const auto bundles = bundles_of(run);
  for (const auto& r : read_trajectory(run.dir / "trajectory.jsonl")) {
    REQUIRE(bundles.count(r.bundle_version));
    const auto b = rescore_step(r, *bundles.at(r.bundle_version), *run.inputs);
    CHECK(b.total == doctest::Approx(r.reward).epsilon(1e-9));
    CHECK(b.legal == r.legal());
    CHECK(b.done == r.done());
  }
}

TEST_CASE("knowledge reward applies exactly inside its gate") {
  const auto& run = reference_run();
  const auto& cfg = run.inputs->config;
  int applied = 0;
  for (const auto& r : read_trajectory(run.dir / "trajectory.jsonl")) {
    const bool gate = r.legal() && static_cast<double>(r.t) >= 0.8 * static_cast<double>(cfg.train.t_max) &&
                      r.breakdown.cls_prob && *r.breakdown.cls_prob > 0.8;
    CHECK(r.breakdown.kbr_gate == gate);
    const auto& f = r.breakdown.flags;
    const bool unavailable = std::find(f.begin(), f.end(), "kbr_unavailable") != f.end();
    if (gate) CHECK((r.breakdown.kbr_applied || unavailable));
    if (!gate) CHECK_FALSE(r.breakdown.kbr_applied);
    if (r.breakdown.kbr_applied) {
      ++applied;
      CHECK(r.reward == doctest::Approx((1 - 0.2) * r.breakdown.pre_blend + 0.2 * *r.breakdown.r_llm));
    }
  }
  MESSAGE("knowledge reward applied on " << applied << " steps");
}

TEST_CASE("variance refinement is only considered early") {
  const auto& run = reference_run();
  const auto path = run.dir / "amr_events.jsonl";
  if (!std::filesystem::exists(path)) return;
  const double limit = 0.2 * static_cast<double>(run.inputs->config.train.t_max);
  for (const auto& e : read_json_lines(path)) {
    if (e.at("kind") == "variance") CHECK(e.at("t").get<double>() < limit);
    if (e.at("kind") == "correlation") CHECK(e.at("t").get<double>() >= limit);
    CHECK(e.at("iterations").size() <= 3);
  }
}

TEST_CASE("resume reproduces an uninterrupted run") {
  const auto& ref = reference_run();
  auto cfg = testsupport::tiny_config("trainer_resume");
  auto in = RunInputs::prepare(cfg);
  {
    Trainer first(in, testsupport::cached_guidance(*in), make_llm(cfg.llm));
    first.run(7);  // stops between periodic checkpoints; run() saves on exit
  }
  // A crash after the checkpoint leaves extra log lines that resume must drop.
  std::ofstream(cfg.out_dir / "trajectory.jsonl", std::ios::app) << "{\"partial\":true}\n";
  auto second = Trainer::resume(in, make_llm(cfg.llm), cfg.out_dir);
  CHECK(second.epoch() == 7);
  second.run();
  CHECK(second.state_hash() == ref.hash);
}

TEST_CASE("resume refuses a changed trajectory configuration") {
  auto cfg = testsupport::tiny_config("trainer_mismatch");
  auto in = RunInputs::prepare(cfg);
  {
    Trainer tr(in, testsupport::cached_guidance(*in), make_llm(cfg.llm));
    tr.run(1);
  }
  cfg.reward["alpha"] = 0.9;
  auto changed = RunInputs::prepare(cfg);
  CHECK_THROWS_AS(Trainer::resume(changed, make_llm(cfg.llm), cfg.out_dir), ConfigError);
  CHECK_THROWS_AS(Trainer::resume(in, make_llm(cfg.llm), testsupport::scratch_dir("trainer_empty")), DataError);
}

TEST_CASE("ablation switches are honoured") {
  auto cfg = testsupport::tiny_config("trainer_ablation");
  cfg.train.use_tep = false;
  cfg.train.use_amr = false;
  cfg.train.use_kbr = false;
  const auto run = train_to_end(cfg);
  for (const auto& r : read_trajectory(run.dir / "trajectory.jsonl")) {
    CHECK_FALSE(r.breakdown.kbr_applied);
    CHECK_FALSE(r.breakdown.r_llm.has_value());
  }
  for (const auto& e : read_json_lines(run.dir / "episodes.jsonl")) {
    CHECK(e.at("tep_replaced") == 0);
    CHECK(e.at("amr_trigger").is_null());
  }
  CHECK_FALSE(std::filesystem::exists(run.dir / "pools"));
  CHECK((!std::filesystem::exists(run.dir / "amr_events.jsonl") ||
         std::filesystem::file_size(run.dir / "amr_events.jsonl") == 0));
}

TEST_CASE("experience pool replacements show up once updates start") {
  const auto& run = reference_run();
  std::size_t replaced = 0;
  int updates = 0;
  for (const auto& e : read_json_lines(run.dir / "episodes.jsonl")) {
    replaced += e.at("tep_replaced").get<std::size_t>();
    updates += e.at("updates").get<int>();
    if (e.at("updates") == 0) CHECK(e.at("critic_loss").is_null());
  }
  CHECK(updates > 0);
  CHECK(replaced > 0);
  CHECK(std::filesystem::exists(run.dir / "pool_stats.json"));
}

TEST_CASE("trajectory records round-trip and malformed lines are reported") {
  const auto& run = reference_run();
  const auto log = read_trajectory(run.dir / "trajectory.jsonl");
  REQUIRE(!log.empty());
  CHECK(StepRecord::from_json(log.back().to_json()).to_json() == log.back().to_json());
  const auto bad = testsupport::scratch_dir("trainer_bad") / "t.jsonl";
  std::ofstream(bad) << log.front().to_json().dump() << "\n{not json\n";
  CHECK_THROWS_AS(read_trajectory(bad), DataError);
  std::ofstream(bad) << "{\"epoch\":1}\n";
  CHECK_THROWS_AS(read_trajectory(bad), DataError);
}

TEST_CASE("design keeps ranked, distinct, qualifying compositions") {
  const auto& in = *reference_run().inputs;
  // Guidance that rates everything as a strong glass above every threshold.
  testsupport::FunctionPredictor pred([&](const Composition& c) {
    Prediction p;
    p.cls_prob = 0.9;
    for (int i = 0; i < kPropertyCount; ++i) {
      const auto& tau = in.reward.thresholds.tau[static_cast<std::size_t>(i)];
      p.props[i] = (tau ? *tau : 1.0) * (1.5 + c[0] / 100.0);
    }
    p.props[index_of(Property::Tl)] = p.props[index_of(Property::Tg)];
    return p;
  });
  EnvironmentConfig env = in.config.env;
  const auto report = design(random_policy(1.0, 3), pred, in.bases, in.reward, env, 6, 11);
  CHECK(report.episodes == 6);
  CHECK(report.steps == 6 * env.episode_steps);
  CHECK(report.hits >= static_cast<int>(report.candidates.size()));
  REQUIRE(!report.candidates.empty());
  for (std::size_t i = 0; i < report.candidates.size(); ++i) {
    const auto& c = report.candidates[i];
    CHECK(thresholds_met(c.prediction.props, in.reward));
    CHECK(std::abs(c.composition.sum() - 100.0) < 1e-6);
    if (i > 0) CHECK(report.candidates[i - 1].score >= c.score);
    for (std::size_t j = 0; j < i; ++j)
      CHECK(max_norm_distance(report.candidates[j].composition, c.composition) > in.reward.match_tolerance);
  }
  CHECK_THROWS_AS(design(random_policy(1.0, 3), pred, {}, in.reward, env, 1, 1), ConfigError);
}

TEST_CASE("design score rewards margin over the thresholds") {
  ThresholdSet t;
  t.tau[0] = 2.0;
  t.tau[4] = 1000.0;
  t.weight[0] = 0.25;
  t.weight[4] = 0.75;
  RewardConfig r;
  r.thresholds = t;
  Prediction p;
  p.props[0] = 4.0;
  p.props[4] = 1000.0;
  CHECK(design_score(p, r) == doctest::Approx(0.25 * 2.0 + 0.75 * 1.0));
  r.higher_is_better[0] = false;
  CHECK(design_score(p, r) == doctest::Approx(0.25 * 0.5 + 0.75 * 1.0));
}
