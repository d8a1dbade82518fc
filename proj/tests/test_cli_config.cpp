#include <doctest.h>

#include <fstream>
#include <set>

#include "matdesign/config.hpp"
#include "test_support.hpp"

using namespace matdesign;
using nlohmann::json;

namespace {

json smoke_doc() {
  std::ifstream in(smoke_config_path());
  return json::parse(in);
}

}  // namespace

TEST_CASE("bundled configs load and validate") {
  const auto smoke = RunConfig::load(smoke_config_path());
  CHECK(smoke.train.epochs * smoke.env.episode_steps == smoke.train.t_max);
  CHECK_FALSE(smoke.llm.live);
  CHECK_NOTHROW(RunConfig::load(default_data_dir() / "configs" / "default.json"));
}

TEST_CASE("unknown keys and bad values are config errors") {
  auto doc = smoke_doc();
  doc["colour"] = "blue";
  CHECK_THROWS_AS(RunConfig::from_json(doc), ConfigError);
  doc = smoke_doc();
  doc["agent"]["preactivation_penalty"] = -1.0;
  CHECK_THROWS_AS(RunConfig::from_json(doc), ConfigError);
  doc = smoke_doc();
  doc["train"] = 5;
  CHECK_THROWS_AS(RunConfig::from_json(doc), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::array()), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/config.json"), ConfigError);

  const auto dir = testsupport::scratch_dir("cli_config");
  std::ofstream(dir / "broken.json") << "{\"seed\": ";
  CHECK_THROWS_AS(RunConfig::load(dir / "broken.json"), ConfigError);
}

TEST_CASE("relative data paths resolve against the config file") {
  json doc = {{"data", {{"dataset", "sub/table.csv"}, {"elements", "/abs/elements.csv"}}}};
  const auto c = RunConfig::from_json(doc, "/cfg/dir");
  CHECK(c.data.dataset == std::filesystem::path("/cfg/dir/sub/table.csv"));
  CHECK(c.data.elements == std::filesystem::path("/abs/elements.csv"));
  CHECK(RunConfig::from_json(json::object()).data.dataset_path() == default_data_dir() / "mini_dataset.csv");
}

TEST_CASE("config round-trips through json") {
  const auto c = RunConfig::load(smoke_config_path());
  const auto back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.trajectory_hash() == c.trajectory_hash());
}

TEST_CASE("trajectory hash ignores run length and location only") {
  const auto base = RunConfig::load(smoke_config_path());
  auto c = base;
  c.train.epochs += 10;
  c.out_dir = "/elsewhere";
  c.train.checkpoint_every = 1;
  CHECK(c.trajectory_hash() == base.trajectory_hash());
  c = base;
  c.agent.actor_lr *= 2;
  CHECK(c.trajectory_hash() != base.trajectory_hash());
  c = base;
  c.seed += 1;
  CHECK(c.trajectory_hash() != base.trajectory_hash());
  c = base;
  c.train.use_kbr = false;
  CHECK(c.trajectory_hash() != base.trajectory_hash());
}

TEST_CASE("command-line overrides") {
  auto c = RunConfig::load(smoke_config_path());
  c.agent.seed = c.seed;
  CliOverrides o;
  o.seed = 99;
  o.llm_mode = "live";
  o.out_dir = "/tmp/x";
  o.no_tep = o.no_amr = o.no_kbr = true;
  apply_overrides(c, o);
  CHECK(c.seed == 99);
  CHECK(c.agent.seed == 99);
  CHECK(c.llm.live);
  CHECK(c.out_dir == std::filesystem::path("/tmp/x"));
  CHECK_FALSE(c.train.use_tep);
  CHECK_FALSE(c.train.use_amr);
  CHECK_FALSE(c.train.use_kbr);

  // An explicitly different agent seed is left alone.
  auto d = RunConfig::load(smoke_config_path());
  d.agent.seed = d.seed + 1;
  const auto kept = d.agent.seed;
  CliOverrides s;
  s.seed = 5;
  apply_overrides(d, s);
  CHECK(d.agent.seed == kept);

  CliOverrides none;
  auto e = RunConfig::load(smoke_config_path());
  const auto before = e.to_json();
  apply_overrides(e, none);
  CHECK(e.to_json() == before);

  CliOverrides bad;
  bad.llm_mode = "sometimes";
  CHECK_THROWS_AS(apply_overrides(e, bad), ConfigError);
}

TEST_CASE("error families map to distinct exit codes") {
  CHECK(exit_code_for(ConfigError("c")) == kExitConfig);
  CHECK(exit_code_for(DataError("d")) == kExitData);
  CHECK(exit_code_for(ModelError("m")) == kExitRuntime);
  CHECK(exit_code_for(std::runtime_error("r")) == kExitRuntime);
  const std::set<int> codes{kExitOk, kExitRuntime, kExitUsage, kExitConfig, kExitData};
  CHECK(codes.size() == 5);
}
