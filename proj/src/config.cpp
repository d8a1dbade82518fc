#include "matdesign/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "matdesign/common.hpp"

namespace matdesign {
namespace {

using nlohmann::json;

PercentileRule rule_from_name(const std::string& name) {
  for (auto r : {PercentileRule::Linear, PercentileRule::Lower, PercentileRule::Higher, PercentileRule::Nearest,
                 PercentileRule::Midpoint, PercentileRule::Hazen, PercentileRule::Weibull})
    if (percentile_rule_name(r) == name) return r;
  throw ConfigError("data.percentile_rule: unknown rule '" + name + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty()) return path;
  return base / path;
}

const json& section(const json& doc, const char* key) {
  static const json empty = json::object();
  if (!doc.contains(key)) return empty;
  if (!doc[key].is_object()) throw ConfigError(std::string("config section '") + key + "' must be an object");
  return doc[key];
}

void reject_unknown(const json& doc, std::initializer_list<const char*> known, const std::string& where) {
  std::set<std::string> names(known.begin(), known.end());
  for (const auto& [k, v] : doc.items())
    if (!names.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

// A threshold set good enough to let RewardConfig::validate check its own fields.
ThresholdSet placeholder_thresholds() {
  ThresholdSet t;
  t.tau[0] = 1.0;
  t.weight[0] = 1.0;
  return t;
}

}  // namespace

std::filesystem::path DataConfig::dataset_path() const {
  return dataset.empty() ? default_data_dir() / "mini_dataset.csv" : dataset;
}

std::filesystem::path DataConfig::elements_path() const {
  return elements.empty() ? default_data_dir() / "elements.csv" : elements;
}

json LlmConfig::mock_spec() const {
  if (!mock.is_null() && !mock.empty()) return mock;
  // Refine prompts ask for selected_features; everything else is a KBR prompt.
  const json refine = {{"selected_features", {"atomic_radius.wstd", "electronegativity.wstd"}},
                       {"reason", "offline responder"}};
  const json kbr = {{"reward", 0.5}, {"reason", "offline responder"}};
  return {{"policy", "keyword"},
          {"rules", json::array({{{"keyword", "selected_features"}, {"response", refine.dump()}}})},
          {"fallback", kbr.dump()}};
}

json environment_to_json(const EnvironmentConfig& c) {
  return {{"delta_max", c.delta_max}, {"episode_steps", c.episode_steps}};
}

EnvironmentConfig environment_from_json(const json& doc) {
  EnvironmentConfig c;
  c.delta_max = doc.value("delta_max", c.delta_max);
  c.episode_steps = doc.value("episode_steps", c.episode_steps);
  return c;
}

json replay_to_json(const ReplayConfig& c) {
  return {{"capacity", c.capacity}, {"alpha", c.alpha}, {"beta", c.beta}, {"priority_eps", c.priority_eps}};
}

ReplayConfig replay_from_json(const json& doc) {
  ReplayConfig c;
  c.capacity = doc.value("capacity", c.capacity);
  c.alpha = doc.value("alpha", c.alpha);
  c.beta = doc.value("beta", c.beta);
  c.priority_eps = doc.value("priority_eps", c.priority_eps);
  return c;
}

void RunConfig::validate() const {
  if (!(data.percentile > 0.0 && data.percentile < 1.0)) throw ConfigError("data.percentile must be in (0, 1)");
  if (data.bases < 1) throw ConfigError("data.bases must be >= 1");
  if (guidance.cv_folds < 2) throw ConfigError("guidance.cv_folds must be >= 2");
  reward_config(placeholder_thresholds()).validate();
  env.validate();
  tep.validate();
  agent.validate();
  replay.validate();
  amr.validate();
  if (llm.live) llm.endpoint.validate();
  if (llm.similar_count < 1) throw ConfigError("llm.similar_count must be >= 1");
  if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (train.t_max < env.episode_steps) throw ConfigError("train.t_max must be at least environment.episode_steps");
  if (train.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (train.batch > replay.capacity) throw ConfigError("train.batch must not exceed replay.capacity");
  if (train.effective_warmup() > replay.capacity) throw ConfigError("train.warmup must not exceed replay.capacity");
  if (train.updates_per_episode < 0) throw ConfigError("train.updates_per_episode must be >= 0");
  if (train.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (agent.action_bound != env.delta_max)
    throw ConfigError("agent.action_bound must equal environment.delta_max");
  if (eval.grid_resolution < 0.0) throw ConfigError("eval.grid_resolution must be >= 0");
  if (eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
}

json RunConfig::to_json() const {
  json amr_doc = amr.to_json();
  return {{"seed", seed},
          {"out_dir", out_dir.string()},
          {"data",
           {{"dataset", data.dataset.string()},
            {"elements", data.elements.string()},
            {"percentile", data.percentile},
            {"percentile_rule", std::string(percentile_rule_name(data.rule))},
            {"bases", data.bases}}},
          {"guidance", guidance.to_json()},
          {"reward", reward_config(placeholder_thresholds()).to_json()},
          {"environment", environment_to_json(env)},
          {"tep", tep.to_json()},
          {"agent", agent.to_json()},
          {"replay", replay_to_json(replay)},
          {"amr", amr_doc},
          {"llm",
           {{"mode", llm.live ? "live" : "offline"},
            {"endpoint", llm.endpoint.to_json()},
            {"mock", llm.mock_spec()},
            {"templates", llm.templates.string()},
            {"rule_file", llm.rule_file.string()},
            {"knowledge_file", llm.knowledge_file.string()},
            {"similar_count", llm.similar_count}}},
          {"train",
           {{"t_max", train.t_max},
            {"epochs", train.epochs},
            {"batch", train.batch},
            {"warmup", train.warmup},
            {"updates_per_episode", train.updates_per_episode},
            {"use_tep", train.use_tep},
            {"use_amr", train.use_amr},
            {"use_kbr", train.use_kbr},
            {"checkpoint_every", train.checkpoint_every}}},
          {"eval", {{"budget", eval.budget}, {"grid_resolution", eval.grid_resolution}, {"episodes", eval.episodes}}}};
}

RunConfig RunConfig::from_json(const json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config root must be an object");
  reject_unknown(doc,
                 {"seed", "out_dir", "data", "guidance", "reward", "environment", "tep", "agent", "replay", "amr",
                  "llm", "train", "eval"},
                 "config root");
  RunConfig c;
  try {
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("out_dir")) c.out_dir = doc["out_dir"].get<std::string>();  // relative to the working directory

    const auto& d = section(doc, "data");
    reject_unknown(d, {"dataset", "elements", "percentile", "percentile_rule", "bases"}, "data");
    c.data.dataset = resolve(base_dir, d.value("dataset", std::string()));
    c.data.elements = resolve(base_dir, d.value("elements", std::string()));
    c.data.percentile = d.value("percentile", c.data.percentile);
    if (d.contains("percentile_rule")) c.data.rule = rule_from_name(d["percentile_rule"].get<std::string>());
    c.data.bases = d.value("bases", c.data.bases);

    if (doc.contains("guidance")) c.guidance = GuidanceConfig::from_json(section(doc, "guidance"));
    c.reward = section(doc, "reward");
    c.env = environment_from_json(section(doc, "environment"));
    if (doc.contains("tep")) c.tep = TepConfig::from_json(section(doc, "tep"));
    const auto& a = section(doc, "agent");
    c.agent = Td3Config::from_json(a);
    if (!a.contains("seed")) c.agent.seed = c.seed;
    if (!a.contains("action_bound")) c.agent.action_bound = c.env.delta_max;
    c.replay = replay_from_json(section(doc, "replay"));
    if (doc.contains("amr")) c.amr = AmrConfig::from_json(section(doc, "amr"));

    const auto& l = section(doc, "llm");
    reject_unknown(l, {"mode", "endpoint", "mock", "templates", "rule_file", "knowledge_file", "similar_count"}, "llm");
    const auto mode = l.value("mode", std::string("offline"));
    if (mode != "offline" && mode != "live") throw ConfigError("llm.mode must be 'offline' or 'live'");
    c.llm.live = mode == "live";
    if (l.contains("endpoint")) c.llm.endpoint = LlmEndpointConfig::from_json(l["endpoint"]);
    if (l.contains("mock")) c.llm.mock = l["mock"];
    c.llm.templates = resolve(base_dir, l.value("templates", std::string()));
    c.llm.rule_file = resolve(base_dir, l.value("rule_file", std::string()));
    c.llm.knowledge_file = resolve(base_dir, l.value("knowledge_file", std::string()));
    c.llm.similar_count = l.value("similar_count", c.llm.similar_count);

    const auto& t = section(doc, "train");
    reject_unknown(t,
                   {"t_max", "epochs", "batch", "warmup", "updates_per_episode", "use_tep", "use_amr", "use_kbr",
                    "checkpoint_every"},
                   "train");
    c.train.t_max = t.value("t_max", c.train.t_max);
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch = t.value("batch", c.train.batch);
    c.train.warmup = t.value("warmup", c.train.warmup);
    c.train.updates_per_episode = t.value("updates_per_episode", c.train.updates_per_episode);
    c.train.use_tep = t.value("use_tep", c.train.use_tep);
    c.train.use_amr = t.value("use_amr", c.train.use_amr);
    c.train.use_kbr = t.value("use_kbr", c.train.use_kbr);
    c.train.checkpoint_every = t.value("checkpoint_every", c.train.checkpoint_every);

    const auto& e = section(doc, "eval");
    reject_unknown(e, {"budget", "grid_resolution", "episodes"}, "eval");
    c.eval.budget = e.value("budget", c.eval.budget);
    c.eval.grid_resolution = e.value("grid_resolution", c.eval.grid_resolution);
    c.eval.episodes = e.value("episodes", c.eval.episodes);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed config value: ") + ex.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& ex) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + ex.what());
  }
  return from_json(doc, path.parent_path());
}

RewardConfig RunConfig::reward_config(ThresholdSet thresholds) const {
  try {
    return RewardConfig::from_json(reward, std::move(thresholds));
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed reward config: ") + ex.what());
  }
}

std::uint64_t RunConfig::trajectory_hash() const {
  auto doc = to_json();
  doc.erase("out_dir");
  doc["train"].erase("epochs");
  doc["train"].erase("checkpoint_every");
  doc["eval"] = nullptr;
  return fnv1a(doc.dump());
}

std::filesystem::path smoke_config_path() { return default_data_dir() / "configs" / "smoke.json"; }

void apply_overrides(RunConfig& config, const CliOverrides& overrides) {
  if (overrides.seed) {
    if (config.agent.seed == config.seed) config.agent.seed = *overrides.seed;
    config.seed = *overrides.seed;
  }
  if (overrides.llm_mode) {
    if (*overrides.llm_mode != "offline" && *overrides.llm_mode != "live")
      throw ConfigError("--llm must be 'offline' or 'live'");
    config.llm.live = *overrides.llm_mode == "live";
  }
  if (overrides.out_dir) config.out_dir = *overrides.out_dir;
  if (overrides.no_tep) config.train.use_tep = false;
  if (overrides.no_amr) config.train.use_amr = false;
  if (overrides.no_kbr) config.train.use_kbr = false;
  config.validate();
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  return kExitRuntime;
}

}  // namespace matdesign
