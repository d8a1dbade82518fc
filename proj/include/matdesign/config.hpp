#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "matdesign/agent.hpp"
#include "matdesign/amr.hpp"
#include "matdesign/dataset.hpp"
#include "matdesign/environment.hpp"
#include "matdesign/guidance.hpp"
#include "matdesign/llm_client.hpp"
#include "matdesign/reward.hpp"
#include "matdesign/tep.hpp"

namespace matdesign {

struct DataConfig {
  std::filesystem::path dataset;   // empty: bundled mini dataset
  std::filesystem::path elements;  // empty: bundled descriptor table
  double percentile = 0.8;
  PercentileRule rule = PercentileRule::Linear;
  int bases = 35;

  std::filesystem::path dataset_path() const;
  std::filesystem::path elements_path() const;
};

struct LlmConfig {
  bool live = false;
  LlmEndpointConfig endpoint;
  /// MockLlm spec used offline; empty picks a keyword responder that answers
  /// both prompt families.
  nlohmann::json mock;
  std::filesystem::path templates;  // directory; empty: bundled templates
  std::filesystem::path rule_file;
  std::filesystem::path knowledge_file;
  std::size_t similar_count = 3;

  nlohmann::json mock_spec() const;
};

struct TrainConfig {
  std::int64_t t_max = 100000;
  int epochs = 1000;
  std::size_t batch = 512;
  /// Replay size required before updates start; 0 means `batch`.
  std::size_t warmup = 0;
  /// Gradient updates after each episode; 0 means one per step taken.
  int updates_per_episode = 0;
  bool use_tep = true;
  bool use_amr = true;
  bool use_kbr = true;
  int checkpoint_every = 10;  // epochs; the final epoch always checkpoints

  std::size_t effective_warmup() const { return warmup == 0 ? batch : warmup; }
};

struct EvalConfig {
  std::uint64_t budget = 128 * 1000;
  /// Lattice spacing in at.%; 0 picks the finest ladder value that fits the budget.
  double grid_resolution = 0.0;
  int episodes = 20;  // evaluation and design rollouts
};

/// Everything a run needs. Relative paths resolve against the config file.
struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "run";
  DataConfig data;
  GuidanceConfig guidance;
  nlohmann::json reward = nlohmann::json::object();  // RewardConfig minus thresholds
  EnvironmentConfig env;
  TepConfig tep;
  Td3Config agent;
  ReplayConfig replay;
  AmrConfig amr;
  LlmConfig llm;
  TrainConfig train;
  EvalConfig eval;

  /// Checks every section and the cross-section invariants.
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown top-level keys are rejected; sections fall back to defaults.
  static RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);

  RewardConfig reward_config(ThresholdSet thresholds) const;
  /// Hash of the settings that shape a training trajectory; the epoch count,
  /// output directory and checkpoint cadence are left out so a run can be
  /// resumed and extended.
  std::uint64_t trajectory_hash() const;
};

nlohmann::json environment_to_json(const EnvironmentConfig& c);
EnvironmentConfig environment_from_json(const nlohmann::json& doc);
nlohmann::json replay_to_json(const ReplayConfig& c);
ReplayConfig replay_from_json(const nlohmann::json& doc);

/// The bundled smoke configuration (20 epochs x 32 steps, mock LLM).
std::filesystem::path smoke_config_path();

/// Command-line settings layered over a loaded config.
struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> llm_mode;  // "offline" or "live"
  std::optional<std::filesystem::path> out_dir;
  bool no_tep = false;
  bool no_amr = false;
  bool no_kbr = false;
};

/// Applies the overrides and revalidates. A new seed also reseeds the agent
/// when the agent was following the run seed.
void apply_overrides(RunConfig& config, const CliOverrides& overrides);

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitUsage = 2, kExitConfig = 3, kExitData = 4 };

/// Config problems, data problems and everything else map to distinct codes.
int exit_code_for(const std::exception& e);

}  // namespace matdesign
