#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "matdesign/agent.hpp"
#include "matdesign/amr.hpp"
#include "matdesign/config.hpp"
#include "matdesign/llm_client.hpp"
#include "matdesign/reward.hpp"
#include "matdesign/tep.hpp"

namespace matdesign {

// ------------------------------------------------------------------ logs

/// One line of a trajectory log. `t` is the global step count before the
/// step, which is the value the knowledge-reward gate sees.
struct StepRecord {
  std::int64_t epoch = 0;
  int k = 1;
  std::int64_t t = 0;
  std::string base;
  Composition s = Composition::Zero();
  Composition a = Composition::Zero();
  Composition s_next = Composition::Zero();
  double reward = 0.0;  // post-blend
  RewardBreakdown breakdown;
  std::optional<std::array<double, kPropertyCount>> props;  // prediction of s_next, legal steps only
  std::optional<double> value;                               // V_f(s) when an agent acted
  bool truncated = false;
  std::uint64_t bundle_version = 1;

  bool legal() const { return breakdown.legal; }
  bool done() const { return breakdown.done; }
  nlohmann::json to_json() const;
  static StepRecord from_json(const nlohmann::json& doc);
};

/// Throws DataError naming the line on malformed input.
std::vector<StepRecord> read_trajectory(const std::filesystem::path& path);
void append_trajectory(const std::filesystem::path& path, const std::vector<StepRecord>& records);
std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path);

struct EpisodeSummary {
  std::int64_t epoch = 0;
  std::string base;
  int steps = 0;
  std::int64_t t_end = 0;
  double total_reward = 0.0;
  double mean_reward = 0.0;
  int legal = 0;
  int bmg = 0;  // legal steps with cls_prob > 0.5
  bool done = false;
  bool truncated = false;
  std::vector<double> values;  // V_f series over the episode
  int updates = 0;
  std::optional<double> critic_loss, actor_loss;  // means over the episode's updates
  std::size_t tep_replaced = 0;
  std::optional<std::string> amr_trigger;
  bool amr_accepted = false;
  std::uint64_t bundle_version = 1;  // after the episode's refinement, if any

  nlohmann::json to_json() const;
  static EpisodeSummary from_json(const nlohmann::json& doc);
};

/// The parts of an episode summary that follow from the trajectory alone.
std::vector<EpisodeSummary> summaries_from_trajectory(const std::vector<StepRecord>& records);

// ------------------------------------------------------------------ inputs

/// Resolved, immutable inputs shared by training, baselines and design.
struct RunInputs {
  RunConfig config;
  std::shared_ptr<const ElementDescriptorTable> table;
  Dataset data;
  ThresholdSet thresholds;
  RewardConfig reward;
  std::vector<ExplorationBase> bases;
  std::vector<Composition> database;      // every known composition
  std::vector<Composition> pool_source;   // BMG compositions for the experience pool
  std::vector<const DatasetRow*> bmg_rows;  // references offered to the knowledge prompt
  PromptLibrary prompts;
  std::string rule;
  TargetThresholds tau_var{};

  RunInputs() = default;
  RunInputs(const RunInputs&) = delete;
  RunInputs& operator=(const RunInputs&) = delete;

  /// Loads data, thresholds, bases, prompts and knowledge text.
  static std::shared_ptr<const RunInputs> prepare(const RunConfig& config);
};

/// The LLM handle a config asks for (mock offline, HTTP live).
std::shared_ptr<LlmClient> make_llm(const LlmConfig& config);

/// Loads `path` when it holds a bundle trained with the same guidance config,
/// otherwise trains one and writes it there.
std::shared_ptr<const GuidanceBundle> load_or_train_guidance(const RunInputs& inputs, const std::filesystem::path& path);

PoolKey pool_key(const RunInputs& inputs, const GuidanceBundle& bundle);
/// Reuses a stored pool with a matching key, otherwise builds and stores it.
ExperiencePool load_or_build_pool(const RunInputs& inputs, std::shared_ptr<const GuidanceBundle> bundle,
                                  const std::filesystem::path& path);

/// Re-evaluates a logged step under `bundle`. The visit count and knowledge
/// reward are taken from the record, so a bundle identical to the one that
/// produced the record reproduces its reward exactly.
RewardBreakdown rescore_step(const StepRecord& record, const GuidanceBundle& bundle, const RunInputs& inputs);

// ------------------------------------------------------------------ trainer

struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path trajectory() const { return root / "trajectory.jsonl"; }
  std::filesystem::path episodes() const { return root / "episodes.jsonl"; }
  std::filesystem::path amr_events() const { return root / "amr_events.jsonl"; }
  std::filesystem::path checkpoint() const { return root / "checkpoint.bin"; }
  std::filesystem::path run_config() const { return root / "run.json"; }
  std::filesystem::path bundle(std::uint64_t version) const;
  std::filesystem::path pool(std::uint64_t version) const;
};

class Trainer {
 public:
  static constexpr std::uint32_t kCheckpointVersion = 1;

  /// Fresh run in config.out_dir; existing logs there are replaced.
  Trainer(std::shared_ptr<const RunInputs> inputs, std::shared_ptr<const GuidanceBundle> bundle,
          std::shared_ptr<LlmClient> llm);
  /// Continues from the checkpoint in `run_dir`; logs are cut back to the
  /// checkpointed lengths. The trajectory-shaping config must match.
  static Trainer resume(std::shared_ptr<const RunInputs> inputs, std::shared_ptr<LlmClient> llm,
                        const std::filesystem::path& run_dir);

  /// One episode, its refinement check and its updates.
  EpisodeSummary run_epoch();
  /// Epochs until the configured count or T_max. `max_epochs` caps this call.
  /// A failing component leaves the last checkpoint in place and rethrows.
  void run(std::optional<int> max_epochs = std::nullopt);
  bool finished() const;

  void checkpoint() const;
  /// Fingerprint of the learner, buffer, counters, RNG streams and logs.
  std::uint64_t state_hash() const;

  std::int64_t t() const { return t_; }
  std::int64_t epoch() const { return epoch_; }
  const Td3Agent& agent() const { return agent_; }
  const PrioritizedReplay& replay() const { return replay_; }
  std::shared_ptr<const GuidanceBundle> bundle() const { return predictor_->bundle(); }
  const ExperiencePool& pool() const { return pool_; }
  const RunPaths& paths() const { return paths_; }
  const RunInputs& inputs() const { return *inputs_; }

 private:
  Trainer(std::shared_ptr<const RunInputs> inputs, std::shared_ptr<LlmClient> llm, RunPaths paths,
          std::shared_ptr<const GuidanceBundle> bundle, Td3Agent agent);

  std::optional<RefinementEvent> maybe_refine(const std::vector<StepRecord>& episode, EpisodeSummary& summary);
  void install_bundle(std::shared_ptr<const GuidanceBundle> bundle);

  std::shared_ptr<const RunInputs> inputs_;
  std::shared_ptr<LlmClient> llm_;
  RunPaths paths_;
  std::unique_ptr<BundlePredictor> predictor_;
  Td3Agent agent_;
  PrioritizedReplay replay_;
  ExperiencePool pool_;
  VisitCounter visits_;
  KbrScorer kbr_;
  std::mt19937_64 rng_;
  std::int64_t t_ = 0;
  std::int64_t epoch_ = 0;
};

/// The learner and guidance stored in a run's checkpoint, for rollouts.
struct TrainedPolicy {
  Td3Agent agent;
  std::shared_ptr<const GuidanceBundle> bundle;
  std::int64_t epoch = 0;
  std::int64_t t = 0;
};

/// Reads the checkpoint without touching the run's logs. The trajectory hash
/// is not checked, so a policy can be rolled out under another config.
TrainedPolicy load_trained(const RunInputs& inputs, const std::filesystem::path& run_dir);

// ------------------------------------------------------------------ design

using Policy = std::function<Eigen::VectorXd(const Composition& state)>;

struct DesignCandidate {
  Composition composition = Composition::Zero();
  Prediction prediction;
  double score = 0.0;  // weighted mean of prediction / threshold ratios
  std::string base;
  int episode = 0;
  int k = 0;

  nlohmann::json to_json() const;
};

struct DesignReport {
  std::vector<DesignCandidate> candidates;  // ranked, deduplicated
  int episodes = 0;
  int steps = 0;
  int hits = 0;  // qualifying steps before deduplication

  nlohmann::json to_json() const;
};

/// Score used for ranking; higher is better.
double design_score(const Prediction& p, const RewardConfig& reward);

/// Rolls `episodes` noise-free episodes of `policy` from random starts on the
/// given bases and keeps legal, BMG-classified states meeting every threshold.
/// Candidates within the match tolerance of a better one are dropped.
DesignReport design(const Policy& policy, Predictor& predictor, const std::vector<ExplorationBase>& bases,
                    const RewardConfig& reward, const EnvironmentConfig& env, int episodes, std::uint64_t seed);

Policy greedy_policy(const Td3Agent& agent);
/// Uniform per-element actions in [-delta_max, delta_max].
Policy random_policy(double delta_max, std::uint64_t seed);

}  // namespace matdesign
