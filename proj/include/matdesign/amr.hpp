#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "matdesign/guidance.hpp"
#include "matdesign/llm_client.hpp"

namespace matdesign {

enum class Phase { VarianceWindow, CorrelationWindow, KbrWindow };

std::string_view phase_name(Phase phase);
/// Left-closed windows [0, 0.2), [0.2, 0.8), [0.8, 1] of T_max.
Phase phase_of(std::int64_t t, std::int64_t t_max);

struct AmrConfig {
  double rho_min = 0.6;
  double tau_var_fraction = 0.1;  // tau_var = (fraction * target std)^2
  std::size_t min_window = 8;
  int max_iterations = 3;
  std::size_t vocabulary_cap = 60;
  /// Targets whose prediction variance is watched; empty means all.
  std::vector<Property> monitored;
  std::string knowledge;  // reference text for the refine prompts

  void validate() const;
  nlohmann::json to_json() const;
  static AmrConfig from_json(const nlohmann::json& doc);
  bool monitors(Property p) const;
};

using TargetThresholds = std::array<std::optional<double>, kPropertyCount>;

/// (fraction * population std)^2 per target over the measured values;
/// targets with fewer than two values get none.
TargetThresholds variance_thresholds(const std::vector<DatasetRow>& rows, double fraction);

struct VarianceCheck {
  bool eligible = false;  // phase and window size allow the check
  bool fired = false;
  TargetThresholds variance{};
  std::optional<Property> worst;  // largest variance / tau among fired targets
};

/// `predictions` is window x 7.
VarianceCheck check_variance_trigger(const Eigen::MatrixXd& predictions, const TargetThresholds& tau,
                                     const AmrConfig& config, std::int64_t t, std::int64_t t_max);
VarianceCheck check_variance_trigger(const std::vector<Composition>& window, const GuidanceBundle& bundle,
                                     const TargetThresholds& tau, const AmrConfig& config, std::int64_t t,
                                     std::int64_t t_max);

struct CorrelationCheck {
  bool eligible = false;
  bool fired = false;
  std::optional<double> pearson;
  bool undefined = false;  // a series had zero variance
};

/// Throws DataError when the series lengths differ.
CorrelationCheck check_correlation_trigger(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                                           const AmrConfig& config, std::int64_t t, std::int64_t t_max);

enum class TriggerKind { Variance, Correlation };
std::string_view trigger_name(TriggerKind kind);

struct RefineRequest {
  TriggerKind kind = TriggerKind::Variance;
  std::vector<Composition> window;
  std::optional<Property> target;  // variance path
  std::optional<double> observed;  // variance or Pearson r that fired
  double tau_var = 0.0;            // variance path
  std::int64_t t = 0;
  std::int64_t episode = 0;
};

struct RefineIteration {
  int index = 0;
  std::string prompt_hash;
  std::string response;
  std::vector<std::string> selected;
  std::string diagnostic;  // why the iteration produced no candidate, if it did not
  std::optional<double> cv_r2;
  std::optional<double> recheck;  // window variance or Pearson r under the candidate
  bool accepted = false;

  nlohmann::json to_json() const;
};

struct RefinementEvent {
  TriggerKind kind = TriggerKind::Variance;
  std::int64_t t = 0;
  std::int64_t episode = 0;
  std::size_t window_size = 0;
  std::vector<std::string> window;  // formulas
  std::optional<std::string> target;
  std::optional<double> observed;
  double threshold = 0.0;  // tau_var or rho_min
  std::optional<double> baseline_r2;
  std::uint64_t version_before = 0;
  std::uint64_t version_after = 0;
  bool accepted = false;
  std::vector<RefineIteration> iterations;

  nlohmann::json to_json() const;
};

/// Pluggable parts of the loop. `retrain` builds a candidate bundle with the
/// given regressor features and recorded CV R²; `recheck` evaluates the
/// trigger statistic under a candidate.
struct RefineHooks {
  std::function<std::shared_ptr<const GuidanceBundle>(const std::vector<CandidateFeature>&)> retrain;
  std::function<std::optional<double>(const GuidanceBundle&)> recheck;
};

/// Retrains the regressor on `rows` and records per-target CV R² with the
/// configured fold count; the version is current + 1.
std::function<std::shared_ptr<const GuidanceBundle>(const std::vector<CandidateFeature>&)> regressor_retrainer(
    const std::vector<DatasetRow>& rows, const GuidanceBundle& current, const GuidanceConfig& config);

/// Population variance of `target` predictions over the window.
std::function<std::optional<double>(const GuidanceBundle&)> window_variance_recheck(std::vector<Composition> window,
                                                                                    Property target);

/// CV R² the gate compares: the target's score on the variance path, the
/// mean over targets on the correlation path.
std::optional<double> gate_score(const GuidanceBundle& bundle, const RefineRequest& request);

struct RefineOutcome {
  RefinementEvent event;
  std::shared_ptr<const GuidanceBundle> bundle;  // the accepted candidate, or the current bundle
};

/// Up to max_iterations rounds of prompt, parse, retrain and gate.
RefineOutcome refine(const RefineRequest& request, std::shared_ptr<const GuidanceBundle> current,
                     const RefineHooks& hooks, const PromptLibrary& library, LlmClient& client,
                     const AmrConfig& config);

/// The prompt text for one iteration (exposed for tests and audits).
std::string refine_prompt(const RefineRequest& request, const GuidanceBundle& current, const PromptLibrary& library,
                          const AmrConfig& config);
/// Vocabulary offered to the model: unused candidates in table order, capped.
std::vector<std::string> offered_features(const GuidanceBundle& current, const AmrConfig& config);

}  // namespace matdesign
