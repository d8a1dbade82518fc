#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "matdesign/archive.hpp"
#include "matdesign/dataset.hpp"
#include "matdesign/environment.hpp"
#include "matdesign/guidance.hpp"

namespace matdesign {

struct RewardConfig {
  ThresholdSet thresholds;
  double alpha = 0.5;           // UCB scale
  double beta = 0.2;            // knowledge-reward blend weight
  double cls_gate = 0.8;        // class probability needed for the knowledge reward
  double kbr_phase_gate = 0.8;  // fraction of T_max after which it may apply
  double match_tolerance = 0.5;  // at.% max-norm for "already in the database"
  double grid = 0.5;             // at.% grid for visit counting
  bool require_tg_tl_ratio = true;  // the Tg/Tl threshold counts towards completion
  std::array<bool, kPropertyCount> higher_is_better{true, true, true, true, true, true, true};

  void validate() const;
  nlohmann::json to_json() const;
  static RewardConfig from_json(const nlohmann::json& doc, ThresholdSet thresholds);
};

/// Per-step decomposition of the reward. Absent terms were not evaluated.
struct RewardBreakdown {
  bool legal = true;
  std::optional<double> r_illegal, r_cls, r_i, r_t, r_done, r_llm;
  std::optional<double> cls_prob;
  bool regression_branch = false;  // cls_prob > 0.5
  bool thresholds_met = false;
  bool kbr_gate = false;    // gate condition held
  bool kbr_applied = false;  // blend actually performed
  bool novelty = false;
  bool done = false;  // completed design: new material found
  std::optional<std::uint64_t> visits;
  double pre_blend = 0.0;
  double total = 0.0;
  std::vector<std::string> flags;

  nlohmann::json to_json() const;
  static RewardBreakdown from_json(const nlohmann::json& doc);
};

/// Counts visits to compositions rounded onto a grid. Thread-safe.
class VisitCounter {
 public:
  explicit VisitCounter(double grid = 0.5) : grid_(grid) {}
  VisitCounter(const VisitCounter& other);
  VisitCounter& operator=(const VisitCounter& other);

  std::uint64_t increment(const Composition& c);
  std::uint64_t count(const Composition& c) const;
  std::size_t distinct() const;
  double grid() const { return grid_; }

  void write(ArchiveWriter& out) const;
  static VisitCounter read(ArchiveReader& in);
  std::uint64_t fingerprint() const;

 private:
  using Key = std::vector<std::int64_t>;
  Key key_of(const Composition& c) const;

  double grid_;
  mutable std::mutex mutex_;
  std::map<Key, std::uint64_t> counts_;
};

/// log(k) / (2 log T_ep) - 1, natural log; k is 1-based.
double illegal_reward(int k, int t_ep);
double classification_reward(double p);

struct RegressionTerms {
  double r_i = 0.0;
  double r_t = 0.0;
  bool floored = false;  // a denominator hit the 1e-9 floor
};

RegressionTerms regression_reward(const std::array<double, kPropertyCount>& before,
                                  const std::array<double, kPropertyCount>& after, const RewardConfig& config);

/// Every weighted property at or past its threshold (plus Tg/Tl when required).
bool thresholds_met(const std::array<double, kPropertyCount>& props, const RewardConfig& config);

/// True when some database composition lies within `tolerance` (max-norm).
bool in_database(const Composition& c, const std::vector<Composition>& database, double tolerance);

struct DoneTerms {
  double r_done = 0.0;
  bool novelty = false;
  std::uint64_t visits = 0;
};

/// 1 for a composition absent from the database, otherwise the UCB decay
/// alpha * sqrt(2 ln T_ep / n) with n the incremented visit count.
DoneTerms done_reward(const Composition& next, const std::vector<Composition>& database, VisitCounter& visits,
                      int t_ep, const RewardConfig& config);

struct BlendResult {
  double value = 0.0;
  bool clamped = false;
};

/// (1 - beta) r + beta r_llm with r_llm clamped to [-1, 1].
BlendResult blend_kbr(double r_base, double r_llm, double beta);
bool kbr_gate(std::int64_t t, std::int64_t t_max, double cls_prob, const RewardConfig& config);

/// Source of guidance predictions. Implementations count queries so that
/// the RL run and the baselines share one budget path.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual Prediction predict(const Composition& c) = 0;
  virtual std::uint64_t calls() const = 0;
  virtual std::uint64_t bundle_version() const = 0;
};

class BudgetExhausted : public Error {
 public:
  BudgetExhausted() : Error("prediction budget exhausted") {}
};

/// Predictor backed by a guidance bundle; optional hard budget.
class BundlePredictor final : public Predictor {
 public:
  explicit BundlePredictor(std::shared_ptr<const GuidanceBundle> bundle,
                           std::optional<std::uint64_t> budget = std::nullopt);

  Prediction predict(const Composition& c) override;
  std::uint64_t calls() const override { return calls_.load(); }
  std::uint64_t bundle_version() const override;
  std::optional<std::uint64_t> remaining() const;

  /// Atomically replaces the bundle (model refinement).
  void swap_bundle(std::shared_ptr<const GuidanceBundle> bundle);
  std::shared_ptr<const GuidanceBundle> bundle() const;

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const GuidanceBundle> bundle_;
  std::optional<std::uint64_t> budget_;
  std::atomic<std::uint64_t> calls_{0};
};

/// Knowledge-based reward in [-1, 1] for a candidate state, or nullopt when
/// the scorer is unavailable.
using KbrScorer = std::function<std::optional<double>(const Composition& next, const Prediction& pred)>;

struct StepEvaluation {
  RewardBreakdown breakdown;
  std::optional<Prediction> next_prediction;  // legal steps only
};

/// Composes the full reward for one transition. `before` is the cached
/// prediction of the current state; the next state is queried once.
StepEvaluation evaluate_reward(const Prediction& before, const StepResult& transition, const EpisodeContext& ctx,
                               Predictor& predictor, const std::vector<Composition>& database, VisitCounter& visits,
                               const RewardConfig& config, const KbrScorer* kbr);

/// Same composition rules over already computed predictions (no queries).
RewardBreakdown compose_reward(const Prediction& before, bool legal, const Composition& next,
                               const std::optional<Prediction>& after, const EpisodeContext& ctx,
                               const std::vector<Composition>& database, VisitCounter& visits,
                               const RewardConfig& config, const KbrScorer* kbr);

}  // namespace matdesign
