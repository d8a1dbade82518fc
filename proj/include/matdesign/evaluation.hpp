#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "matdesign/trainer.hpp"

namespace matdesign {

/// A percentage with its counts. Zero denominators give no value and the
/// "zero_denominator" flag in exports.
struct Rate {
  std::uint64_t numerator = 0;
  std::uint64_t denominator = 0;

  std::optional<double> percent() const;
  nlohmann::json to_json() const;
};

/// Columns of the per-property success rate, in report order.
inline constexpr std::array<std::string_view, 5> kSr80Columns{"Dmax", "Tg/Tl", "sigma_Y", "E", "epsilon"};

struct SuccessRates {
  Rate legal;  // legal steps / steps
  Rate cls;    // BMG-classified / legal steps
  std::array<Rate, 5> sr80;  // prediction at threshold / BMG-classified steps
  Rate done;   // epochs with a completed design / epochs
  std::uint64_t steps = 0;
  std::uint64_t epochs = 0;

  nlohmann::json to_json() const;
};

/// Throws DataError on an empty log. A step is BMG-classified when legal
/// with cls_prob > 0.5; Tg/Tl compares the ratio of the two predictions.
SuccessRates success_rates(const std::vector<StepRecord>& log, const ThresholdSet& thresholds);

struct BaselineRun {
  std::string method;
  std::vector<StepRecord> log;
  std::uint64_t calls = 0;  // prediction calls charged to the budget
  bool exhausted = false;
  std::optional<double> resolution;  // grid spacing, at.%

  nlohmann::json to_json() const;  // summary without the log
};

/// Episodes of uniform per-element actions on the allowed elements from
/// random starts, until the predictor's budget runs out.
BaselineRun random_baseline(const RunInputs& inputs, Predictor& predictor, std::uint64_t seed);

/// Integer lattice n_i in [ceil(lo_i / h), floor(hi_i / h)] over the base's
/// allowed elements with sum n_i = 100 / h. Throws ConfigError when 100 / h is
/// not an integer. Counts saturate at UINT64_MAX.
std::uint64_t lattice_count(const ExplorationBase& base, double h);
/// Points in lexicographic order of (n_0, n_1, ...), at most `limit`.
std::vector<Composition> lattice_points(const ExplorationBase& base, double h, std::size_t limit);
/// Finest ladder spacing whose total point count over the bases fits the budget.
double choose_resolution(const std::vector<ExplorationBase>& bases, std::uint64_t budget);

/// Lattice points of every base (equal budget shares) evaluated through the
/// reward pipeline in chunks of T_ep. Throws ConfigError when the lattice is
/// empty at the chosen spacing.
BaselineRun grid_baseline(const RunInputs& inputs, Predictor& predictor, std::optional<double> resolution);

struct PolicyEvaluation {
  std::vector<double> episode_means;  // mean per-step reward of each episode
  double mean = 0.0;
  double stddev = 0.0;
  std::uint64_t steps = 0;
  std::uint64_t legal = 0;

  nlohmann::json to_json() const;
};

/// Rolls `episodes` episodes of `policy` under the guidance bundle with fresh
/// visit counts and no knowledge reward. The starts depend only on `seed`,
/// so two policies evaluated with one seed face the same starts.
PolicyEvaluation evaluate_policy(const Policy& policy, std::shared_ptr<const GuidanceBundle> bundle,
                                 const RunInputs& inputs, int episodes, std::uint64_t seed);

/// Writes summary.json, summary.txt, summary.csv and the series exports of a
/// run directory into `out_dir`; returns the summary document.
nlohmann::json write_report(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir);

}  // namespace matdesign
