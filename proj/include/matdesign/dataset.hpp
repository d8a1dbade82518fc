#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "matdesign/elements.hpp"

namespace matdesign {

enum class Property : int { Dmax = 0, Tg, Tl, Tx, SigmaY, E, Elongation };
inline constexpr int kPropertyCount = 7;

/// Column names used in dataset files and every structured export.
inline constexpr std::array<std::string_view, kPropertyCount> kPropertyNames = {
    "Dmax", "Tg", "Tl", "Tx", "sigma_Y", "E", "epsilon"};
inline constexpr std::array<std::string_view, kPropertyCount> kPropertyUnits = {
    "mm", "K", "K", "K", "MPa", "GPa", "percent"};

inline constexpr int index_of(Property p) { return static_cast<int>(p); }
std::optional<Property> property_from_name(std::string_view name);

/// Measured (possibly partial) or predicted property values in the units above.
using PropertyVector = std::array<std::optional<double>, kPropertyCount>;

enum class ClassLabel { RMG, CRA, BMG };
std::string_view label_name(ClassLabel label);
std::optional<ClassLabel> label_from_name(std::string_view name);

struct DatasetRow {
  Composition composition = Composition::Zero();
  PropertyVector properties{};
  std::optional<ClassLabel> label;
  std::size_t line = 0;  // 1-based line in the source file

  bool has_any_property() const;
};

struct RowDiagnostic {
  std::size_t line = 0;
  std::string message;
};

struct Dataset {
  std::vector<DatasetRow> regression;      // rows with at least one property
  std::vector<DatasetRow> classification;  // rows with a label
  std::vector<RowDiagnostic> rejected;
  std::size_t parsed_rows = 0;
  std::map<std::string, std::size_t> class_counts;
  std::map<std::string, std::size_t> property_counts;

  /// Unique compositions across both views, in first-seen order.
  std::vector<Composition> all_compositions() const;
  /// Compositions labelled BMG (deduplicated).
  std::vector<Composition> bmg_compositions() const;
};

/// Parses a delimited dataset: one column per canonical element symbol (any
/// order), one per property name, and `label`. Rows summing outside
/// 100 +- 0.5 or with fewer than 3 / more than 9 elements are rejected;
/// accepted rows are renormalized to exactly 100.
Dataset load_dataset(const std::filesystem::path& path, char delimiter = ',');
Dataset parse_dataset(std::string_view text, char delimiter = ',');

enum class PercentileRule {
  Linear,    // h = (n-1)p, interpolate between floor(h) and ceil(h)
  Lower,     // v[floor(h)]
  Higher,    // v[ceil(h)]
  Nearest,   // v[round-half-even(h)]
  Midpoint,  // (lower + higher) / 2
  Hazen,     // h = n*p - 0.5, interpolated and clamped
  Weibull,   // h = (n+1)p - 1, interpolated and clamped
};
std::string_view percentile_rule_name(PercentileRule rule);

/// Empirical percentile of `values` (unsorted ok), p in [0,1].
double percentile(std::vector<double> values, double p, PercentileRule rule = PercentileRule::Linear);

struct ThresholdSet {
  static constexpr int kSchemaVersion = 1;

  double percentile = 0.8;
  PercentileRule rule = PercentileRule::Linear;
  std::array<std::optional<double>, kPropertyCount> tau{};
  std::optional<double> tg_tl_ratio;
  std::array<double, kPropertyCount> weight{};
  std::vector<std::string> flagged;  // properties excluded for lack of data

  /// Checks tau > 0, weights >= 0 and summing to 1 within 1e-9.
  void validate() const;
  std::vector<Property> active_properties() const;

  nlohmann::json to_json() const;
  static ThresholdSet from_json(const nlohmann::json& doc);
};

inline constexpr std::size_t kMinThresholdSamples = 10;

ThresholdSet compute_thresholds(const std::vector<DatasetRow>& regression_rows, double percentile,
                                PercentileRule rule = PercentileRule::Linear);

struct SmoteResult {
  std::vector<DatasetRow> synthetic;
  bool degenerate = false;
};

/// Synthetic minority rows so that minority / majority reaches `ratio`;
/// synthetic count = round(ratio * majority) - minority (never negative).
SmoteResult smote_oversample(const std::vector<DatasetRow>& rows, ClassLabel target, int k, double ratio,
                             std::mt19937_64& rng);

std::size_t smote_synthetic_count(std::size_t minority, std::size_t majority, double ratio);

}  // namespace matdesign
