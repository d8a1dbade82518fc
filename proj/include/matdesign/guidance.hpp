#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "matdesign/dataset.hpp"
#include "matdesign/features.hpp"
#include "matdesign/models.hpp"

namespace matdesign {

struct GuidanceConfig {
  ForestConfig forest;
  EdRvflConfig regressor;
  bool smote = true;
  int smote_k = 5;
  double smote_ratio = 1.0;
  int cv_folds = 10;
  std::uint64_t seed = 2024;

  nlohmann::json to_json() const;
  static GuidanceConfig from_json(const nlohmann::json& doc);
  std::uint64_t hash() const;
};

/// Fold id in [0, k) for each of n rows. With `strata`, every stratum is
/// spread round-robin over the folds so per-fold class counts differ by at
/// most one row from the proportional share.
std::vector<int> make_folds(std::size_t n, int k, std::uint64_t seed, const std::vector<int>* strata = nullptr);

struct ClassificationMetrics {
  std::optional<double> auc, precision, recall, f1;
};

struct RegressionMetrics {
  std::optional<double> rmse, r2, mape;
  std::size_t rows = 0;
};

/// Fold-averaged metrics (folds where a metric is undefined are skipped; a
/// metric undefined on every fold stays empty) plus out-of-fold predictions.
struct MetricReport {
  int folds = 0;
  std::vector<int> fold_of;
  std::optional<ClassificationMetrics> classification;
  Eigen::VectorXd oof_scores;  // classification rows, BMG probability
  Eigen::VectorXi labels;      // 1 = BMG
  std::array<std::optional<RegressionMetrics>, kPropertyCount> regression{};
  Eigen::MatrixXd oof_predictions;  // regression rows x 7
  Eigen::MatrixXd targets;          // NaN where missing

  nlohmann::json to_json() const;
};

Eigen::VectorXi bmg_labels(const std::vector<DatasetRow>& rows);
/// Rows x 7 in dataset units, NaN for missing values.
Eigen::MatrixXd target_matrix(const std::vector<DatasetRow>& rows);

std::shared_ptr<const BinaryClassifier> train_classifier(const std::vector<DatasetRow>& rows,
                                                         const GuidanceConfig& config);
std::shared_ptr<const MultiTargetRegressor> train_regressor(const std::vector<DatasetRow>& rows,
                                                            const std::vector<CandidateFeature>& features,
                                                            const ElementDescriptorTable& table,
                                                            const GuidanceConfig& config);

MetricReport cross_validate_classifier(const std::vector<DatasetRow>& rows, const GuidanceConfig& config, int k);
MetricReport cross_validate_regressor(const std::vector<DatasetRow>& rows, const std::vector<CandidateFeature>& features,
                                      const ElementDescriptorTable& table, const GuidanceConfig& config, int k);

/// Guidance query result: BMG probability and the seven property predictions.
struct Prediction {
  double cls_prob = 0.0;
  std::array<double, kPropertyCount> props{};
};

/// Classifier + regressor + the regressor's appended feature list. Immutable
/// once built; refinement produces a new bundle with a higher version.
struct GuidanceBundle {
  static constexpr std::uint32_t kArchiveVersion = 1;

  std::shared_ptr<const BinaryClassifier> classifier;
  std::shared_ptr<const MultiTargetRegressor> regressor;
  std::vector<CandidateFeature> features;
  std::shared_ptr<const ElementDescriptorTable> table;
  std::uint64_t version = 1;
  std::array<std::optional<double>, kPropertyCount> cv_r2{};
  std::uint64_t config_hash = 0;

  double predict_class_prob(const Composition& c) const;
  std::array<double, kPropertyCount> predict_properties(const Composition& c) const;
  Prediction predict(const Composition& c) const;
  /// Rows x 7 property predictions.
  Eigen::MatrixXd predict_properties(const std::vector<Composition>& rows) const;

  /// Mean of the defined per-target CV R² values.
  std::optional<double> mean_cv_r2() const;

  void save(const std::filesystem::path& path) const;
  static GuidanceBundle load(const std::filesystem::path& path, std::shared_ptr<const ElementDescriptorTable> table);
};

/// Trains both models on the dataset and records 10-fold (config) CV R² per target.
GuidanceBundle train_guidance(const Dataset& data, std::shared_ptr<const ElementDescriptorTable> table,
                              const GuidanceConfig& config, const std::vector<CandidateFeature>& features = {});

}  // namespace matdesign
