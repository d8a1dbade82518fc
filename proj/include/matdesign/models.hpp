#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "matdesign/archive.hpp"
#include "matdesign/edrvfl.hpp"

namespace matdesign {

/// P(BMG | x) for each row of x.
class BinaryClassifier {
 public:
  virtual ~BinaryClassifier() = default;
  virtual Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const = 0;
  virtual std::string kind() const = 0;
  virtual void write(ArchiveWriter& out) const = 0;
};

/// Multi-target regression, one output column per target.
class MultiTargetRegressor {
 public:
  virtual ~MultiTargetRegressor() = default;
  virtual Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const = 0;
  virtual std::string kind() const = 0;
  virtual void write(ArchiveWriter& out) const = 0;
};

struct ForestConfig {
  int trees = 100;
  int max_depth = 24;
  int min_samples_leaf = 1;
  int features_per_split = 0;  // 0 -> round(sqrt(d))
  std::uint64_t seed = 11;
};

/// Bagged CART ensemble with Gini splits. The probability is the fraction of
/// trees whose leaf votes for the positive class.
class RandomForestClassifier final : public BinaryClassifier {
 public:
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    double positive_fraction = 0.0;
  };
  using Tree = std::vector<Node>;

  /// `labels` holds 1 for the positive class, 0 otherwise.
  static RandomForestClassifier fit(const Eigen::MatrixXd& x, const Eigen::VectorXi& labels, const ForestConfig& config);

  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const override;
  std::string kind() const override { return "random_forest"; }
  void write(ArchiveWriter& out) const override;
  static RandomForestClassifier read(ArchiveReader& in);

  const ForestConfig& config() const { return config_; }
  std::size_t tree_count() const { return trees_.size(); }

 private:
  ForestConfig config_;
  Eigen::Index input_dim_ = 0;
  std::vector<Tree> trees_;
};

class EdRvflRegressor final : public MultiTargetRegressor {
 public:
  explicit EdRvflRegressor(EdRvfl<double> net) : net_(std::move(net)) {}

  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const override { return net_.predict(x); }
  std::string kind() const override { return "edrvfl"; }
  void write(ArchiveWriter& out) const override { net_.write(out); }
  const EdRvfl<double>& network() const { return net_; }

 private:
  EdRvfl<double> net_;
};

/// Reads a model previously written with its kind tag in front.
std::shared_ptr<const BinaryClassifier> read_classifier(ArchiveReader& in);
std::shared_ptr<const MultiTargetRegressor> read_regressor(ArchiveReader& in);
void write_tagged(ArchiveWriter& out, const BinaryClassifier& model);
void write_tagged(ArchiveWriter& out, const MultiTargetRegressor& model);

}  // namespace matdesign
