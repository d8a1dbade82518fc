#include "matdesign/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "matdesign/common.hpp"

namespace matdesign {
namespace {

struct TreeBuilder {
  const Eigen::MatrixXd& x;
  const Eigen::VectorXi& y;
  const ForestConfig& config;
  int mtry;
  std::mt19937_64& rng;
  RandomForestClassifier::Tree nodes;

  std::int32_t grow(std::vector<Eigen::Index>& idx, int depth) {
    const auto n = static_cast<double>(idx.size());
    double pos = 0.0;
    for (auto i : idx) pos += y[i];
    const auto self = static_cast<std::int32_t>(nodes.size());
    nodes.push_back({});
    nodes[self].positive_fraction = pos / n;
    if (pos == 0.0 || pos == n || depth >= config.max_depth ||
        static_cast<int>(idx.size()) < 2 * config.min_samples_leaf)
      return self;

    std::vector<int> features(static_cast<std::size_t>(x.cols()));
    std::iota(features.begin(), features.end(), 0);
    // Partial Fisher-Yates: the first mtry entries are a uniform subset.
    for (int j = 0; j < mtry; ++j) {
      std::uniform_int_distribution<int> pick(j, static_cast<int>(features.size()) - 1);
      std::swap(features[static_cast<std::size_t>(j)], features[static_cast<std::size_t>(pick(rng))]);
    }

    const double parent_gini = 1.0 - (pos / n) * (pos / n) - ((n - pos) / n) * ((n - pos) / n);
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::pair<double, int>> column(idx.size());
    for (int j = 0; j < mtry; ++j) {
      const int f = features[static_cast<std::size_t>(j)];
      for (std::size_t q = 0; q < idx.size(); ++q) column[q] = {x(idx[q], f), y[idx[q]]};
      std::sort(column.begin(), column.end());
      double left_pos = 0.0;
      for (std::size_t q = 0; q + 1 < column.size(); ++q) {
        left_pos += column[q].second;
        if (column[q].first == column[q + 1].first) continue;
        const auto nl = static_cast<double>(q + 1);
        const double nr = n - nl;
        if (nl < config.min_samples_leaf || nr < config.min_samples_leaf) continue;
        const double pl = left_pos / nl;
        const double pr = (pos - left_pos) / nr;
        const double gini = (nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr)) / n;
        const double gain = parent_gini - gini;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_threshold = 0.5 * (column[q].first + column[q + 1].first);
        }
      }
    }
    if (best_feature < 0) return self;

    std::vector<Eigen::Index> left, right;
    for (auto i : idx) (x(i, best_feature) <= best_threshold ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();
    const auto l = grow(left, depth + 1);
    const auto r = grow(right, depth + 1);
    nodes[self].feature = best_feature;
    nodes[self].threshold = best_threshold;
    nodes[self].left = l;
    nodes[self].right = r;
    return self;
  }
};

}  // namespace

RandomForestClassifier RandomForestClassifier::fit(const Eigen::MatrixXd& x, const Eigen::VectorXi& labels,
                                                   const ForestConfig& config) {
  if (x.rows() != labels.size() || x.rows() == 0) throw DataError("classifier inputs must be non-empty and aligned");
  if (config.trees < 1) throw ConfigError("forest needs at least one tree");
  const auto positives = (labels.array() != 0).count();
  if (positives == 0 || positives == labels.size()) throw DataError("classifier training data contains a single class");

  RandomForestClassifier model;
  model.config_ = config;
  model.input_dim_ = x.cols();
  int mtry = config.features_per_split > 0 ? config.features_per_split
                                           : static_cast<int>(std::lround(std::sqrt(static_cast<double>(x.cols()))));
  mtry = std::clamp(mtry, 1, static_cast<int>(x.cols()));
  const Eigen::VectorXi y = (labels.array() != 0).cast<int>();

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<Eigen::Index> draw(0, x.rows() - 1);
  for (int t = 0; t < config.trees; ++t) {
    std::vector<Eigen::Index> sample(static_cast<std::size_t>(x.rows()));
    for (auto& i : sample) i = draw(rng);
    TreeBuilder builder{x, y, config, mtry, rng, {}};
    builder.grow(sample, 0);
    model.trees_.push_back(std::move(builder.nodes));
  }
  return model;
}

Eigen::VectorXd RandomForestClassifier::predict_proba(const Eigen::MatrixXd& x) const {
  if (x.cols() != input_dim_) throw DataError("classifier input width mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int votes = 0;
    for (const auto& tree : trees_) {
      std::int32_t node = 0;
      while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const auto& nd = tree[static_cast<std::size_t>(node)];
        node = x(i, nd.feature) <= nd.threshold ? nd.left : nd.right;
      }
      if (tree[static_cast<std::size_t>(node)].positive_fraction > 0.5) ++votes;
    }
    out[i] = static_cast<double>(votes) / static_cast<double>(trees_.size());
  }
  return out;
}

void RandomForestClassifier::write(ArchiveWriter& out) const {
  out.put<std::int32_t>(config_.trees);
  out.put<std::int32_t>(config_.max_depth);
  out.put<std::int32_t>(config_.min_samples_leaf);
  out.put<std::int32_t>(config_.features_per_split);
  out.put<std::uint64_t>(config_.seed);
  out.put<std::int64_t>(input_dim_);
  out.put<std::uint64_t>(trees_.size());
  for (const auto& tree : trees_) {
    out.put<std::uint64_t>(tree.size());
    for (const auto& n : tree) {
      out.put(n.feature);
      out.put(n.threshold);
      out.put(n.left);
      out.put(n.right);
      out.put(n.positive_fraction);
    }
  }
}

RandomForestClassifier RandomForestClassifier::read(ArchiveReader& in) {
  RandomForestClassifier m;
  m.config_.trees = in.get<std::int32_t>();
  m.config_.max_depth = in.get<std::int32_t>();
  m.config_.min_samples_leaf = in.get<std::int32_t>();
  m.config_.features_per_split = in.get<std::int32_t>();
  m.config_.seed = in.get<std::uint64_t>();
  m.input_dim_ = in.get<std::int64_t>();
  m.trees_.resize(in.get_size());
  for (auto& tree : m.trees_) {
    tree.resize(in.get_size());
    for (auto& n : tree) {
      n.feature = in.get<std::int32_t>();
      n.threshold = in.get<double>();
      n.left = in.get<std::int32_t>();
      n.right = in.get<std::int32_t>();
      n.positive_fraction = in.get<double>();
      const auto limit = static_cast<std::int32_t>(tree.size());
      if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= limit || n.right >= limit))
        throw DataError("corrupt forest archive: child index out of range");
    }
  }
  return m;
}

void write_tagged(ArchiveWriter& out, const BinaryClassifier& model) {
  out.put(model.kind());
  model.write(out);
}

void write_tagged(ArchiveWriter& out, const MultiTargetRegressor& model) {
  out.put(model.kind());
  model.write(out);
}

std::shared_ptr<const BinaryClassifier> read_classifier(ArchiveReader& in) {
  const auto kind = in.get_string();
  if (kind == "random_forest") return std::make_shared<RandomForestClassifier>(RandomForestClassifier::read(in));
  throw DataError("unknown classifier kind '" + kind + "' in archive");
}

std::shared_ptr<const MultiTargetRegressor> read_regressor(ArchiveReader& in) {
  const auto kind = in.get_string();
  if (kind == "edrvfl") return std::make_shared<EdRvflRegressor>(EdRvfl<double>::read(in));
  throw DataError("unknown regressor kind '" + kind + "' in archive");
}

}  // namespace matdesign
