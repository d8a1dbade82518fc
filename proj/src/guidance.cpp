#include "matdesign/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "matdesign/archive.hpp"
#include "matdesign/common.hpp"
#include "matdesign/metrics.hpp"

namespace matdesign {
namespace {

using nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::vector<Composition> compositions_of(const std::vector<DatasetRow>& rows) {
  std::vector<Composition> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r.composition);
  return out;
}

template <typename T>
std::vector<T> subset(const std::vector<T>& rows, const std::vector<int>& fold_of, int fold, bool inside) {
  std::vector<T> out;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if ((fold_of[i] == fold) == inside) out.push_back(rows[i]);
  return out;
}

// Training sees rows in a canonical order so models do not depend on file order.
std::vector<DatasetRow> canonical_order(std::vector<DatasetRow> rows) {
  auto key = [](const DatasetRow& r) {
    std::array<double, kElementCount + kPropertyCount + 1> k{};
    for (int i = 0; i < kElementCount; ++i) k[static_cast<std::size_t>(i)] = r.composition[i];
    for (int p = 0; p < kPropertyCount; ++p)
      k[static_cast<std::size_t>(kElementCount + p)] = r.properties[static_cast<std::size_t>(p)].value_or(-1.0);
    k.back() = r.label ? static_cast<double>(*r.label) : -1.0;
    return k;
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const DatasetRow& a, const DatasetRow& b) { return key(a) < key(b); });
  return rows;
}

// Mean over folds of the defined values.
std::optional<double> mean_defined(const std::vector<std::optional<double>>& values) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : values)
    if (v) {
      sum += *v;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace

json GuidanceConfig::to_json() const {
  return {{"forest",
           {{"trees", forest.trees},
            {"max_depth", forest.max_depth},
            {"min_samples_leaf", forest.min_samples_leaf},
            {"features_per_split", forest.features_per_split},
            {"seed", forest.seed}}},
          {"regressor",
           {{"layers", regressor.layers},
            {"width", regressor.width},
            {"lambda", regressor.lambda},
            {"activation", activation_name(regressor.activation)},
            {"seed", regressor.seed},
            {"min_rows_per_target", regressor.min_rows_per_target}}},
          {"smote", smote},
          {"smote_k", smote_k},
          {"smote_ratio", smote_ratio},
          {"cv_folds", cv_folds},
          {"seed", seed}};
}

GuidanceConfig GuidanceConfig::from_json(const json& doc) {
  GuidanceConfig c;
  if (doc.contains("forest")) {
    const auto& f = doc["forest"];
    c.forest.trees = f.value("trees", c.forest.trees);
    c.forest.max_depth = f.value("max_depth", c.forest.max_depth);
    c.forest.min_samples_leaf = f.value("min_samples_leaf", c.forest.min_samples_leaf);
    c.forest.features_per_split = f.value("features_per_split", c.forest.features_per_split);
    c.forest.seed = f.value("seed", c.forest.seed);
  }
  if (doc.contains("regressor")) {
    const auto& r = doc["regressor"];
    c.regressor.layers = r.value("layers", c.regressor.layers);
    c.regressor.width = r.value("width", c.regressor.width);
    c.regressor.lambda = r.value("lambda", c.regressor.lambda);
    c.regressor.activation = activation_from_name(r.value("activation", activation_name(c.regressor.activation)));
    c.regressor.seed = r.value("seed", c.regressor.seed);
    c.regressor.min_rows_per_target = r.value("min_rows_per_target", c.regressor.min_rows_per_target);
  }
  c.smote = doc.value("smote", c.smote);
  c.smote_k = doc.value("smote_k", c.smote_k);
  c.smote_ratio = doc.value("smote_ratio", c.smote_ratio);
  c.cv_folds = doc.value("cv_folds", c.cv_folds);
  c.seed = doc.value("seed", c.seed);
  if (c.cv_folds < 2) throw ConfigError("guidance.cv_folds must be >= 2");
  if (c.regressor.lambda <= 0.0) throw ConfigError("guidance.regressor.lambda must be positive");
  if (c.forest.trees < 1) throw ConfigError("guidance.forest.trees must be >= 1");
  return c;
}

std::uint64_t GuidanceConfig::hash() const { return fnv1a(to_json().dump()); }

std::vector<int> make_folds(std::size_t n, int k, std::uint64_t seed, const std::vector<int>* strata) {
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  if (static_cast<std::size_t>(k) > n)
    throw DataError("cross-validation k=" + std::to_string(k) + " exceeds row count " + std::to_string(n));
  if (strata && strata->size() != n) throw DataError("strata length differs from row count");
  std::mt19937_64 rng(seed);
  std::vector<int> fold_of(n, 0);
  std::vector<std::vector<std::size_t>> groups;
  if (strata) {
    std::vector<int> keys(strata->begin(), strata->end());
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    groups.resize(keys.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto g = std::lower_bound(keys.begin(), keys.end(), (*strata)[i]) - keys.begin();
      groups[static_cast<std::size_t>(g)].push_back(i);
    }
  } else {
    groups.emplace_back(n);
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }
  // Continue the round-robin across strata so fold sizes stay balanced too.
  std::size_t cursor = 0;
  for (auto& g : groups) {
    std::shuffle(g.begin(), g.end(), rng);
    for (auto i : g) fold_of[i] = static_cast<int>(cursor++ % static_cast<std::size_t>(k));
  }
  return fold_of;
}

Eigen::VectorXi bmg_labels(const std::vector<DatasetRow>& rows) {
  Eigen::VectorXi y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    y[static_cast<Eigen::Index>(i)] = rows[i].label == ClassLabel::BMG ? 1 : 0;
  return y;
}

Eigen::MatrixXd target_matrix(const std::vector<DatasetRow>& rows) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(rows.size()), kPropertyCount);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int p = 0; p < kPropertyCount; ++p)
      y(static_cast<Eigen::Index>(i), p) = rows[i].properties[static_cast<std::size_t>(p)].value_or(
          std::numeric_limits<double>::quiet_NaN());
  return y;
}

std::shared_ptr<const BinaryClassifier> train_classifier(const std::vector<DatasetRow>& rows,
                                                         const GuidanceConfig& config) {
  std::vector<DatasetRow> training;
  for (const auto& r : rows)
    if (r.label) training.push_back(r);
  training = canonical_order(std::move(training));
  if (config.smote) {
    std::mt19937_64 rng(config.seed ^ 0x5eedULL);
    auto extra = smote_oversample(training, ClassLabel::BMG, config.smote_k, config.smote_ratio, rng);
    training.insert(training.end(), extra.synthetic.begin(), extra.synthetic.end());
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(training.size()), kElementCount);
  for (std::size_t i = 0; i < training.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = training[i].composition.transpose();
  return std::make_shared<RandomForestClassifier>(RandomForestClassifier::fit(x, bmg_labels(training), config.forest));
}

std::shared_ptr<const MultiTargetRegressor> train_regressor(const std::vector<DatasetRow>& rows,
                                                            const std::vector<CandidateFeature>& features,
                                                            const ElementDescriptorTable& table,
                                                            const GuidanceConfig& config) {
  const auto ordered = canonical_order(rows);
  const Eigen::MatrixXd x = model_inputs(compositions_of(ordered), features, table);
  return std::make_shared<EdRvflRegressor>(EdRvfl<double>::fit(x, target_matrix(ordered), config.regressor));
}

MetricReport cross_validate_classifier(const std::vector<DatasetRow>& rows, const GuidanceConfig& config, int k) {
  std::vector<DatasetRow> labelled;
  for (const auto& r : rows)
    if (r.label) labelled.push_back(r);
  MetricReport report;
  report.folds = k;
  report.labels = bmg_labels(labelled);
  std::vector<int> strata(report.labels.data(), report.labels.data() + report.labels.size());
  report.fold_of = make_folds(labelled.size(), k, config.seed, &strata);
  report.oof_scores = Eigen::VectorXd::Zero(report.labels.size());

  std::vector<std::optional<double>> aucs, precisions, recalls, f1s;
  for (int f = 0; f < k; ++f) {
    const auto train = subset(labelled, report.fold_of, f, false);
    const auto test = subset(labelled, report.fold_of, f, true);
    const auto model = train_classifier(train, config);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(test.size()), kElementCount);
    for (std::size_t i = 0; i < test.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = test[i].composition.transpose();
    const Eigen::VectorXd scores = model->predict_proba(x);
    const Eigen::VectorXi y = bmg_labels(test);
    Eigen::Index q = 0;
    for (std::size_t i = 0; i < labelled.size(); ++i)
      if (report.fold_of[i] == f) report.oof_scores[static_cast<Eigen::Index>(i)] = scores[q++];
    const auto c = metrics::confusion(scores, y);
    aucs.push_back(metrics::auc(scores, y));
    precisions.push_back(metrics::precision(c));
    recalls.push_back(metrics::recall(c));
    f1s.push_back(metrics::f1(c));
  }
  report.classification = ClassificationMetrics{mean_defined(aucs), mean_defined(precisions), mean_defined(recalls),
                                                mean_defined(f1s)};
  return report;
}

MetricReport cross_validate_regressor(const std::vector<DatasetRow>& rows, const std::vector<CandidateFeature>& features,
                                      const ElementDescriptorTable& table, const GuidanceConfig& config, int k) {
  MetricReport report;
  report.folds = k;
  report.fold_of = make_folds(rows.size(), k, config.seed);
  report.targets = target_matrix(rows);
  report.oof_predictions = Eigen::MatrixXd::Zero(report.targets.rows(), kPropertyCount);
  const Eigen::MatrixXd x = model_inputs(compositions_of(rows), features, table);

  std::array<std::vector<std::optional<double>>, kPropertyCount> rmses, r2s, mapes;
  for (int f = 0; f < k; ++f) {
    std::vector<Eigen::Index> train_idx, test_idx;
    for (std::size_t i = 0; i < rows.size(); ++i)
      (report.fold_of[i] == f ? test_idx : train_idx).push_back(static_cast<Eigen::Index>(i));
    const Eigen::MatrixXd x_train = x(train_idx, Eigen::all);
    const Eigen::MatrixXd y_train = report.targets(train_idx, Eigen::all);
    const auto net = EdRvfl<double>::fit(x_train, y_train, config.regressor);
    const Eigen::MatrixXd pred = net.predict(x(test_idx, Eigen::all));
    for (std::size_t q = 0; q < test_idx.size(); ++q) report.oof_predictions.row(test_idx[q]) = pred.row(static_cast<Eigen::Index>(q));
    for (int p = 0; p < kPropertyCount; ++p) {
      std::vector<double> yv, pv;
      for (std::size_t q = 0; q < test_idx.size(); ++q) {
        const double y = report.targets(test_idx[q], p);
        if (std::isnan(y)) continue;
        yv.push_back(y);
        pv.push_back(pred(static_cast<Eigen::Index>(q), p));
      }
      if (yv.empty()) continue;
      const Eigen::Map<const Eigen::VectorXd> ym(yv.data(), static_cast<Eigen::Index>(yv.size()));
      const Eigen::Map<const Eigen::VectorXd> pm(pv.data(), static_cast<Eigen::Index>(pv.size()));
      rmses[p].push_back(metrics::rmse(ym, pm));
      r2s[p].push_back(ym.size() >= 2 ? metrics::r2(ym, pm) : std::nullopt);
      mapes[p].push_back(metrics::mape(ym, pm));
    }
  }
  for (int p = 0; p < kPropertyCount; ++p) {
    RegressionMetrics m;
    m.rows = static_cast<std::size_t>((report.targets.col(p).array() == report.targets.col(p).array()).count());
    m.rmse = mean_defined(rmses[p]);
    m.r2 = mean_defined(r2s[p]);
    m.mape = mean_defined(mapes[p]);
    report.regression[static_cast<std::size_t>(p)] = m;
  }
  return report;
}

json MetricReport::to_json() const {
  json doc;
  doc["folds"] = folds;
  if (classification) {
    doc["classification"] = {{"AUC", opt(classification->auc)},
                             {"Precision", opt(classification->precision)},
                             {"Recall", opt(classification->recall)},
                             {"F1", opt(classification->f1)}};
  }
  json reg = json::object();
  for (int p = 0; p < kPropertyCount; ++p) {
    const auto& m = regression[static_cast<std::size_t>(p)];
    if (!m) continue;
    reg[std::string(kPropertyNames[p])] = {
        {"RMSE", opt(m->rmse)}, {"R2", opt(m->r2)}, {"MAPE", opt(m->mape)}, {"rows", m->rows}};
  }
  if (!reg.empty()) doc["regression"] = reg;
  return doc;
}

double GuidanceBundle::predict_class_prob(const Composition& c) const {
  Eigen::MatrixXd x = c.transpose();
  return std::clamp(classifier->predict_proba(x)[0], 0.0, 1.0);
}

std::array<double, kPropertyCount> GuidanceBundle::predict_properties(const Composition& c) const {
  const Eigen::MatrixXd pred = predict_properties(std::vector<Composition>{c});
  std::array<double, kPropertyCount> out{};
  for (int p = 0; p < kPropertyCount; ++p) out[static_cast<std::size_t>(p)] = pred(0, p);
  return out;
}

Eigen::MatrixXd GuidanceBundle::predict_properties(const std::vector<Composition>& rows) const {
  if (!regressor || !table) throw ModelError("guidance bundle has no regressor");
  const Eigen::MatrixXd pred = regressor->predict(model_inputs(rows, features, *table));
  if (!pred.allFinite()) throw ModelError("regressor produced a non-finite prediction");
  return pred;
}

Prediction GuidanceBundle::predict(const Composition& c) const {
  Prediction p;
  p.cls_prob = predict_class_prob(c);
  p.props = predict_properties(c);
  return p;
}

std::optional<double> GuidanceBundle::mean_cv_r2() const {
  return mean_defined(std::vector<std::optional<double>>(cv_r2.begin(), cv_r2.end()));
}

void GuidanceBundle::save(const std::filesystem::path& path) const {
  ArchiveWriter out("matdesign.guidance", kArchiveVersion);
  out.put<std::uint64_t>(version);
  out.put<std::uint64_t>(config_hash);
  out.put<std::uint64_t>(features.size());
  for (const auto& f : features) out.put(f.name());
  for (const auto& r : cv_r2) out.put(r);
  write_tagged(out, *classifier);
  write_tagged(out, *regressor);
  out.save(path);
}

GuidanceBundle GuidanceBundle::load(const std::filesystem::path& path,
                                    std::shared_ptr<const ElementDescriptorTable> table) {
  auto in = ArchiveReader::open(path, "matdesign.guidance", kArchiveVersion);
  GuidanceBundle b;
  b.table = std::move(table);
  b.version = in.get<std::uint64_t>();
  b.config_hash = in.get<std::uint64_t>();
  const auto n = in.get_size();
  for (std::size_t i = 0; i < n; ++i) {
    auto f = CandidateFeature::parse(in.get_string());
    if (!b.table || !b.table->descriptor_index(f.descriptor))
      throw DataError("guidance bundle uses feature '" + f.name() + "' missing from the descriptor table");
    b.features.push_back(std::move(f));
  }
  for (auto& r : b.cv_r2) r = in.get_optional<double>();
  b.classifier = read_classifier(in);
  b.regressor = read_regressor(in);
  return b;
}

GuidanceBundle train_guidance(const Dataset& data, std::shared_ptr<const ElementDescriptorTable> table,
                              const GuidanceConfig& config, const std::vector<CandidateFeature>& features) {
  GuidanceBundle b;
  b.table = std::move(table);
  b.features = features;
  b.config_hash = config.hash();
  b.classifier = train_classifier(data.classification, config);
  b.regressor = train_regressor(data.regression, features, *b.table, config);
  const auto cv = cross_validate_regressor(data.regression, features, *b.table, config, config.cv_folds);
  for (int p = 0; p < kPropertyCount; ++p) b.cv_r2[static_cast<std::size_t>(p)] = cv.regression[static_cast<std::size_t>(p)]->r2;
  return b;
}

}  // namespace matdesign
