#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "matdesign/edrvfl.hpp"
#include "matdesign/guidance.hpp"
#include "matdesign/metrics.hpp"
#include "test_support.hpp"

using namespace matdesign;

namespace {

// Ridge with unpenalised intercept via the augmented normal equations.
Eigen::VectorXd augmented_ridge_predict(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda,
                                        const Eigen::MatrixXd& query) {
  Eigen::MatrixXd a(x.rows(), x.cols() + 1);
  a << x, Eigen::VectorXd::Ones(x.rows());
  Eigen::MatrixXd pen = lambda * Eigen::MatrixXd::Identity(a.cols(), a.cols());
  pen(x.cols(), x.cols()) = 0;
  const Eigen::VectorXd w = (a.transpose() * a + pen).colPivHouseholderQr().solve(a.transpose() * y);
  Eigen::MatrixXd q(query.rows(), query.cols() + 1);
  q << query, Eigen::VectorXd::Ones(query.rows());
  return q * w;
}

Eigen::MatrixXd standardise(const Eigen::MatrixXd& x, const Eigen::MatrixXd& ref) {
  const Eigen::RowVectorXd mu = ref.colwise().mean();
  const Eigen::RowVectorXd sd = ((ref.rowwise() - mu).array().square().colwise().mean()).sqrt();
  return (x.rowwise() - mu).array().rowwise() / sd.array();
}

}  // namespace

TEST_CASE("edRVFL with one empty layer is plain ridge") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  for (auto [rows, cols] : {std::pair{80, 6}, std::pair{25, 40}}) {
    Eigen::MatrixXd x(rows, cols);
    Eigen::VectorXd y(rows);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) x(i, j) = 2.0 * n(rng) + j;
      y[i] = x.row(i).sum() + n(rng);
    }
    EdRvflConfig cfg;
    cfg.layers = 1;
    cfg.width = 0;
    cfg.lambda = 0.7;
    const auto net = EdRvfl<double>::fit(x, y, cfg);
    const Eigen::VectorXd pred = net.predict(x).col(0);
    const Eigen::VectorXd oracle = augmented_ridge_predict(standardise(x, x), y, 0.7, standardise(x, x));
    CHECK((pred - oracle).norm() / oracle.norm() < 1e-8);
  }
}

TEST_CASE("fit_ridge recovers the closed form in primal and dual") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  for (auto [rows, cols] : {std::pair{50, 5}, std::pair{10, 30}}) {
    Eigen::MatrixXd x(rows, cols);
    Eigen::VectorXd y(rows);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) x(i, j) = n(rng);
      y[i] = n(rng) + 4;
    }
    const auto r = fit_ridge(x, y, 0.3);
    const Eigen::VectorXd oracle = augmented_ridge_predict(x, y, 0.3, x);
    CHECK((r.predict(x) - oracle).norm() / oracle.norm() < 1e-10);
  }
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 2);
  Eigen::VectorXd y = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_AS(fit_ridge(x, y, 0.0), ConfigError);
}

TEST_CASE("edRVFL fits a noisy linear target") {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> noise(0, 0.01);
  auto make = [&](int rows, Eigen::MatrixXd& x, Eigen::VectorXd& y) {
    x.resize(rows, 4);
    y.resize(rows);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < 4; ++j) x(i, j) = u(rng);
      y[i] = 3 * x(i, 0) - 2 * x(i, 1) + noise(rng);
    }
  };
  Eigen::MatrixXd xtr, xte;
  Eigen::VectorXd ytr, yte;
  make(300, xtr, ytr);
  make(200, xte, yte);
  const auto net = EdRvfl<double>::fit(xtr, ytr, EdRvflConfig{});
  CHECK(*metrics::r2(yte, net.predict(xte).col(0)) >= 0.99);
}

TEST_CASE("edRVFL argument and data errors") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(30, 3);
  Eigen::VectorXd y = Eigen::VectorXd::Random(30);
  EdRvflConfig bad;
  bad.lambda = 0;
  CHECK_THROWS_AS(EdRvfl<double>::fit(x, y, bad), ConfigError);
  Eigen::MatrixXd sparse = Eigen::MatrixXd::Constant(30, 1, std::nan(""));
  sparse.topRows(10).setOnes();
  CHECK_THROWS_AS(EdRvfl<double>::fit(x, sparse, EdRvflConfig{}), DataError);
}

TEST_CASE("constant target gives zero error and undefined R2") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(40, 3);
  Eigen::VectorXd y = Eigen::VectorXd::Constant(40, 2.5);
  const auto net = EdRvfl<double>::fit(x, y, EdRvflConfig{});
  const Eigen::VectorXd p = net.predict(x).col(0);
  CHECK(*metrics::rmse(y, p) < 1e-9);
  CHECK_FALSE(metrics::r2(y, y));
}

TEST_CASE("edRVFL checkpoint round-trips bit-exactly") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(40, 3);
  Eigen::MatrixXd y(40, 2);
  y.col(0) = x.col(0);
  y.col(1) = x.col(1).array().square();
  const auto net = EdRvfl<float>::fit(x.cast<float>(), y.cast<float>(), EdRvflConfig{});
  ArchiveWriter w("t", 1);
  net.write(w);
  ArchiveReader r(w.bytes(), "t", 1);
  const auto back = EdRvfl<float>::read(r);
  CHECK(r.at_end());
  CHECK((back.predict(x.cast<float>()).array() == net.predict(x.cast<float>()).array()).all());
}

TEST_CASE("forest separates blobs and is blind on shuffled labels") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0, 1);
  auto blobs = [&](int rows, double shift, Eigen::MatrixXd& x, Eigen::VectorXi& y, bool shuffle) {
    x.resize(rows, 8);
    y.resize(rows);
    for (int i = 0; i < rows; ++i) {
      y[i] = i % 2;
      for (int j = 0; j < 8; ++j) x(i, j) = n(rng) + (y[i] ? shift : 0.0);
    }
    if (shuffle) std::shuffle(y.data(), y.data() + rows, rng);
  };
  Eigen::MatrixXd xtr, xte;
  Eigen::VectorXi ytr, yte;
  blobs(400, 4.0, xtr, ytr, false);
  blobs(400, 4.0, xte, yte, false);
  ForestConfig cfg;
  cfg.trees = 50;
  auto forest = RandomForestClassifier::fit(xtr, ytr, cfg);
  CHECK(*metrics::auc(forest.predict_proba(xte), yte) >= 0.99);

  blobs(1000, 0.0, xtr, ytr, true);
  blobs(2000, 0.0, xte, yte, true);
  forest = RandomForestClassifier::fit(xtr, ytr, cfg);
  CHECK(std::abs(*metrics::auc(forest.predict_proba(xte), yte) - 0.5) <= 0.05);

  const Eigen::VectorXi single = Eigen::VectorXi::Zero(xtr.rows());
  CHECK_THROWS_AS(RandomForestClassifier::fit(xtr, single, cfg), DataError);
}

TEST_CASE("folds partition rows and respect strata") {
  const auto f = make_folds(100, 5, 1);
  std::vector<int> sizes(5, 0);
  for (int id : f) ++sizes[static_cast<std::size_t>(id)];
  for (int s : sizes) CHECK(s == 20);

  std::vector<int> strata(103);
  for (std::size_t i = 0; i < strata.size(); ++i) strata[i] = i < 31 ? 1 : (i < 70 ? 2 : 0);
  const auto g = make_folds(strata.size(), 5, 3, &strata);
  for (int cls = 0; cls < 3; ++cls) {
    const double total = static_cast<double>(std::count(strata.begin(), strata.end(), cls));
    for (int fold = 0; fold < 5; ++fold) {
      int in = 0;
      for (std::size_t i = 0; i < g.size(); ++i) in += g[i] == fold && strata[i] == cls;
      CHECK(std::abs(in - total / 5) <= 1.0);
    }
  }
  CHECK_THROWS_AS(make_folds(4, 5, 1), DataError);
  CHECK_THROWS_AS(make_folds(4, 1, 1), ConfigError);
}

TEST_CASE("cross-validation per-fold metrics match out-of-fold recomputation") {
  const auto& d = testsupport::mini_dataset();
  const auto cfg = testsupport::fast_guidance_config();
  const auto rep = cross_validate_classifier(d.classification, cfg, 5);
  double auc_sum = 0;
  for (int f = 0; f < 5; ++f) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < rep.fold_of.size(); ++i)
      if (rep.fold_of[i] == f) {
        s.push_back(rep.oof_scores[static_cast<Eigen::Index>(i)]);
        y.push_back(rep.labels[static_cast<Eigen::Index>(i)]);
      }
    auc_sum += *metrics::auc(Eigen::Map<Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size())),
                             Eigen::Map<Eigen::VectorXi>(y.data(), static_cast<Eigen::Index>(y.size())));
  }
  CHECK(std::abs(*rep.classification->auc - auc_sum / 5) < 1e-12);
  CHECK(*rep.classification->auc > 0.8);

  const auto again = cross_validate_classifier(d.classification, cfg, 5);
  CHECK(again.to_json().dump() == rep.to_json().dump());

  const auto reg = cross_validate_regressor(d.regression, {}, *testsupport::element_table(), cfg, 5);
  const int tg = index_of(Property::Tg);
  double r2_sum = 0;
  for (int f = 0; f < 5; ++f) {
    std::vector<double> y, p;
    for (std::size_t i = 0; i < reg.fold_of.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      if (reg.fold_of[i] == f && !std::isnan(reg.targets(ii, tg))) {
        y.push_back(reg.targets(ii, tg));
        p.push_back(reg.oof_predictions(ii, tg));
      }
    }
    r2_sum += *metrics::r2(Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())),
                           Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())));
  }
  CHECK(std::abs(*reg.regression[static_cast<std::size_t>(tg)]->r2 - r2_sum / 5) < 1e-12);
}

TEST_CASE("bundle predictions on the mini dataset") {
  const auto& d = testsupport::mini_dataset();
  const auto& b = testsupport::mini_bundle();
  int bmg = 0, hit = 0;
  for (const auto& r : d.classification) {
    if (r.label != ClassLabel::BMG) continue;
    ++bmg;
    hit += b.predict_class_prob(r.composition) >= 0.5;
  }
  CHECK(hit >= 0.9 * bmg);

  const auto first = d.classification.front().composition;
  CHECK(b.predict(first).props == b.predict(first).props);

  // In-sample sigma_Y fit beats the mean predictor.
  std::vector<double> y, p;
  for (const auto& r : d.regression)
    if (const auto v = r.properties[index_of(Property::SigmaY)]) {
      y.push_back(*v);
      p.push_back(b.predict_properties(r.composition)[index_of(Property::SigmaY)]);
    }
  CHECK(*metrics::r2(Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size())),
                     Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()))) > 0.0);
}

TEST_CASE("training is invariant to row order") {
  auto d = testsupport::mini_dataset();
  auto cfg = testsupport::fast_guidance_config();
  cfg.forest.trees = 10;
  const auto a = train_classifier(d.classification, cfg);
  const auto ra = train_regressor(d.regression, {}, *testsupport::element_table(), cfg);
  std::reverse(d.classification.begin(), d.classification.end());
  std::reverse(d.regression.begin(), d.regression.end());
  const auto b = train_classifier(d.classification, cfg);
  const auto rb = train_regressor(d.regression, {}, *testsupport::element_table(), cfg);
  Eigen::MatrixXd x(5, kElementCount);
  for (int i = 0; i < 5; ++i) x.row(i) = d.classification[static_cast<std::size_t>(i * 7)].composition.transpose();
  CHECK((a->predict_proba(x).array() == b->predict_proba(x).array()).all());
  const auto table = testsupport::element_table();
  std::vector<Composition> rows;
  for (int i = 0; i < 5; ++i) rows.push_back(d.regression[static_cast<std::size_t>(i)].composition);
  const Eigen::MatrixXd in = model_inputs(rows, {}, *table);
  CHECK((ra->predict(in).array() == rb->predict(in).array()).all());
}

TEST_CASE("bundle checkpoint round-trips and checks the feature vocabulary") {
  const auto table = testsupport::element_table();
  auto cfg = testsupport::fast_guidance_config();
  cfg.forest.trees = 8;
  const std::vector<CandidateFeature> feats = {{"atomic_radius", Aggregation::WeightedStd}};
  const auto b = train_guidance(testsupport::mini_dataset(), table, cfg, feats);
  const auto dir = testsupport::scratch_dir("bundle");
  b.save(dir / "g.bin");
  const auto back = GuidanceBundle::load(dir / "g.bin", table);
  CHECK(back.version == b.version);
  CHECK(back.config_hash == b.config_hash);
  CHECK(back.cv_r2 == b.cv_r2);
  for (const auto& r : testsupport::mini_dataset().classification) {
    const auto p = b.predict(r.composition), q = back.predict(r.composition);
    CHECK(p.cls_prob == q.cls_prob);
    CHECK(p.props == q.props);
  }
  Eigen::Matrix<double, kElementCount, Eigen::Dynamic> v = table->values().leftCols(1);
  const auto other = std::make_shared<const ElementDescriptorTable>(std::vector<std::string>{"atomic_number"}, v);
  CHECK_THROWS_WITH_AS(GuidanceBundle::load(dir / "g.bin", other), doctest::Contains("atomic_radius.wstd"), DataError);
}
