#include <doctest.h>

#include <fstream>
#include <random>
#include <set>

#include "matdesign/evaluation.hpp"
#include "run_fixture.hpp"
#include "stub_predictor.hpp"

using namespace matdesign;

namespace {

int el(std::string_view s) { return *element_index(s); }

ExplorationBase open_base(std::vector<std::string_view> symbols, double lo = 0.0, double hi = 100.0) {
  ExplorationBase b;
  for (auto s : symbols) b.allowed.push_back(el(s));
  std::sort(b.allowed.begin(), b.allowed.end());
  b.base = el(symbols.front());
  for (int e : b.allowed) {
    b.lo[e] = lo;
    b.hi[e] = hi;
  }
  return b;
}

ThresholdSet two_thresholds() {
  ThresholdSet t;
  t.tau[index_of(Property::Dmax)] = 5.0;
  t.tau[index_of(Property::SigmaY)] = 1500.0;
  t.weight[index_of(Property::Dmax)] = 0.5;
  t.weight[index_of(Property::SigmaY)] = 0.5;
  t.tg_tl_ratio = 0.6;
  return t;
}

// Random records whose flags and predictions are drawn independently.
std::vector<StepRecord> random_log(std::mt19937_64& rng, int epochs, int steps) {
  std::bernoulli_distribution coin(0.5), rare(0.1);
  std::uniform_real_distribution<double> p(0.0, 1.0), d(0.0, 10.0), s(500.0, 2500.0), tg(400.0, 800.0);
  std::vector<StepRecord> log;
  for (int e = 0; e < epochs; ++e)
    for (int k = 1; k <= steps; ++k) {
      StepRecord r;
      r.epoch = e;
      r.k = k;
      r.breakdown.legal = coin(rng) || coin(rng);
      if (r.breakdown.legal) {
        r.breakdown.cls_prob = p(rng);
        std::array<double, kPropertyCount> props{};
        props[index_of(Property::Dmax)] = d(rng);
        props[index_of(Property::SigmaY)] = s(rng);
        props[index_of(Property::Tg)] = tg(rng);
        props[index_of(Property::Tl)] = 1000.0;
        r.props = props;
        r.breakdown.done = rare(rng);
      }
      log.push_back(r);
    }
  return log;
}

struct Prepared {
  std::shared_ptr<const RunInputs> inputs;
  std::shared_ptr<const GuidanceBundle> bundle;
};

const Prepared& prepared() {
  static const Prepared p = [] {
    auto cfg = testsupport::tiny_config("evaluation");
    cfg.eval.budget = 300;
    auto in = RunInputs::prepare(cfg);
    return Prepared{in, testsupport::cached_guidance(*in)};
  }();
  return p;
}

}  // namespace

TEST_CASE("success rates match direct counting") {
  std::mt19937_64 rng(8);
  const auto t = two_thresholds();
  for (int trial = 0; trial < 20; ++trial) {
    const auto log = random_log(rng, 1 + trial % 5, 1 + trial % 7);
    const auto r = success_rates(log, t);
    std::uint64_t legal = 0, bmg = 0, dmax = 0, ratio = 0, sigma = 0;
    std::set<std::int64_t> epochs, done;
    for (const auto& s : log) {
      epochs.insert(s.epoch);
      if (s.done()) done.insert(s.epoch);
      if (!s.legal()) continue;
      ++legal;
      if (*s.breakdown.cls_prob <= 0.5) continue;
      ++bmg;
      dmax += (*s.props)[0] >= 5.0;
      sigma += (*s.props)[4] >= 1500.0;
      ratio += (*s.props)[1] / 1000.0 >= 0.6;
    }
    CHECK(r.steps == log.size());
    CHECK(r.legal.numerator == legal);
    CHECK(r.cls.numerator == bmg);
    CHECK(r.cls.denominator == legal);
    CHECK(r.sr80[0].numerator == dmax);
    CHECK(r.sr80[1].numerator == ratio);
    CHECK(r.sr80[2].numerator == sigma);
    CHECK(r.sr80[0].denominator == bmg);
    CHECK(r.sr80[3].denominator == 0);  // no E threshold
    CHECK_FALSE(r.sr80[3].percent().has_value());
    CHECK(r.done.numerator == done.size());
    CHECK(r.done.denominator == epochs.size());
  }
}

TEST_CASE("success-rate edge cases") {
  CHECK_THROWS_AS(success_rates({}, two_thresholds()), DataError);
  StepRecord r;
  r.breakdown.legal = true;
  r.breakdown.cls_prob = 0.9;
  std::array<double, kPropertyCount> props{};
  props[0] = 6.0;
  props[2] = 1.0;
  props[4] = 2000.0;
  r.props = props;
  const auto all = success_rates({r, r}, two_thresholds());
  CHECK(*all.legal.percent() == 100.0);
  CHECK(*all.cls.percent() == 100.0);
  r.breakdown.legal = false;
  const auto none = success_rates({r}, two_thresholds());
  CHECK(*none.legal.percent() == 0.0);
  CHECK_FALSE(none.cls.percent().has_value());
  CHECK(none.to_json()["SR_cls"]["flag"] == "zero_denominator");
}

TEST_CASE("completed designs never decrease as the log grows") {
  std::mt19937_64 rng(2);
  const auto log = random_log(rng, 12, 6);
  std::uint64_t prev = 0;
  for (std::size_t n = 1; n <= log.size(); ++n) {
    const auto r = success_rates({log.begin(), log.begin() + static_cast<long>(n)}, two_thresholds());
    CHECK(r.done.numerator >= prev);
    CHECK(r.done.numerator <= r.done.denominator);
    prev = r.done.numerator;
  }
}

TEST_CASE("lattice counts agree with enumeration") {
  const auto two = open_base({"Zr", "Cu"});
  for (double h : {1.0, 2.5, 5.0, 10.0, 50.0}) {
    const auto expect = static_cast<std::uint64_t>(std::lround(100.0 / h)) + 1;
    CHECK(lattice_count(two, h) == expect);
    CHECK(lattice_points(two, h, 1000).size() == expect);
  }
  auto three = open_base({"Zr", "Cu", "Al"});
  three.lo[el("Zr")] = 40.0;
  three.hi[el("Al")] = 15.0;
  for (double h : {1.0, 5.0, 10.0}) {
    // Brute force over the first two coordinates.
    const long n = std::lround(100.0 / h);
    std::uint64_t brute = 0;
    for (long a = 0; a <= n; ++a)
      for (long b = 0; a + b <= n; ++b) {
        Composition c = Composition::Zero();
        c[three.allowed[0]] = a * h;
        c[three.allowed[1]] = b * h;
        c[three.allowed[2]] = (n - a - b) * h;
        bool ok = true;
        for (int e : three.allowed) ok = ok && c[e] >= three.lo[e] - 1e-9 && c[e] <= three.hi[e] + 1e-9;
        brute += ok;
      }
    CHECK(lattice_count(three, h) == brute);
    const auto pts = lattice_points(three, h, 1 << 20);
    CHECK(pts.size() == brute);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(std::abs(pts[i].sum() - 100.0) < 1e-9);
      if (i == 0) continue;
      std::vector<double> prev, cur;
      for (int e : three.allowed) {
        prev.push_back(pts[i - 1][e]);
        cur.push_back(pts[i][e]);
      }
      CHECK(prev < cur);
    }
    CHECK(lattice_points(three, h, 3).size() == std::min<std::size_t>(3, brute));
  }
  CHECK_THROWS_AS(lattice_count(two, 3.0), ConfigError);
  CHECK_THROWS_AS(lattice_count(two, 0.0), ConfigError);
}

TEST_CASE("resolution choice fits the budget") {
  const std::vector<ExplorationBase> bases{open_base({"Zr", "Cu"}), open_base({"Fe", "Co"})};
  CHECK(choose_resolution(bases, 202) == 1.0);
  CHECK(choose_resolution(bases, 201) == 2.0);
  CHECK(choose_resolution(bases, 10000) == 0.1);
}

TEST_CASE("random baseline spends exactly its budget") {
  const auto& p = prepared();
  for (std::uint64_t budget : {0ull, 1ull, 37ull, 300ull}) {
    BundlePredictor limited(p.bundle, budget);
    const auto run = random_baseline(*p.inputs, limited, 5);
    CHECK(run.exhausted);
    CHECK(run.calls == budget);
    CHECK(limited.calls() == budget);
    if (budget == 0) CHECK(run.log.empty());
    for (const auto& r : run.log) CHECK(r.a.cwiseAbs().maxCoeff() <= p.inputs->config.env.delta_max);
  }
  // Without a predictor limit the configured budget still stops the run.
  BundlePredictor open(p.bundle);
  const auto run = random_baseline(*p.inputs, open, 5);
  CHECK(run.calls == p.inputs->config.eval.budget);
  CHECK_FALSE(run.log.empty());
  CHECK(success_rates(run.log, p.inputs->thresholds).steps == run.log.size());
}

TEST_CASE("grid baseline walks the lattice within the budget") {
  const auto& p = prepared();
  BundlePredictor predictor(p.bundle);
  const auto run = grid_baseline(*p.inputs, predictor, std::nullopt);
  REQUIRE(run.resolution.has_value());
  CHECK(run.calls <= p.inputs->config.eval.budget);
  CHECK(run.calls == run.log.size());
  for (std::size_t i = 0; i < run.log.size(); ++i) {
    const auto& r = run.log[i];
    CHECK(r.legal());
    CHECK((r.s + r.a - r.s_next).cwiseAbs().maxCoeff() < 1e-9);
    if (r.k > 1) CHECK(r.s == run.log[i - 1].s_next);
  }

  RunInputs empty;
  empty.config = p.inputs->config;
  empty.reward = p.inputs->reward;
  empty.bases = {open_base({"Zr", "Cu"}, 60.0, 100.0)};  // both at least 60: nothing sums to 100
  CHECK_THROWS_AS(grid_baseline(empty, predictor, 10.0), ConfigError);
}

TEST_CASE("policy evaluation is reproducible and policy-independent in its starts") {
  const auto& p = prepared();
  const Policy zero = [](const Composition&) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(kElementCount); };
  const auto a = evaluate_policy(zero, p.bundle, *p.inputs, 5, 3);
  const auto b = evaluate_policy(zero, p.bundle, *p.inputs, 5, 3);
  CHECK(a.episode_means == b.episode_means);
  CHECK(a.legal == a.steps);  // the zero action is always legal
  CHECK(a.steps == 5u * static_cast<std::uint64_t>(p.inputs->config.env.episode_steps));
  std::vector<Composition> seen_a, seen_b;
  const Policy record_a = [&](const Composition& s) -> Eigen::VectorXd {
    seen_a.push_back(s);
    return Eigen::VectorXd::Zero(kElementCount);
  };
  const Policy record_b = [&](const Composition& s) -> Eigen::VectorXd {
    seen_b.push_back(s);
    return Eigen::VectorXd::Constant(kElementCount, 9.0);  // always illegal
  };
  evaluate_policy(record_a, p.bundle, *p.inputs, 4, 21);
  evaluate_policy(record_b, p.bundle, *p.inputs, 4, 21);
  const auto t_ep = static_cast<std::size_t>(p.inputs->config.env.episode_steps);
  for (std::size_t e = 0; e < 4; ++e) CHECK(seen_a[e * t_ep] == seen_b[e * t_ep]);
  CHECK_THROWS_AS(evaluate_policy(zero, p.bundle, *p.inputs, 0, 1), ConfigError);
}

TEST_CASE("report writes every export") {
  auto cfg = testsupport::tiny_config("evaluation_report");
  cfg.train.epochs = 4;
  auto in = RunInputs::prepare(cfg);
  auto bundle = testsupport::cached_guidance(*in);
  {
    Trainer tr(in, bundle, make_llm(cfg.llm));
    tr.run();
  }
  BundlePredictor predictor(bundle, 50);
  const auto random = random_baseline(*in, predictor, 1);
  append_trajectory(cfg.out_dir / "baseline_random.jsonl", random.log);
  const auto out = cfg.out_dir / "report";
  const auto summary = write_report(cfg.out_dir, out);
  CHECK(summary["methods"].size() == 2);
  CHECK(summary["episodes"] == 4);
  for (const char* f : {"summary.txt", "summary.csv", "summary.json", "episodes.csv", "tep_histogram.csv"})
    CHECK(std::filesystem::exists(out / f));
  std::ifstream csv(out / "summary.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("Method,SR_legal,SR_cls", 0) == 0);
  CHECK_THROWS_AS(write_report(testsupport::scratch_dir("evaluation_none"), out), DataError);
}
