#pragma once

// Scripted refinement scenarios shared by the unit tests and the acceptance binary.

#include <memory>
#include <random>
#include <vector>

#include "matdesign/amr.hpp"
#include "matdesign/features.hpp"
#include "matdesign/metrics.hpp"
#include "test_support.hpp"

namespace amrchecks {

using namespace matdesign;

/// Cu-Ni-Al base with optional Ti and W. Tg follows the largest elemental
/// melting point present, a step in W presence that raw fractions only
/// approximate. The other targets are smooth in the fractions.
inline Dataset step_dataset(std::uint64_t seed = 17) {
  const auto idx = [](const char* s) { return *element_index(s); };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto& table = *testsupport::element_table();
  const auto melt = CandidateFeature::parse("melting_point.max");
  Dataset d;
  for (int i = 0; i < 160; ++i) {
    DatasetRow r;
    Composition c = Composition::Zero();
    c[idx("Cu")] = 20 + 30 * u(rng);
    c[idx("Ni")] = 10 + 20 * u(rng);
    c[idx("Al")] = 5 + 10 * u(rng);
    if (u(rng) < 0.5) c[idx("Ti")] = 2 + 13 * u(rng);
    const bool w = i % 2 == 0;
    if (w) c[idx("W")] = 0.5 + 4.5 * u(rng);
    const double scale_rest = (100.0 - c[idx("W")]) / (c.sum() - c[idx("W")]);
    for (int e = 0; e < kElementCount; ++e)
      if (e != idx("W")) c[e] *= scale_rest;
    r.composition = c;
    r.line = static_cast<std::size_t>(i + 2);
    const double tg = 400.0 + 0.1 * featurize(c, melt, table);
    r.properties[index_of(Property::Tg)] = tg;
    r.properties[index_of(Property::Tl)] = tg + 300 + 2 * c[idx("Cu")];
    r.properties[index_of(Property::Tx)] = tg + 40 + c[idx("Al")];
    r.properties[index_of(Property::Dmax)] = 1 + 0.1 * c[idx("Ni")];
    r.properties[index_of(Property::SigmaY)] = 1500 + 10 * c[idx("Ni")];
    r.properties[index_of(Property::E)] = 80 + c[idx("Al")];
    r.properties[index_of(Property::Elongation)] = 2 + 0.05 * c[idx("Cu")];
    r.label = (c[idx("Cu")] > 40) ? ClassLabel::BMG : ClassLabel::RMG;
    d.regression.push_back(r);
    d.classification.push_back(r);
  }
  d.parsed_rows = d.regression.size();
  return d;
}

/// States whose true Tg is constant (W present, no Ti) but whose W share
/// sweeps the range where the raw-fraction model ramps.
inline std::vector<Composition> step_window() {
  const auto idx = [](const char* s) { return *element_index(s); };
  std::vector<Composition> out;
  for (int k = 0; k < 12; ++k) {
    Composition c = Composition::Zero();
    const double w = 0.5 + 4.5 * k / 11.0;
    c[idx("W")] = w;
    c[idx("Cu")] = (100 - w) * 0.55;
    c[idx("Ni")] = (100 - w) * 0.30;
    c[idx("Al")] = (100 - w) * 0.15;
    out.push_back(c);
  }
  return out;
}

inline GuidanceConfig scenario_guidance() {
  auto c = testsupport::fast_guidance_config();
  c.cv_folds = 5;
  return c;
}

struct ScenarioResult {
  RefinementEvent event;
  std::shared_ptr<const GuidanceBundle> bundle;
  double tau_var = 0.0;
  double variance_before = 0.0;
  std::optional<double> variance_after;
  bool trigger_fired = false;
  std::size_t llm_calls = 0;
};

/// Variance path with a scripted reply sequence.
inline ScenarioResult variance_scenario(const std::vector<std::string>& replies) {
  static const Dataset data = step_dataset();
  static const auto base = std::make_shared<const GuidanceBundle>(
      train_guidance(data, testsupport::element_table(), scenario_guidance()));
  const auto window = step_window();
  AmrConfig cfg;
  cfg.monitored = {Property::Tg};
  const auto tau = variance_thresholds(data.regression, cfg.tau_var_fraction);
  const auto check = check_variance_trigger(window, *base, tau, cfg, 0, 1000);

  ScenarioResult res;
  res.tau_var = *tau[index_of(Property::Tg)];
  res.variance_before = *check.variance[index_of(Property::Tg)];
  res.trigger_fired = check.fired;

  RefineRequest req;
  req.kind = TriggerKind::Variance;
  req.window = window;
  req.target = Property::Tg;
  req.observed = res.variance_before;
  req.tau_var = res.tau_var;
  RefineHooks hooks{regressor_retrainer(data.regression, *base, scenario_guidance()),
                    window_variance_recheck(window, Property::Tg)};
  auto llm = MockLlm::scripted(replies);
  const auto lib = PromptLibrary::load_default();
  auto out = refine(req, base, hooks, lib, *llm, cfg);
  res.event = out.event;
  res.bundle = out.bundle;
  res.variance_after = window_variance_recheck(window, Property::Tg)(*out.bundle);
  res.llm_calls = llm->calls();
  return res;
}

inline std::string select(std::initializer_list<const char*> names) {
  nlohmann::json j = {{"selected_features", std::vector<std::string>(names.begin(), names.end())},
                      {"reason", "scripted"}};
  return j.dump();
}

/// Correlation path against stub models: each candidate's recheck value is
/// scripted, so the gate is exercised exactly.
struct StubOutcome {
  RefinementEvent event;
  std::uint64_t version = 0;
};

inline StubOutcome correlation_stub(const std::vector<double>& cv_scores, const std::vector<double>& pearsons,
                                    double baseline_cv, int max_iterations = 3) {
  auto base = std::make_shared<GuidanceBundle>();
  base->table = testsupport::element_table();
  base->version = 4;
  base->cv_r2.fill(baseline_cv);
  std::size_t call = 0;
  RefineHooks hooks;
  hooks.retrain = [&](const std::vector<CandidateFeature>& f) {
    auto b = std::make_shared<GuidanceBundle>(*base);
    b->features = f;
    b->cv_r2.fill(cv_scores.at(call));
    return std::shared_ptr<const GuidanceBundle>(b);
  };
  hooks.recheck = [&](const GuidanceBundle&) -> std::optional<double> { return pearsons.at(call++); };
  std::vector<std::string> replies(static_cast<std::size_t>(max_iterations), select({"atomic_radius.wstd"}));
  auto llm = MockLlm::scripted(replies);
  const auto lib = PromptLibrary::load_default();
  AmrConfig cfg;
  cfg.max_iterations = max_iterations;
  RefineRequest req;
  req.kind = TriggerKind::Correlation;
  req.observed = 0.40;
  req.window = std::vector<Composition>(8, Composition::Constant(100.0 / kElementCount));
  const auto out = refine(req, base, hooks, lib, *llm, cfg);
  return {out.event, out.bundle->version};
}

}  // namespace amrchecks
