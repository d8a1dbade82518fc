#include "matdesign/amr.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "matdesign/features.hpp"
#include "matdesign/metrics.hpp"

namespace matdesign {

std::string_view phase_name(Phase phase) {
  switch (phase) {
    case Phase::VarianceWindow: return "variance-window";
    case Phase::CorrelationWindow: return "correlation-window";
    case Phase::KbrWindow: return "kbr-window";
  }
  return "?";
}

Phase phase_of(std::int64_t t, std::int64_t t_max) {
  if (t_max <= 0 || t < 0 || t > t_max) throw ConfigError("phase_of needs 0 <= t <= T_max and T_max > 0");
  // Integer comparisons: t < 0.2 T  <=>  5t < T, and t < 0.8 T  <=>  5t < 4T.
  if (5 * t < t_max) return Phase::VarianceWindow;
  if (5 * t < 4 * t_max) return Phase::CorrelationWindow;
  return Phase::KbrWindow;
}

void AmrConfig::validate() const {
  if (!(rho_min >= -1.0 && rho_min <= 1.0)) throw ConfigError("amr.rho_min must be in [-1, 1]");
  if (!(tau_var_fraction > 0.0)) throw ConfigError("amr.tau_var_fraction must be > 0");
  if (min_window < 2) throw ConfigError("amr.min_window must be >= 2");
  if (max_iterations < 1) throw ConfigError("amr.max_iterations must be >= 1");
  if (vocabulary_cap < 1) throw ConfigError("amr.vocabulary_cap must be >= 1");
}

nlohmann::json AmrConfig::to_json() const {
  nlohmann::json mon = nlohmann::json::array();
  for (auto p : monitored) mon.push_back(kPropertyNames[static_cast<std::size_t>(index_of(p))]);
  return {{"rho_min", rho_min},
          {"tau_var_fraction", tau_var_fraction},
          {"min_window", min_window},
          {"max_iterations", max_iterations},
          {"vocabulary_cap", vocabulary_cap},
          {"monitored", mon}};
}

AmrConfig AmrConfig::from_json(const nlohmann::json& doc) {
  AmrConfig c;
  c.rho_min = doc.value("rho_min", c.rho_min);
  c.tau_var_fraction = doc.value("tau_var_fraction", c.tau_var_fraction);
  c.min_window = doc.value("min_window", c.min_window);
  c.max_iterations = doc.value("max_iterations", c.max_iterations);
  c.vocabulary_cap = doc.value("vocabulary_cap", c.vocabulary_cap);
  for (const auto& name : doc.value("monitored", nlohmann::json::array())) {
    const auto p = property_from_name(name.get<std::string>());
    if (!p) throw ConfigError("amr.monitored: unknown property " + name.get<std::string>());
    c.monitored.push_back(*p);
  }
  c.validate();
  return c;
}

bool AmrConfig::monitors(Property p) const {
  return monitored.empty() || std::find(monitored.begin(), monitored.end(), p) != monitored.end();
}

TargetThresholds variance_thresholds(const std::vector<DatasetRow>& rows, double fraction) {
  TargetThresholds out{};
  for (int p = 0; p < kPropertyCount; ++p) {
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.properties[static_cast<std::size_t>(p)]) v.push_back(*r.properties[static_cast<std::size_t>(p)]);
    if (v.size() < 2) continue;
    const Eigen::Map<const Eigen::VectorXd> m(v.data(), static_cast<Eigen::Index>(v.size()));
    const double sd = std::sqrt(metrics::variance(m));
    out[static_cast<std::size_t>(p)] = (fraction * sd) * (fraction * sd);
  }
  return out;
}

VarianceCheck check_variance_trigger(const Eigen::MatrixXd& predictions, const TargetThresholds& tau,
                                     const AmrConfig& config, std::int64_t t, std::int64_t t_max) {
  VarianceCheck c;
  if (predictions.rows() == 0) return c;
  if (predictions.cols() != kPropertyCount) throw ModelError("window predictions need one column per property");
  c.eligible = phase_of(t, t_max) == Phase::VarianceWindow &&
               static_cast<std::size_t>(predictions.rows()) >= config.min_window;
  double worst_ratio = 0.0;
  for (int p = 0; p < kPropertyCount; ++p) {
    const auto prop = static_cast<Property>(p);
    const auto i = static_cast<std::size_t>(p);
    if (!config.monitors(prop)) continue;
    c.variance[i] = metrics::variance(predictions.col(p));
    if (!c.eligible || !tau[i]) continue;
    if (*c.variance[i] > *tau[i]) {
      c.fired = true;
      const double ratio = *tau[i] > 0 ? *c.variance[i] / *tau[i] : INFINITY;
      if (!c.worst || ratio > worst_ratio) {
        c.worst = prop;
        worst_ratio = ratio;
      }
    }
  }
  return c;
}

VarianceCheck check_variance_trigger(const std::vector<Composition>& window, const GuidanceBundle& bundle,
                                     const TargetThresholds& tau, const AmrConfig& config, std::int64_t t,
                                     std::int64_t t_max) {
  if (window.empty()) return {};
  return check_variance_trigger(bundle.predict_properties(window), tau, config, t, t_max);
}

CorrelationCheck check_correlation_trigger(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                                           const AmrConfig& config, std::int64_t t, std::int64_t t_max) {
  if (rewards.size() != values.size()) throw DataError("reward and value series differ in length");
  CorrelationCheck c;
  if (t_max <= 0 || t < 0 || t > t_max) throw ConfigError("correlation check needs 0 <= t <= T_max");
  c.eligible = 5 * t >= t_max && 5 * t <= 4 * t_max && static_cast<std::size_t>(rewards.size()) >= config.min_window;
  if (!c.eligible) return c;
  c.pearson = metrics::pearson(rewards, values);
  c.undefined = !c.pearson.has_value();
  c.fired = c.undefined || *c.pearson < config.rho_min;
  return c;
}

std::string_view trigger_name(TriggerKind kind) { return kind == TriggerKind::Variance ? "variance" : "correlation"; }

nlohmann::json RefineIteration::to_json() const {
  nlohmann::json j = {{"index", index},       {"prompt_hash", prompt_hash}, {"response", response},
                      {"selected", selected}, {"diagnostic", diagnostic},   {"accepted", accepted}};
  j["cv_r2"] = cv_r2 ? nlohmann::json(*cv_r2) : nlohmann::json(nullptr);
  j["recheck"] = recheck ? nlohmann::json(*recheck) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json RefinementEvent::to_json() const {
  nlohmann::json its = nlohmann::json::array();
  for (const auto& it : iterations) its.push_back(it.to_json());
  return {{"kind", trigger_name(kind)},
          {"t", t},
          {"episode", episode},
          {"window_size", window_size},
          {"window", window},
          {"target", target ? nlohmann::json(*target) : nlohmann::json(nullptr)},
          {"observed", observed ? nlohmann::json(*observed) : nlohmann::json(nullptr)},
          {"threshold", threshold},
          {"baseline_r2", baseline_r2 ? nlohmann::json(*baseline_r2) : nlohmann::json(nullptr)},
          {"version_before", version_before},
          {"version_after", version_after},
          {"accepted", accepted},
          {"iterations", its}};
}

std::function<std::shared_ptr<const GuidanceBundle>(const std::vector<CandidateFeature>&)> regressor_retrainer(
    const std::vector<DatasetRow>& rows, const GuidanceBundle& current, const GuidanceConfig& config) {
  return [&rows, base = current, config](const std::vector<CandidateFeature>& features) {
    auto b = std::make_shared<GuidanceBundle>(base);
    b->features = features;
    b->regressor = train_regressor(rows, features, *b->table, config);
    const auto cv = cross_validate_regressor(rows, features, *b->table, config, config.cv_folds);
    for (std::size_t p = 0; p < kPropertyCount; ++p)
      b->cv_r2[p] = cv.regression[p] ? cv.regression[p]->r2 : std::nullopt;
    b->version = base.version + 1;
    return std::shared_ptr<const GuidanceBundle>(std::move(b));
  };
}

std::function<std::optional<double>(const GuidanceBundle&)> window_variance_recheck(std::vector<Composition> window,
                                                                                    Property target) {
  return [window = std::move(window), target](const GuidanceBundle& b) -> std::optional<double> {
    if (window.empty()) return std::nullopt;
    return metrics::variance(b.predict_properties(window).col(index_of(target)));
  };
}

std::optional<double> gate_score(const GuidanceBundle& bundle, const RefineRequest& request) {
  if (request.kind == TriggerKind::Variance) {
    if (!request.target) throw ConfigError("variance refinement needs a target property");
    return bundle.cv_r2[static_cast<std::size_t>(index_of(*request.target))];
  }
  return bundle.mean_cv_r2();
}

std::vector<std::string> offered_features(const GuidanceBundle& current, const AmrConfig& config) {
  std::vector<std::string> out;
  if (!current.table) return out;
  for (const auto& f : candidate_vocabulary(*current.table)) {
    if (std::find(current.features.begin(), current.features.end(), f) != current.features.end()) continue;
    out.push_back(f.name());
    if (out.size() == config.vocabulary_cap) break;
  }
  return out;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::string window_text(const std::vector<Composition>& window) {
  std::vector<std::string> seen;
  for (auto it = window.rbegin(); it != window.rend() && seen.size() < 5; ++it) {
    auto f = formula(*it);
    if (std::find(seen.begin(), seen.end(), f) == seen.end()) seen.push_back(std::move(f));
  }
  std::string out;
  for (std::size_t i = 0; i < seen.size(); ++i) out += (i ? ", " : "") + seen[i];
  return out.empty() ? "(empty window)" : out;
}

std::string model_status(const GuidanceBundle& b) {
  std::ostringstream os;
  os << "regressor: " << (b.regressor ? b.regressor->kind() : "none") << ", bundle version " << b.version << "\n";
  os << "inputs: 52 element fractions";
  for (const auto& f : b.features) os << ", " << f.name();
  os << "\ncross-validated R2 per target:";
  for (int p = 0; p < kPropertyCount; ++p) {
    const auto& r = b.cv_r2[static_cast<std::size_t>(p)];
    os << " " << kPropertyNames[static_cast<std::size_t>(p)] << "=" << (r ? fmt(*r) : "n/a");
  }
  return os.str();
}

}  // namespace

std::string refine_prompt(const RefineRequest& request, const GuidanceBundle& current, const PromptLibrary& library,
                          const AmrConfig& config) {
  std::string vocab;
  for (const auto& name : offered_features(current, config)) vocab += "- " + name + "\n";
  Bindings b{{"knowledge", config.knowledge.empty() ? "(none supplied)" : config.knowledge},
             {"model_status", model_status(current)},
             {"candidate_features", vocab},
             {"composition", window_text(request.window)}};
  if (request.kind == TriggerKind::Variance) {
    if (!request.target) throw ConfigError("variance refinement needs a target property");
    const auto i = static_cast<std::size_t>(index_of(*request.target));
    b["performance"] = std::string(kPropertyNames[i]) + " (" + std::string(kPropertyUnits[i]) + ")";
    b["pred_var"] = request.observed ? fmt(*request.observed) : "n/a";
    return library.render(PromptKind::VarianceRefine, b);
  }
  b["person_cor"] = request.observed ? fmt(*request.observed) : "undefined";
  return library.render(PromptKind::CorrelationRefine, b);
}

RefineOutcome refine(const RefineRequest& request, std::shared_ptr<const GuidanceBundle> current,
                     const RefineHooks& hooks, const PromptLibrary& library, LlmClient& client,
                     const AmrConfig& config) {
  if (!current) throw ConfigError("refine needs a current bundle");
  if (!hooks.retrain || !hooks.recheck) throw ConfigError("refine needs retrain and recheck hooks");
  config.validate();

  RefineOutcome out;
  auto& ev = out.event;
  ev.kind = request.kind;
  ev.t = request.t;
  ev.episode = request.episode;
  ev.window_size = request.window.size();
  for (const auto& c : request.window) ev.window.push_back(formula(c));
  if (request.target) ev.target = std::string(kPropertyNames[static_cast<std::size_t>(index_of(*request.target))]);
  ev.observed = request.observed;
  ev.threshold = request.kind == TriggerKind::Variance ? request.tau_var : config.rho_min;
  ev.baseline_r2 = gate_score(*current, request);
  ev.version_before = current->version;
  ev.version_after = current->version;
  out.bundle = current;

  const auto offered = offered_features(*current, config);
  const auto prompt = refine_prompt(request, *current, library, config);
  for (int k = 1; k <= config.max_iterations; ++k) {
    RefineIteration it;
    it.index = k;
    it.prompt_hash = hex64(fnv1a(prompt));
    try {
      it.response = client.complete(prompt);
    } catch (const LlmError& e) {
      it.diagnostic = std::string("llm failure: ") + e.what();
      ev.iterations.push_back(std::move(it));
      continue;
    }
    RefineResponse parsed;
    try {
      parsed = parse_refine(it.response);
    } catch (const LlmParseError& e) {
      it.diagnostic = std::string("malformed reply: ") + e.what();
      ev.iterations.push_back(std::move(it));
      continue;
    }
    it.selected = parsed.selected_features;
    std::vector<CandidateFeature> features = current->features;
    for (const auto& name : parsed.selected_features) {
      if (std::find(offered.begin(), offered.end(), name) == offered.end()) {
        it.diagnostic = "unknown or unavailable feature: " + name;
        break;
      }
      const auto f = CandidateFeature::parse(name);
      if (std::find(features.begin(), features.end(), f) == features.end()) features.push_back(f);
    }
    if (!it.diagnostic.empty()) {
      ev.iterations.push_back(std::move(it));
      continue;
    }

    const auto candidate = hooks.retrain(features);
    it.cv_r2 = gate_score(*candidate, request);
    it.recheck = hooks.recheck(*candidate);
    bool cv_ok = false, stat_ok = false;
    if (request.kind == TriggerKind::Variance) {
      cv_ok = it.cv_r2 && (!ev.baseline_r2 || *it.cv_r2 >= *ev.baseline_r2);
      stat_ok = it.recheck && *it.recheck < request.tau_var;
    } else {
      cv_ok = it.cv_r2 && (!ev.baseline_r2 || *it.cv_r2 > *ev.baseline_r2);
      stat_ok = it.recheck && *it.recheck > config.rho_min;
    }
    it.accepted = cv_ok && stat_ok;
    if (!it.accepted) {
      std::ostringstream why;
      if (!cv_ok) why << "cv gate failed";
      if (!stat_ok) why << (cv_ok ? "" : "; ") << (request.kind == TriggerKind::Variance ? "variance" : "correlation")
                        << " recheck failed";
      it.diagnostic = why.str();
    }
    const bool accepted = it.accepted;
    ev.iterations.push_back(std::move(it));
    if (accepted) {
      auto promoted = std::make_shared<GuidanceBundle>(*candidate);
      promoted->version = current->version + 1;
      out.bundle = std::move(promoted);
      ev.accepted = true;
      ev.version_after = out.bundle->version;
      break;
    }
  }
  return out;
}

}  // namespace matdesign
