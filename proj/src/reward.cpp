#include "matdesign/reward.hpp"

#include <cmath>
#include <stdexcept>

#include "matdesign/common.hpp"

namespace matdesign {
namespace {

using nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& doc, const char* key) {
  if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
  return doc[key].get<double>();
}

bool active(const RewardConfig& config, int p) {
  return config.thresholds.tau[static_cast<std::size_t>(p)].has_value() &&
         config.thresholds.weight[static_cast<std::size_t>(p)] > 0.0;
}

}  // namespace

void RewardConfig::validate() const {
  thresholds.validate();
  if (!(alpha > 0.0)) throw ConfigError("reward.alpha must be positive");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("reward.beta must be in [0, 1]");
  if (!(cls_gate >= 0.0 && cls_gate <= 1.0)) throw ConfigError("reward.cls_gate must be in [0, 1]");
  if (!(kbr_phase_gate >= 0.0 && kbr_phase_gate <= 1.0)) throw ConfigError("reward.kbr_phase_gate must be in [0, 1]");
  if (!(match_tolerance >= 0.0)) throw ConfigError("reward.match_tolerance must be non-negative");
  if (!(grid > 0.0)) throw ConfigError("reward.grid must be positive");
}

json RewardConfig::to_json() const {
  json dir = json::object();
  for (int p = 0; p < kPropertyCount; ++p)
    dir[std::string(kPropertyNames[static_cast<std::size_t>(p)])] =
        higher_is_better[static_cast<std::size_t>(p)] ? "higher" : "lower";
  return {{"alpha", alpha},
          {"beta", beta},
          {"cls_gate", cls_gate},
          {"kbr_phase_gate", kbr_phase_gate},
          {"match_tolerance", match_tolerance},
          {"grid", grid},
          {"require_tg_tl_ratio", require_tg_tl_ratio},
          {"direction", dir}};
}

RewardConfig RewardConfig::from_json(const json& doc, ThresholdSet thresholds) {
  RewardConfig c;
  c.thresholds = std::move(thresholds);
  c.alpha = doc.value("alpha", c.alpha);
  c.beta = doc.value("beta", c.beta);
  c.cls_gate = doc.value("cls_gate", c.cls_gate);
  c.kbr_phase_gate = doc.value("kbr_phase_gate", c.kbr_phase_gate);
  c.match_tolerance = doc.value("match_tolerance", c.match_tolerance);
  c.grid = doc.value("grid", c.grid);
  c.require_tg_tl_ratio = doc.value("require_tg_tl_ratio", c.require_tg_tl_ratio);
  if (doc.contains("direction")) {
    for (const auto& [name, dir] : doc["direction"].items()) {
      const auto p = property_from_name(name);
      if (!p) throw ConfigError("reward.direction names unknown property " + name);
      const auto d = dir.get<std::string>();
      if (d != "higher" && d != "lower") throw ConfigError("reward.direction must be 'higher' or 'lower'");
      c.higher_is_better[static_cast<std::size_t>(index_of(*p))] = d == "higher";
    }
  }
  c.validate();
  return c;
}

json RewardBreakdown::to_json() const {
  return {{"legal", legal},
          {"r_illegal", opt(r_illegal)},
          {"r_cls", opt(r_cls)},
          {"r_i", opt(r_i)},
          {"r_t", opt(r_t)},
          {"r_done", opt(r_done)},
          {"r_llm", opt(r_llm)},
          {"cls_prob", opt(cls_prob)},
          {"regression_branch", regression_branch},
          {"thresholds_met", thresholds_met},
          {"kbr_gate", kbr_gate},
          {"kbr_applied", kbr_applied},
          {"novelty", novelty},
          {"done", done},
          {"visits", visits ? json(*visits) : json(nullptr)},
          {"pre_blend", pre_blend},
          {"total", total},
          {"flags", flags}};
}

RewardBreakdown RewardBreakdown::from_json(const json& doc) {
  RewardBreakdown b;
  b.legal = doc.at("legal").get<bool>();
  b.r_illegal = opt_from(doc, "r_illegal");
  b.r_cls = opt_from(doc, "r_cls");
  b.r_i = opt_from(doc, "r_i");
  b.r_t = opt_from(doc, "r_t");
  b.r_done = opt_from(doc, "r_done");
  b.r_llm = opt_from(doc, "r_llm");
  b.cls_prob = opt_from(doc, "cls_prob");
  b.regression_branch = doc.value("regression_branch", false);
  b.thresholds_met = doc.value("thresholds_met", false);
  b.kbr_gate = doc.value("kbr_gate", false);
  b.kbr_applied = doc.value("kbr_applied", false);
  b.novelty = doc.value("novelty", false);
  b.done = doc.value("done", false);
  if (doc.contains("visits") && !doc["visits"].is_null()) b.visits = doc["visits"].get<std::uint64_t>();
  b.pre_blend = doc.at("pre_blend").get<double>();
  b.total = doc.at("total").get<double>();
  b.flags = doc.value("flags", std::vector<std::string>{});
  return b;
}

VisitCounter::VisitCounter(const VisitCounter& other) : grid_(other.grid_) {
  std::lock_guard lock(other.mutex_);
  counts_ = other.counts_;
}

VisitCounter& VisitCounter::operator=(const VisitCounter& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  grid_ = other.grid_;
  counts_ = other.counts_;
  return *this;
}

VisitCounter::Key VisitCounter::key_of(const Composition& c) const {
  Key k(kElementCount);
  for (int i = 0; i < kElementCount; ++i) k[static_cast<std::size_t>(i)] = std::llround(c[i] / grid_);
  return k;
}

std::uint64_t VisitCounter::increment(const Composition& c) {
  const auto k = key_of(c);
  std::lock_guard lock(mutex_);
  return ++counts_[k];
}

std::uint64_t VisitCounter::count(const Composition& c) const {
  const auto k = key_of(c);
  std::lock_guard lock(mutex_);
  const auto it = counts_.find(k);
  return it == counts_.end() ? 0 : it->second;
}

std::size_t VisitCounter::distinct() const {
  std::lock_guard lock(mutex_);
  return counts_.size();
}

void VisitCounter::write(ArchiveWriter& out) const {
  std::lock_guard lock(mutex_);
  out.put(grid_);
  out.put<std::uint64_t>(counts_.size());
  for (const auto& [k, n] : counts_) {
    out.put(k);
    out.put(n);
  }
}

VisitCounter VisitCounter::read(ArchiveReader& in) {
  VisitCounter v(in.get<double>());
  const auto n = in.get_size();
  for (std::size_t i = 0; i < n; ++i) {
    Key k(in.get_size());
    for (auto& x : k) x = in.get<std::int64_t>();
    v.counts_[k] = in.get<std::uint64_t>();
  }
  return v;
}

std::uint64_t VisitCounter::fingerprint() const {
  ArchiveWriter w("visits", 1);
  write(w);
  return fnv1a(w.bytes());
}

double illegal_reward(int k, int t_ep) {
  if (t_ep < 2) throw std::invalid_argument("illegal_reward: T_ep must be >= 2");
  if (k < 1 || k > t_ep) throw std::invalid_argument("illegal_reward: k must be in [1, T_ep]");
  return std::log(static_cast<double>(k)) / (2.0 * std::log(static_cast<double>(t_ep))) - 1.0;
}

double classification_reward(double p) { return p - 0.5; }

RegressionTerms regression_reward(const std::array<double, kPropertyCount>& before,
                                  const std::array<double, kPropertyCount>& after, const RewardConfig& config) {
  RegressionTerms out;
  for (int p = 0; p < kPropertyCount; ++p) {
    if (!active(config, p)) continue;
    const auto i = static_cast<std::size_t>(p);
    const double w = config.thresholds.weight[i];
    const double tau = *config.thresholds.tau[i];
    double denom = std::max(tau, before[i]);
    if (denom <= 0.0) {
      denom = 1e-9;
      out.floored = true;
    }
    const bool higher = config.higher_is_better[i];
    const double change = higher ? after[i] - before[i] : before[i] - after[i];
    out.r_i += w * std::tanh(change / denom);
    out.r_t += w * ((higher ? after[i] >= tau : after[i] <= tau) ? 1.0 : 0.0);
  }
  return out;
}

bool thresholds_met(const std::array<double, kPropertyCount>& props, const RewardConfig& config) {
  for (int p = 0; p < kPropertyCount; ++p) {
    if (!active(config, p)) continue;
    const auto i = static_cast<std::size_t>(p);
    const double tau = *config.thresholds.tau[i];
    if (config.higher_is_better[i] ? props[i] < tau : props[i] > tau) return false;
  }
  if (config.require_tg_tl_ratio && config.thresholds.tg_tl_ratio) {
    const double tl = props[static_cast<std::size_t>(index_of(Property::Tl))];
    if (!(tl > 0.0)) return false;
    if (props[static_cast<std::size_t>(index_of(Property::Tg))] / tl < *config.thresholds.tg_tl_ratio) return false;
  }
  return true;
}

bool in_database(const Composition& c, const std::vector<Composition>& database, double tolerance) {
  for (const auto& d : database)
    if (max_norm_distance(c, d) <= tolerance) return true;
  return false;
}

DoneTerms done_reward(const Composition& next, const std::vector<Composition>& database, VisitCounter& visits,
                      int t_ep, const RewardConfig& config) {
  DoneTerms out;
  out.visits = visits.increment(next);
  if (!in_database(next, database, config.match_tolerance)) {
    out.novelty = true;
    out.r_done = 1.0;
  } else {
    out.r_done = config.alpha * std::sqrt(2.0 * std::log(static_cast<double>(t_ep)) / static_cast<double>(out.visits));
  }
  return out;
}

BlendResult blend_kbr(double r_base, double r_llm, double beta) {
  BlendResult out;
  if (r_llm < -1.0 || r_llm > 1.0) {
    out.clamped = true;
    r_llm = std::clamp(r_llm, -1.0, 1.0);
  }
  out.value = (1.0 - beta) * r_base + beta * r_llm;
  return out;
}

bool kbr_gate(std::int64_t t, std::int64_t t_max, double cls_prob, const RewardConfig& config) {
  return static_cast<double>(t) >= config.kbr_phase_gate * static_cast<double>(t_max) && cls_prob > config.cls_gate;
}

BundlePredictor::BundlePredictor(std::shared_ptr<const GuidanceBundle> bundle, std::optional<std::uint64_t> budget)
    : bundle_(std::move(bundle)), budget_(budget) {
  if (!bundle_) throw ModelError("predictor needs a guidance bundle");
}

Prediction BundlePredictor::predict(const Composition& c) {
  if (budget_) {
    auto used = calls_.load();
    do {
      if (used >= *budget_) throw BudgetExhausted();
    } while (!calls_.compare_exchange_weak(used, used + 1));
  } else {
    ++calls_;
  }
  return bundle()->predict(c);
}

std::uint64_t BundlePredictor::bundle_version() const { return bundle()->version; }

std::optional<std::uint64_t> BundlePredictor::remaining() const {
  if (!budget_) return std::nullopt;
  return *budget_ - std::min(*budget_, calls_.load());
}

void BundlePredictor::swap_bundle(std::shared_ptr<const GuidanceBundle> bundle) {
  if (!bundle) throw ModelError("cannot swap in an empty bundle");
  std::lock_guard lock(mutex_);
  bundle_ = std::move(bundle);
}

std::shared_ptr<const GuidanceBundle> BundlePredictor::bundle() const {
  std::lock_guard lock(mutex_);
  return bundle_;
}

RewardBreakdown compose_reward(const Prediction& before, bool legal, const Composition& next,
                               const std::optional<Prediction>& after, const EpisodeContext& ctx,
                               const std::vector<Composition>& database, VisitCounter& visits,
                               const RewardConfig& config, const KbrScorer* kbr) {
  RewardBreakdown b;
  b.legal = legal;
  if (!legal) {
    b.r_illegal = illegal_reward(ctx.k, ctx.t_ep);
    b.pre_blend = b.total = *b.r_illegal;
    return b;
  }
  if (!after) throw ModelError("legal step evaluated without a prediction");
  const double p = after->cls_prob;
  b.cls_prob = p;
  b.r_cls = classification_reward(p);
  double total = *b.r_cls;
  if (p > 0.5) {
    b.regression_branch = true;
    const auto terms = regression_reward(before.props, after->props, config);
    b.r_i = terms.r_i;
    b.r_t = terms.r_t;
    if (terms.floored) b.flags.emplace_back("denominator_floor");
    total += terms.r_i + terms.r_t;
    if (thresholds_met(after->props, config)) {
      b.thresholds_met = true;
      const auto d = done_reward(next, database, visits, ctx.t_ep, config);
      b.r_done = d.r_done;
      b.novelty = d.novelty;
      b.visits = d.visits;
      b.done = d.novelty;
      total += d.r_done;
    }
  }
  b.pre_blend = total;
  b.total = total;
  b.kbr_gate = kbr_gate(ctx.t, ctx.t_max, p, config);
  if (b.kbr_gate && kbr && *kbr) {
    const auto r_llm = (*kbr)(next, *after);
    if (r_llm) {
      const auto blended = blend_kbr(total, *r_llm, config.beta);
      b.r_llm = std::clamp(*r_llm, -1.0, 1.0);
      if (blended.clamped) b.flags.emplace_back("r_llm_clamped");
      b.total = blended.value;
      b.kbr_applied = true;
    } else {
      b.flags.emplace_back("kbr_unavailable");
    }
  }
  return b;
}

StepEvaluation evaluate_reward(const Prediction& before, const StepResult& transition, const EpisodeContext& ctx,
                               Predictor& predictor, const std::vector<Composition>& database, VisitCounter& visits,
                               const RewardConfig& config, const KbrScorer* kbr) {
  StepEvaluation out;
  if (transition.legal) out.next_prediction = predictor.predict(transition.next);
  out.breakdown = compose_reward(before, transition.legal, transition.next, out.next_prediction, ctx, database, visits,
                                 config, kbr);
  return out;
}

}  // namespace matdesign
