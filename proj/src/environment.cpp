#include "matdesign/environment.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "matdesign/common.hpp"

namespace matdesign {

bool ExplorationBase::allows(int element) const {
  return std::binary_search(allowed.begin(), allowed.end(), element);
}

Eigen::Matrix<double, kElementCount, 1> ExplorationBase::mask() const {
  Eigen::Matrix<double, kElementCount, 1> m = Eigen::Matrix<double, kElementCount, 1>::Zero();
  for (int e : allowed) m[e] = 1.0;
  return m;
}

nlohmann::json ExplorationBase::to_json() const {
  nlohmann::json ranges = nlohmann::json::object();
  for (int e : allowed) ranges[std::string(kElementSymbols[static_cast<std::size_t>(e)])] = {lo[e], hi[e]};
  return {{"base", symbol()}, {"support", support}, {"ranges", ranges}};
}

ExplorationBase ExplorationBase::from_json(const nlohmann::json& doc) {
  ExplorationBase b;
  const auto base = element_index(doc.at("base").get<std::string>());
  if (!base) throw ConfigError("unknown base element " + doc.at("base").get<std::string>());
  b.base = *base;
  b.support = doc.value("support", std::size_t{0});
  for (const auto& [sym, range] : doc.at("ranges").items()) {
    const auto e = element_index(sym);
    if (!e) throw ConfigError("unknown element " + sym + " in base manifest");
    b.allowed.push_back(*e);
    b.lo[*e] = range.at(0).get<double>();
    b.hi[*e] = range.at(1).get<double>();
    if (!(0.0 <= b.lo[*e] && b.lo[*e] <= b.hi[*e] && b.hi[*e] <= 100.0))
      throw ConfigError("invalid range for " + sym + " in base manifest");
  }
  std::sort(b.allowed.begin(), b.allowed.end());
  if (!b.allows(b.base)) throw ConfigError("base element missing from its own allowed set");
  return b;
}

std::vector<ExplorationBase> derive_bases(const std::vector<Composition>& rows, int count) {
  if (count < 1) throw ConfigError("base count must be positive");
  std::map<int, std::vector<const Composition*>> by_base;
  for (const auto& c : rows) {
    Eigen::Index arg = 0;
    c.maxCoeff(&arg);
    by_base[static_cast<int>(arg)].push_back(&c);
  }
  std::vector<std::pair<int, std::size_t>> freq;
  for (const auto& [e, v] : by_base) freq.emplace_back(e, v.size());
  std::stable_sort(freq.begin(), freq.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (static_cast<std::size_t>(count) > freq.size()) {
    warn("requested " + std::to_string(count) + " exploration bases but only " + std::to_string(freq.size()) +
         " elements dominate a row; using " + std::to_string(freq.size()));
    count = static_cast<int>(freq.size());
  }

  std::vector<ExplorationBase> out;
  for (int i = 0; i < count; ++i) {
    ExplorationBase b;
    b.base = freq[static_cast<std::size_t>(i)].first;
    const auto& members = by_base[b.base];
    b.support = members.size();
    Composition seen = Composition::Zero();
    for (const auto* c : members) seen += (c->array() > 0.0).cast<double>().matrix();
    b.lo.setConstant(0.0);
    b.hi.setConstant(0.0);
    for (int e = 0; e < kElementCount; ++e) {
      if (seen[e] == 0.0) continue;
      b.allowed.push_back(e);
      double lo = 100.0, hi = 0.0;
      for (const auto* c : members) {
        lo = std::min(lo, (*c)[e]);
        hi = std::max(hi, (*c)[e]);
      }
      b.lo[e] = lo;
      b.hi[e] = hi;
    }
    out.push_back(std::move(b));
  }
  return out;
}

nlohmann::json bases_manifest(const std::vector<ExplorationBase>& bases) {
  nlohmann::json doc;
  doc["schema_version"] = 1;
  doc["unit"] = "at.%";
  doc["bases"] = nlohmann::json::array();
  for (const auto& b : bases) doc["bases"].push_back(b.to_json());
  return doc;
}

std::vector<ExplorationBase> bases_from_manifest(const nlohmann::json& doc) {
  if (doc.value("schema_version", 0) != 1) throw ConfigError("base manifest has unsupported schema_version");
  std::vector<ExplorationBase> out;
  for (const auto& b : doc.at("bases")) out.push_back(ExplorationBase::from_json(b));
  return out;
}

void EnvironmentConfig::validate() const {
  if (!(delta_max > 0.0 && delta_max <= 100.0)) throw ConfigError("environment.delta_max must be in (0, 100]");
  if (episode_steps < 2) throw ConfigError("environment.episode_steps must be >= 2");
}

Composition reset_state(const ExplorationBase& base, std::mt19937_64& rng) {
  if (base.allowed.empty() || base.hi.maxCoeff() <= 0.0)
    throw DataError("exploration base " + base.symbol() + " has infeasible (all-zero) ranges");
  Composition c = Composition::Zero();
  for (int e : base.allowed) {
    std::uniform_real_distribution<double> u(base.lo[e], base.hi[e]);
    c[e] = base.lo[e] == base.hi[e] ? base.lo[e] : u(rng);
  }
  if (!(c.sum() > 0.0)) throw DataError("exploration base " + base.symbol() + " produced an empty draw");
  return renormalized(c);
}

Composition project_action(const Composition& raw, const ExplorationBase& base, double delta_max) {
  const Composition m = base.mask();
  Composition d = raw.cwiseProduct(m).cwiseMax(-delta_max).cwiseMin(delta_max);
  const double active = m.sum();
  if (active > 0.0) d -= m * (d.sum() / active);
  const double peak = d.cwiseAbs().maxCoeff();
  if (peak > delta_max) d *= delta_max / peak;
  return d;
}

StepResult step(const Composition& s, const Composition& raw_action, const ExplorationBase& base,
                const EnvironmentConfig& config) {
  StepResult r;
  r.next = s;
  const Composition masked = raw_action.cwiseProduct(base.mask());
  if (!masked.allFinite()) throw ModelError("non-finite action");
  r.cap_exceeded = masked.cwiseAbs().maxCoeff() > config.delta_max * (1.0 + 1e-12);
  r.delta = project_action(raw_action, base, config.delta_max);
  if (r.cap_exceeded) {
    r.legal = false;
    return r;
  }
  Composition next = s + r.delta;
  constexpr double kSlack = 1e-9;  // round-off allowance at the box edges
  if ((next.array() < -kSlack).any() || (next.array() > 100.0 + kSlack).any()) {
    r.legal = false;
    return r;
  }
  next = next.cwiseMax(0.0).cwiseMin(100.0);
  r.next = next;
  return r;
}

Termination is_terminal(bool completed_design, const EpisodeContext& ctx) {
  Termination t;
  t.terminal = completed_design || ctx.k >= ctx.t_ep;
  t.truncated = !completed_design && ctx.k >= ctx.t_ep;
  return t;
}

}  // namespace matdesign
