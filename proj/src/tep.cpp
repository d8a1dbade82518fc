#include "matdesign/tep.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "matdesign/common.hpp"

namespace matdesign {

void TepConfig::validate() const {
  if (!(phi_hi >= 0.0 && phi_hi <= 1.0) || !(phi_lo >= 0.0 && phi_lo <= 1.0))
    throw ConfigError("tep replacement fractions must be in [0, 1]");
  if (!(margin >= 0.0)) throw ConfigError("tep.margin must be non-negative");
  if (histogram_bins < 1) throw ConfigError("tep.histogram_bins must be >= 1");
}

nlohmann::json TepConfig::to_json() const {
  return {{"phi_hi", phi_hi},
          {"phi_lo", phi_lo},
          {"margin", margin},
          {"apply_action_cap", apply_action_cap},
          {"histogram_bins", histogram_bins}};
}

TepConfig TepConfig::from_json(const nlohmann::json& doc) {
  TepConfig c;
  c.phi_hi = doc.value("phi_hi", c.phi_hi);
  c.phi_lo = doc.value("phi_lo", c.phi_lo);
  c.margin = doc.value("margin", c.margin);
  c.apply_action_cap = doc.value("apply_action_cap", c.apply_action_cap);
  c.histogram_bins = doc.value("histogram_bins", c.histogram_bins);
  c.validate();
  return c;
}

std::uint64_t compositions_hash(const std::vector<Composition>& rows) {
  ArchiveWriter w("rows", 1);
  for (const auto& c : rows) w.put(c);
  return fnv1a(w.bytes());
}

std::vector<Composition> deduplicate(const std::vector<Composition>& rows) {
  std::vector<Composition> out;
  for (const auto& c : rows)
    if (std::none_of(out.begin(), out.end(), [&](const Composition& o) { return o == c; })) out.push_back(c);
  return out;
}

ExperiencePool::ExperiencePool(std::vector<Experience> experiences) : experiences_(std::move(experiences)) {
  by_reward_.resize(experiences_.size());
  std::iota(by_reward_.begin(), by_reward_.end(), std::size_t{0});
  std::stable_sort(by_reward_.begin(), by_reward_.end(),
                   [&](std::size_t a, std::size_t b) { return experiences_[a].r < experiences_[b].r; });
  double sum = 0.0;
  for (const auto& e : experiences_) sum += e.r;
  mean_ = experiences_.empty() ? 0.0 : sum / static_cast<double>(experiences_.size());
}

ExperiencePool ExperiencePool::build(const std::vector<Composition>& compositions, Predictor& predictor,
                                     const std::vector<Composition>& database, const RewardConfig& reward,
                                     const EnvironmentConfig& env, const TepConfig& config) {
  const auto rows = deduplicate(compositions);
  if (rows.size() < 2) throw DataError("experience pool needs at least two distinct compositions");
  std::vector<Prediction> preds;
  preds.reserve(rows.size());
  for (const auto& c : rows) preds.push_back(predictor.predict(c));

  EpisodeContext ctx;
  ctx.t_ep = env.episode_steps;
  ctx.k = (env.episode_steps + 1) / 2;
  ctx.t = 0;
  ctx.t_max = 1;

  std::vector<Experience> out;
  out.reserve(rows.size() * (rows.size() - 1));
  std::size_t illegal = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (i == j) continue;
      Experience e;
      e.s = rows[i];
      e.s_next = rows[j];
      e.a = rows[j] - rows[i];
      e.source = ExperienceSource::Tep;
      const bool legal = !config.apply_action_cap || e.a.cwiseAbs().maxCoeff() <= env.delta_max;
      VisitCounter visits(reward.grid);
      const auto b = compose_reward(preds[i], legal, rows[j], legal ? std::optional(preds[j]) : std::nullopt, ctx,
                                    database, visits, reward, nullptr);
      e.r = b.total;
      e.done = b.done;
      illegal += legal ? 0 : 1;
      out.push_back(std::move(e));
    }
  }
  ExperiencePool pool(std::move(out));
  pool.illegal_ = illegal;
  return pool;
}

std::vector<std::size_t> ExperiencePool::above(double threshold) const {
  const auto it = std::upper_bound(by_reward_.begin(), by_reward_.end(), threshold,
                                   [&](double t, std::size_t idx) { return t < experiences_[idx].r; });
  return {it, by_reward_.end()};
}

void ExperiencePool::save(const std::filesystem::path& path, const PoolKey& key) const {
  ArchiveWriter w("matdesign.tep", kArchiveVersion);
  w.put(key.dataset_hash);
  w.put(key.bundle_version);
  w.put(key.config_hash);
  w.put<std::uint64_t>(illegal_);
  w.put<std::uint64_t>(experiences_.size());
  for (const auto& e : experiences_) e.write(w);
  w.save(path);
}

std::optional<ExperiencePool> ExperiencePool::load_if_matching(const std::filesystem::path& path, const PoolKey& key) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  auto in = ArchiveReader::open(path, "matdesign.tep", kArchiveVersion);
  PoolKey stored;
  stored.dataset_hash = in.get<std::uint64_t>();
  stored.bundle_version = in.get<std::uint64_t>();
  stored.config_hash = in.get<std::uint64_t>();
  if (!(stored == key)) return std::nullopt;
  const auto illegal = in.get_size();
  std::vector<Experience> items(in.get_size());
  for (auto& e : items) e = Experience::read(in);
  ExperiencePool pool(std::move(items));
  pool.illegal_ = illegal;
  return pool;
}

ReplacementReport replace_with_pool(TrainingBatch& batch, const ExperiencePool& pool, double episode_mean_reward,
                                    const TepConfig& config, std::mt19937_64& rng) {
  ReplacementReport rep;
  if (batch.items.empty() || pool.empty()) return rep;
  rep.lagging = episode_mean_reward < pool.mean_reward();
  rep.fraction = rep.lagging ? config.phi_hi : config.phi_lo;
  const auto n = static_cast<std::size_t>(std::lround(rep.fraction * static_cast<double>(batch.size())));
  if (n == 0) return rep;
  const auto candidates = pool.above(pool.mean_reward() + config.margin);
  if (candidates.empty()) {
    warn("experience pool has no entry above mean + margin; replacement skipped");
    rep.skipped = true;
    return rep;
  }
  std::vector<std::size_t> slots(batch.size());
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  for (std::size_t q = 0; q < n; ++q) {
    std::uniform_int_distribution<std::size_t> pick(q, slots.size() - 1);
    std::swap(slots[q], slots[pick(rng)]);
  }
  std::uniform_int_distribution<std::size_t> draw(0, candidates.size() - 1);
  if (batch.buffer_index.size() != batch.size()) batch.buffer_index.assign(batch.size(), -1);
  if (batch.weights.size() != static_cast<Eigen::Index>(batch.size()))
    batch.weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t q = 0; q < n; ++q) {
    const auto slot = slots[q];
    batch.items[slot] = pool.experiences()[candidates[draw(rng)]];
    batch.buffer_index[slot] = -1;
    batch.weights[static_cast<Eigen::Index>(slot)] = 1.0;
  }
  rep.replaced = n;
  return rep;
}

nlohmann::json PoolStats::to_json() const {
  nlohmann::json q = nlohmann::json::object();
  for (const auto& [p, v] : quantiles) q[std::to_string(p)] = v;
  return {{"size", size},           {"illegal", illegal}, {"mean", mean}, {"lo", lo}, {"hi", hi},
          {"histogram", histogram}, {"quantiles", q},     {"fraction_in_band", fraction_in_band}};
}

PoolStats pool_stats(const ExperiencePool& pool, int bins) {
  if (pool.empty()) throw DataError("statistics of an empty experience pool");
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  PoolStats s;
  s.size = pool.size();
  s.illegal = pool.illegal_count();
  s.mean = pool.mean_reward();
  s.histogram.assign(static_cast<std::size_t>(bins), 0);
  std::vector<double> values;
  values.reserve(pool.size());
  std::size_t band = 0;
  const double width = (s.hi - s.lo) / bins;
  for (const auto& e : pool.experiences()) {
    values.push_back(e.r);
    const auto bin = static_cast<long>(std::floor((e.r - s.lo) / width));
    s.histogram[static_cast<std::size_t>(std::clamp(bin, 0L, static_cast<long>(bins) - 1))]++;
    band += (e.r >= 0.4 && e.r <= 0.6) ? 1 : 0;
  }
  s.fraction_in_band = static_cast<double>(band) / static_cast<double>(pool.size());
  for (double p : {0.05, 0.25, 0.5, 0.75, 0.95}) s.quantiles.emplace_back(p, percentile(values, p));
  return s;
}

}  // namespace matdesign
