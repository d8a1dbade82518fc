#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "matdesign/experience.hpp"
#include "matdesign/reward.hpp"

namespace matdesign {

struct TepConfig {
  double phi_hi = 0.25;  // replaced fraction when the episode lags the pool mean
  double phi_lo = 0.05;  // replaced fraction otherwise
  double margin = 0.2;   // pool entries must beat the pool mean by this much
  /// When true, pairs whose difference exceeds the per-step cap get the
  /// illegal reward. Off by default: a pair difference is not one step.
  bool apply_action_cap = false;
  int histogram_bins = 25;

  void validate() const;
  nlohmann::json to_json() const;
  static TepConfig from_json(const nlohmann::json& doc);
};

/// Identifies the inputs a pool was built from; a stored pool is reused only
/// when every field matches.
struct PoolKey {
  std::uint64_t dataset_hash = 0;
  std::uint64_t bundle_version = 0;
  std::uint64_t config_hash = 0;

  friend bool operator==(const PoolKey&, const PoolKey&) = default;
};

std::uint64_t compositions_hash(const std::vector<Composition>& rows);

/// Drops exact duplicates, keeping first occurrences in order.
std::vector<Composition> deduplicate(const std::vector<Composition>& rows);

class ExperiencePool {
 public:
  static constexpr std::uint32_t kArchiveVersion = 1;

  ExperiencePool() = default;
  explicit ExperiencePool(std::vector<Experience> experiences);

  /// Every ordered pair (s1, s2) of distinct deduplicated compositions gives
  /// a = s2 - s1 rewarded at k = ceil(T_ep / 2). Each composition is queried
  /// once; visit counts start fresh for every pair so pairs are independent.
  static ExperiencePool build(const std::vector<Composition>& compositions, Predictor& predictor,
                              const std::vector<Composition>& database, const RewardConfig& reward,
                              const EnvironmentConfig& env, const TepConfig& config);

  const std::vector<Experience>& experiences() const { return experiences_; }
  std::size_t size() const { return experiences_.size(); }
  bool empty() const { return experiences_.empty(); }
  double mean_reward() const { return mean_; }
  /// Pairs rewarded through the illegal branch.
  std::size_t illegal_count() const { return illegal_; }
  /// Indices of entries with r > threshold (ascending reward).
  std::vector<std::size_t> above(double threshold) const;

  void save(const std::filesystem::path& path, const PoolKey& key) const;
  /// Loads a stored pool if its key matches, otherwise nullopt.
  static std::optional<ExperiencePool> load_if_matching(const std::filesystem::path& path, const PoolKey& key);

 private:
  std::vector<Experience> experiences_;
  std::vector<std::size_t> by_reward_;
  double mean_ = 0.0;
  std::size_t illegal_ = 0;
};

struct ReplacementReport {
  std::size_t replaced = 0;
  double fraction = 0.0;
  bool lagging = false;  // rho_ep < pool mean
  bool skipped = false;  // no qualifying entries
};

/// Replaces round(phi * |batch|) uniformly chosen batch slots with pool
/// entries whose reward exceeds mean + margin; phi is phi_hi when the
/// episode mean reward lags the pool mean, phi_lo otherwise.
ReplacementReport replace_with_pool(TrainingBatch& batch, const ExperiencePool& pool, double episode_mean_reward,
                                    const TepConfig& config, std::mt19937_64& rng);

struct PoolStats {
  double mean = 0.0;
  double lo = -1.0, hi = 1.5;
  std::vector<std::size_t> histogram;  // values outside [lo, hi] land in the end bins
  std::vector<std::pair<double, double>> quantiles;
  double fraction_in_band = 0.0;  // share of rewards in [0.4, 0.6]
  std::size_t size = 0;
  std::size_t illegal = 0;

  nlohmann::json to_json() const;
};

PoolStats pool_stats(const ExperiencePool& pool, int bins = 25);

}  // namespace matdesign
