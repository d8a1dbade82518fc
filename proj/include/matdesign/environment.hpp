#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "matdesign/elements.hpp"

namespace matdesign {

/// Dominant element plus the co-elements seen with it and their observed
/// atomic-percent ranges. Entries outside `allowed` are zero in lo/hi.
struct ExplorationBase {
  int base = 0;
  std::vector<int> allowed;  // sorted canonical indices, includes `base`
  Composition lo = Composition::Zero();
  Composition hi = Composition::Zero();
  std::size_t support = 0;  // rows the ranges were taken from

  std::string symbol() const { return std::string(kElementSymbols[static_cast<std::size_t>(base)]); }
  bool allows(int element) const;
  Eigen::Matrix<double, kElementCount, 1> mask() const;

  nlohmann::json to_json() const;
  static ExplorationBase from_json(const nlohmann::json& doc);
};

/// Bases are the `count` elements most often the max-fraction element of a
/// row (ties broken by canonical order). Ranges come from the rows where the
/// base dominates; an element absent from such a row contributes 0 to its min.
std::vector<ExplorationBase> derive_bases(const std::vector<Composition>& rows, int count);

nlohmann::json bases_manifest(const std::vector<ExplorationBase>& bases);
std::vector<ExplorationBase> bases_from_manifest(const nlohmann::json& doc);

struct EnvironmentConfig {
  double delta_max = 5.0;  // at.% per element per step
  int episode_steps = 128;

  void validate() const;
};

struct EpisodeContext {
  int k = 1;          // 1-based step within the episode
  int t_ep = 128;     // episode cap
  std::int64_t t = 0;      // global step
  std::int64_t t_max = 1;  // global cap
};

struct StepResult {
  bool legal = true;
  bool cap_exceeded = false;  // the raw action broke the per-element cap
  Composition next = Composition::Zero();   // equals the input state when illegal
  Composition delta = Composition::Zero();  // projected action
};

/// Draws each allowed element uniformly within its range, then renormalizes.
Composition reset_state(const ExplorationBase& base, std::mt19937_64& rng);

/// Mask to the base, clip to +-delta_max, subtract the mean over the allowed
/// elements; if that shift pushed an entry past the cap, scale the whole
/// delta down (keeps the zero sum).
Composition project_action(const Composition& raw, const ExplorationBase& base, double delta_max);

/// One environment transition. Illegal iff the masked raw action exceeds the
/// cap or the resulting state leaves [0, 100]; illegal steps keep the state.
StepResult step(const Composition& s, const Composition& raw_action, const ExplorationBase& base,
                const EnvironmentConfig& config);

struct Termination {
  bool terminal = false;   // episode ends
  bool truncated = false;  // ended by the step cap rather than a completed design
};

Termination is_terminal(bool completed_design, const EpisodeContext& ctx);

}  // namespace matdesign
