#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "matdesign/experience.hpp"
#include "matdesign/nn.hpp"

namespace matdesign {

/// Binary sum tree over `capacity` leaves; supports prefix-sum lookup.
class SumTree {
 public:
  explicit SumTree(std::size_t capacity = 1);

  void set(std::size_t leaf, double value);
  double get(std::size_t leaf) const { return nodes_[base_ + leaf]; }
  double total() const { return nodes_[1]; }
  std::size_t capacity() const { return capacity_; }
  /// Leaf whose cumulative range contains `prefix` (0 <= prefix < total).
  std::size_t find(double prefix) const;

 private:
  std::size_t capacity_ = 1, base_ = 1;
  std::vector<double> nodes_;
};

struct ReplayConfig {
  std::size_t capacity = 100000;
  double alpha = 0.6;           // priority exponent
  double beta = 0.4;            // importance-sampling exponent
  double priority_eps = 1e-3;   // added to |td| so no entry starves

  void validate() const;
};

/// Prioritized replay (proportional variant). New entries get the current
/// maximum priority. Insertion is thread-safe; sampling and priority updates
/// take the same lock.
class PrioritizedReplay {
 public:
  explicit PrioritizedReplay(ReplayConfig config = {});
  PrioritizedReplay(PrioritizedReplay&& other) noexcept;
  PrioritizedReplay& operator=(PrioritizedReplay&& other) noexcept;

  void add(Experience e);
  std::size_t size() const;
  const ReplayConfig& config() const { return config_; }

  /// Stratified proportional sampling. Weights are (N P(i))^-beta divided by
  /// the batch maximum.
  TrainingBatch sample(std::size_t batch_size, std::mt19937_64& rng) const;
  /// p_i <- (|td_i| + eps)^alpha for entries with buffer_index >= 0.
  void update_priorities(const std::vector<std::int64_t>& indices, const Eigen::VectorXd& td_errors);
  double priority(std::size_t index) const;
  const Experience& at(std::size_t index) const { return items_.at(index); }

  void write(ArchiveWriter& out) const;
  static PrioritizedReplay read(ArchiveReader& in);

 private:
  ReplayConfig config_;
  std::vector<Experience> items_;
  SumTree tree_;
  std::size_t next_ = 0;
  double max_priority_ = 1.0;
  mutable std::mutex mutex_;
};

struct Td3Config {
  int state_dim = kElementCount;
  int action_dim = kElementCount;
  std::vector<int> hidden{256, 256};
  double gamma = 0.99;
  double tau = 0.005;            // Polyak rate for target networks
  int policy_delay = 2;
  double action_bound = 5.0;     // actor output is tanh * bound
  double state_scale = 0.01;     // network sees s * scale
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double target_noise = 0.2;     // fraction of action_bound
  double noise_clip = 0.5;       // fraction of action_bound
  double exploration_noise = 0.5;  // absolute std of behaviour noise
  bool zero_init_critic_output = false;
  /// Actor output layer drawn from +-this so early actions stay small; 0
  /// keeps the fan-in rule.
  double actor_output_init = 3e-3;
  /// Weight of mean squared pre-tanh actor output in the actor loss. Keeps the
  /// policy off the flat part of tanh, where it cannot move back.
  double preactivation_penalty = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static Td3Config from_json(const nlohmann::json& doc);
};

/// Dense view of a batch: one column per transition.
struct BatchMatrices {
  Eigen::MatrixXd s, a, s_next;
  Eigen::VectorXd r, done, weights;

  static BatchMatrices from(const TrainingBatch& batch);
};

struct UpdateReport {
  double critic_loss = 0.0;                 // weighted MSE of critic 1 before the step
  std::optional<double> actor_loss;         // set on delayed policy steps
  Eigen::VectorXd td_errors;                // Q1(s, a) - y per item
};

/// Twin-delayed deterministic policy gradient learner.
class Td3Agent {
 public:
  static constexpr std::uint32_t kArchiveVersion = 1;

  explicit Td3Agent(Td3Config config);

  const Td3Config& config() const { return config_; }

  /// Deterministic action pi(s).
  Eigen::VectorXd policy(const Eigen::VectorXd& state) const;
  /// pi(s) + N(0, sigma^2) clipped to the action bound; draws from the agent RNG.
  Eigen::VectorXd act(const Eigen::VectorXd& state, double sigma);
  /// min(Q1, Q2) at the policy action.
  double value_of(const Eigen::VectorXd& state) const;
  double q_min(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const;

  /// Bellman targets y = r + gamma (1 - done) min Q'(s', a~). Consumes RNG for
  /// the target smoothing noise.
  Eigen::VectorXd targets(const BatchMatrices& b);
  /// Weighted critic loss of critic 1 against fixed targets.
  double critic_loss(const BatchMatrices& b, const Eigen::VectorXd& y) const;
  /// -mean Q1(s, pi(s)) and its actor gradients.
  double actor_loss(const Eigen::MatrixXd& states, Mlp<double>::Gradients* grads) const;
  /// Critic loss gradients for critic `which` (0 or 1).
  double critic_gradients(int which, const BatchMatrices& b, const Eigen::VectorXd& y,
                          Mlp<double>::Gradients& grads) const;

  UpdateReport update(const BatchMatrices& b);
  UpdateReport update(const TrainingBatch& batch) { return update(BatchMatrices::from(batch)); }

  std::int64_t updates() const { return updates_; }
  Mlp<double>& actor() { return actor_; }
  Mlp<double>& critic(int which) { return which == 0 ? critic1_ : critic2_; }
  const Mlp<double>& actor() const { return actor_; }
  const Mlp<double>& critic(int which) const { return which == 0 ? critic1_ : critic2_; }
  std::mt19937_64& rng() { return rng_; }

  void write(ArchiveWriter& out) const;
  static Td3Agent read(ArchiveReader& in);
  void save(const std::filesystem::path& path) const;
  static Td3Agent load(const std::filesystem::path& path);
  /// Fingerprint over all parameters, optimizer moments, counters and RNG.
  std::uint64_t state_hash() const;

 private:
  Eigen::MatrixXd critic_input(const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) const;

  Td3Config config_;
  Mlp<double> actor_, critic1_, critic2_;
  Mlp<double> actor_target_, critic1_target_, critic2_target_;
  Adam<double> actor_opt_, critic1_opt_, critic2_opt_;
  std::mt19937_64 rng_;
  std::int64_t updates_ = 0;
};

std::string rng_state(const std::mt19937_64& rng);
void restore_rng(std::mt19937_64& rng, const std::string& state);

}  // namespace matdesign
