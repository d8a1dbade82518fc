#pragma once

// Learner checks shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "matdesign/agent.hpp"

namespace agentchecks {

using matdesign::BatchMatrices;
using matdesign::Mlp;
using matdesign::Td3Agent;
using matdesign::Td3Config;

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Largest relative error between analytic gradients and central differences
/// over every parameter of `net`.
inline double max_gradient_error(Mlp<double>& net, const Mlp<double>::Gradients& analytic,
                                 const std::function<double()>& loss, double h = 1e-5) {
  double worst = 0.0;
  auto probe = [&](double& param, double g) {
    const double saved = param;
    param = saved + h;
    const double up = loss();
    param = saved - h;
    const double down = loss();
    param = saved;
    worst = std::max(worst, relative_error(g, (up - down) / (2 * h)));
  };
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) probe(net.weights[l].data()[i], analytic.w[l].data()[i]);
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) probe(net.biases[l][i], analytic.b[l][i]);
  }
  return worst;
}

inline Td3Config small_config(int state_dim, int action_dim, std::vector<int> hidden, std::uint64_t seed) {
  Td3Config c;
  c.state_dim = state_dim;
  c.action_dim = action_dim;
  c.hidden = std::move(hidden);
  c.state_scale = 1.0;
  c.action_bound = 2.0;
  c.seed = seed;
  return c;
}

inline BatchMatrices random_batch(int state_dim, int action_dim, int n, double action_bound, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(-action_bound, action_bound);
  BatchMatrices b;
  b.s = Eigen::MatrixXd::NullaryExpr(state_dim, n, [&] { return z(rng); });
  b.s_next = Eigen::MatrixXd::NullaryExpr(state_dim, n, [&] { return z(rng); });
  b.a = Eigen::MatrixXd::NullaryExpr(action_dim, n, [&] { return u(rng); });
  b.r = Eigen::VectorXd::NullaryExpr(n, [&] { return z(rng); });
  b.done = Eigen::VectorXd::Zero(n);
  b.weights = Eigen::VectorXd::NullaryExpr(n, [&] { return 0.5 + 0.5 * std::abs(z(rng)); });
  return b;
}

struct GradientReport {
  double actor = 0.0;
  double critic1 = 0.0;
  double critic2 = 0.0;
  double worst() const { return std::max({actor, critic1, critic2}); }
};

/// Finite-difference check of both critic losses and the actor loss.
inline GradientReport gradient_check(std::uint64_t seed, double penalty = 0.0) {
  std::mt19937_64 rng(seed);
  auto cfg = small_config(5, 3, {12, 10}, seed);
  cfg.preactivation_penalty = penalty;
  Td3Agent agent(cfg);
  const auto b = random_batch(5, 3, 16, 2.0, rng);
  const Eigen::VectorXd y = b.r;
  GradientReport rep;
  for (int which = 0; which < 2; ++which) {
    Mlp<double>::Gradients g;
    agent.critic_gradients(which, b, y, g);
    Mlp<double>::Gradients scratch;
    const double err = max_gradient_error(agent.critic(which), g, [&] {
      return agent.critic_gradients(which, b, y, scratch);
    });
    (which == 0 ? rep.critic1 : rep.critic2) = err;
  }
  Mlp<double>::Gradients ga;
  agent.actor_loss(b.s, &ga);
  rep.actor = max_gradient_error(agent.actor(), ga, [&] { return agent.actor_loss(b.s, nullptr); });
  return rep;
}

/// Critic loss trace over repeated updates on one batch with gamma = 0.
inline std::vector<double> overfit_trace(int steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Td3Config c;  // full-size networks on composition-shaped inputs
  c.gamma = 0.0;
  c.seed = seed;
  c.critic_lr = 1e-4;
  Td3Agent agent(c);
  BatchMatrices b = random_batch(c.state_dim, c.action_dim, 64, c.action_bound, rng);
  b.s = (b.s.array().abs() * 10.0).matrix();
  std::vector<double> trace;
  for (int k = 0; k < steps; ++k) trace.push_back(agent.update(b).critic_loss);
  trace.push_back(agent.critic_loss(b, b.r));
  return trace;
}

struct BanditReport {
  double trained_mean = 0.0;
  double random_mean = 0.0;
  double random_std = 0.0;       // per-episode std of the random policy
  double random_mean_std = 0.0;  // std of the random policy's mean over the evaluation episodes
  int episodes = 0;
  bool pass() const { return trained_mean - random_mean >= 3.0 * random_mean_std; }
};

/// One-step bandit: state s ~ U(-1, 1), reward -|s + a - c|.
inline BanditReport bandit(int updates, int episodes, std::uint64_t seed) {
  constexpr double c = 0.5;
  Td3Config cfg = small_config(1, 1, {64, 64}, seed);
  cfg.exploration_noise = 0.5;
  Td3Agent agent(cfg);
  matdesign::ReplayConfig rc;
  rc.capacity = 20000;
  matdesign::PrioritizedReplay replay(rc);
  std::mt19937_64 rng(seed ^ 0xbadd1e);
  std::uniform_real_distribution<double> us(-1.0, 1.0);
  std::uniform_real_distribution<double> ua(-cfg.action_bound, cfg.action_bound);
  auto reward = [&](double s, double a) { return -std::abs(s + a - c); };
  auto to_batch = [](const matdesign::TrainingBatch& tb) {
    BatchMatrices b;
    const auto n = static_cast<Eigen::Index>(tb.size());
    b.s.resize(1, n);
    b.a.resize(1, n);
    b.s_next.resize(1, n);
    b.r.resize(n);
    b.done = Eigen::VectorXd::Ones(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const auto& e = tb.items[static_cast<std::size_t>(k)];
      b.s(0, k) = e.s[0];
      b.a(0, k) = e.a[0];
      b.s_next(0, k) = e.s_next[0];
      b.r[k] = e.r;
    }
    b.weights = tb.weights;
    return b;
  };
  auto store = [&](double s, double a) {
    matdesign::Experience e;
    e.s[0] = s;
    e.a[0] = a;
    e.s_next[0] = s;
    e.r = reward(s, a);
    e.done = true;
    replay.add(e);
  };
  for (int k = 0; k < 256; ++k) store(us(rng), ua(rng));
  for (int k = 0; k < updates; ++k) {
    const double s = us(rng);
    store(s, agent.act(Eigen::VectorXd::Constant(1, s), cfg.exploration_noise)[0]);
    const auto tb = replay.sample(64, rng);
    const auto rep = agent.update(to_batch(tb));
    replay.update_priorities(tb.buffer_index, rep.td_errors);
  }

  BanditReport out;
  out.episodes = episodes;
  std::vector<double> rnd;
  for (int k = 0; k < episodes; ++k) {
    const double s = us(rng);
    out.trained_mean += reward(s, agent.policy(Eigen::VectorXd::Constant(1, s))[0]);
    rnd.push_back(reward(s, ua(rng)));
  }
  out.trained_mean /= episodes;
  for (double r : rnd) out.random_mean += r;
  out.random_mean /= episodes;
  for (double r : rnd) out.random_std += (r - out.random_mean) * (r - out.random_mean);
  out.random_std = std::sqrt(out.random_std / (episodes - 1));
  out.random_mean_std = out.random_std / std::sqrt(static_cast<double>(episodes));
  return out;
}

}  // namespace agentchecks
