#include <doctest.h>

#include <cmath>
#include <map>
#include <thread>

#include "agent_checks.hpp"
#include "matdesign/agent.hpp"
#include "test_support.hpp"

using namespace matdesign;

TEST_CASE("network backprop matches finite differences") {
  std::mt19937_64 rng(4);
  for (auto out : {Mlp<double>::Output::Linear, Mlp<double>::Output::Tanh}) {
    Mlp<double> net({4, 9, 7, 3}, out, 2.5, rng);
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 6);
    const Eigen::MatrixXd target = Eigen::MatrixXd::Random(3, 6);
    auto loss = [&] { return 0.5 * (net.forward(x) - target).squaredNorm(); };
    Mlp<double>::Cache cache;
    const Eigen::MatrixXd y = net.forward(x, cache);
    Mlp<double>::Gradients g;
    const Eigen::MatrixXd dx = net.backward(cache, y - target, g);
    CHECK(agentchecks::max_gradient_error(net, g, loss) <= 1e-4);

    // Input gradient too.
    Eigen::MatrixXd xp = x;
    const double h = 1e-5;
    xp(2, 1) += h;
    const double up = 0.5 * (net.forward(xp) - target).squaredNorm();
    xp(2, 1) -= 2 * h;
    const double down = 0.5 * (net.forward(xp) - target).squaredNorm();
    CHECK(agentchecks::relative_error(dx(2, 1), (up - down) / (2 * h)) <= 1e-4);
  }
}

TEST_CASE("critic and actor losses pass gradient checks") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto rep = agentchecks::gradient_check(seed);
    CHECK(rep.critic1 <= 1e-4);
    CHECK(rep.critic2 <= 1e-4);
    CHECK(rep.actor <= 1e-4);
  }
  CHECK(agentchecks::gradient_check(4, 10.0).actor <= 1e-4);
}

TEST_CASE("actor output stays inside the action bound") {
  Td3Config c;
  c.seed = 3;
  Td3Agent agent(c);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 100);
  for (int k = 0; k < 50; ++k) {
    Eigen::VectorXd s = Eigen::VectorXd::NullaryExpr(kElementCount, [&] { return u(rng); });
    CHECK(agent.policy(s).cwiseAbs().maxCoeff() <= c.action_bound);
    CHECK(agent.act(s, 100.0).cwiseAbs().maxCoeff() <= c.action_bound);
  }
}

TEST_CASE("exploration noise widens the action spread") {
  Td3Config c;
  c.hidden = {32, 32};
  Td3Agent agent(c);
  const Eigen::VectorXd s = Eigen::VectorXd::Constant(kElementCount, 100.0 / kElementCount);
  auto spread = [&](double sigma) {
    double sum = 0, sq = 0;
    const int n = 2000;
    for (int k = 0; k < n; ++k) {
      const double a = agent.act(s, sigma)[0];
      sum += a;
      sq += a * a;
    }
    return std::sqrt(sq / n - (sum / n) * (sum / n));
  };
  CHECK(spread(0.0) < 1e-6);
  const double lo = spread(0.1), hi = spread(1.0);
  CHECK(lo == doctest::Approx(0.1).epsilon(0.1));
  CHECK(hi > lo * 5);
}

TEST_CASE("terminal transitions target the reward exactly") {
  std::mt19937_64 rng(8);
  Td3Agent agent(agentchecks::small_config(4, 2, {16, 16}, 8));
  auto b = agentchecks::random_batch(4, 2, 10, 2.0, rng);
  b.done.setOnes();
  const Eigen::VectorXd y = agent.targets(b);
  for (Eigen::Index k = 0; k < y.size(); ++k) CHECK(y[k] == b.r[k]);
}

TEST_CASE("zero-initialised critics value every state at zero") {
  Td3Config c;
  c.zero_init_critic_output = true;
  Td3Agent agent(c);
  Composition s = Composition::Zero();
  s[0] = 60;
  s[1] = 40;
  CHECK(agent.value_of(s) == 0.0);
}

TEST_CASE("critic overfits a single batch monotonically") {
  const auto trace = agentchecks::overfit_trace(200, 5);
  bool monotone = true;
  for (std::size_t k = 1; k < trace.size(); ++k) monotone = monotone && trace[k] < trace[k - 1];
  CHECK(monotone);
  CHECK(trace.back() < 0.5 * trace.front());
}

TEST_CASE("policy updates are delayed") {
  std::mt19937_64 rng(2);
  auto cfg = agentchecks::small_config(3, 2, {8}, 2);
  cfg.policy_delay = 3;
  Td3Agent agent(cfg);
  const auto b = agentchecks::random_batch(3, 2, 8, 2.0, rng);
  for (int k = 1; k <= 9; ++k) CHECK(agent.update(b).actor_loss.has_value() == (k % 3 == 0));
}

TEST_CASE("sum tree prefix search") {
  SumTree t(5);
  const std::vector<double> p{1, 0, 2, 3, 4};
  for (std::size_t i = 0; i < p.size(); ++i) t.set(i, p[i]);
  CHECK(t.total() == doctest::Approx(10));
  CHECK(t.find(0.5) == 0);
  CHECK(t.find(1.0) == 2);
  CHECK(t.find(2.99) == 2);
  CHECK(t.find(3.0) == 3);
  CHECK(t.find(9.99) == 4);
  CHECK_THROWS_AS(t.set(5, 1.0), ModelError);
  CHECK_THROWS_AS(t.set(0, -1.0), ModelError);
}

TEST_CASE("uniform priorities sample uniformly") {
  ReplayConfig rc;
  rc.capacity = 20;
  PrioritizedReplay replay(rc);
  for (int i = 0; i < 20; ++i) {
    Experience e;
    e.r = i;
    replay.add(e);
  }
  std::mt19937_64 rng(11);
  std::vector<int> counts(20, 0);
  const int draws = 400, batch = 32;
  for (int k = 0; k < draws; ++k) {
    const auto b = replay.sample(batch, rng);
    for (auto idx : b.buffer_index) counts[static_cast<std::size_t>(idx)]++;
    CHECK(b.weights.maxCoeff() == doctest::Approx(1.0));
  }
  const double expected = static_cast<double>(draws * batch) / 20.0;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 43.8);  // chi-square 19 dof, p = 0.001
}

TEST_CASE("priorities follow td errors and skip pool entries") {
  ReplayConfig rc;
  rc.capacity = 4;
  rc.alpha = 0.5;
  PrioritizedReplay replay(rc);
  for (int i = 0; i < 4; ++i) replay.add(Experience{});
  Eigen::VectorXd td(3);
  td << 3.0, -1.0, 8.0;
  replay.update_priorities({0, 2, -1}, td);
  CHECK(replay.priority(0) == doctest::Approx(std::sqrt(3.0 + rc.priority_eps)));
  CHECK(replay.priority(2) == doctest::Approx(std::sqrt(1.0 + rc.priority_eps)));
  CHECK(replay.priority(1) == 1.0);

  // Empirical sampling frequency tracks p_i / sum p.
  std::mt19937_64 rng(3);
  std::vector<double> freq(4, 0);
  for (int k = 0; k < 3000; ++k)
    for (auto idx : replay.sample(8, rng).buffer_index) freq[static_cast<std::size_t>(idx)] += 1;
  double total = 0;
  for (int i = 0; i < 4; ++i) total += replay.priority(i);
  for (int i = 0; i < 4; ++i) CHECK(freq[i] / 24000.0 == doctest::Approx(replay.priority(i) / total).epsilon(0.03));

  // Importance weights: (N P)^-beta normalised by the batch max.
  const auto b = replay.sample(64, rng);
  for (std::size_t k = 0; k < b.size(); ++k) {
    const double p = replay.priority(static_cast<std::size_t>(b.buffer_index[k])) / total;
    double maxw = 0;
    for (auto idx : b.buffer_index)
      maxw = std::max(maxw, std::pow(4 * replay.priority(static_cast<std::size_t>(idx)) / total, -rc.beta));
    CHECK(b.weights[static_cast<Eigen::Index>(k)] == doctest::Approx(std::pow(4 * p, -rc.beta) / maxw));
  }
}

TEST_CASE("replay ring overwrites the oldest entry") {
  ReplayConfig rc;
  rc.capacity = 3;
  PrioritizedReplay replay(rc);
  for (int i = 0; i < 5; ++i) {
    Experience e;
    e.r = i;
    replay.add(e);
  }
  CHECK(replay.size() == 3);
  CHECK(replay.at(0).r == 3);
  CHECK(replay.at(1).r == 4);
  CHECK(replay.at(2).r == 2);
}

TEST_CASE("concurrent insertion keeps every entry") {
  ReplayConfig rc;
  rc.capacity = 4000;
  PrioritizedReplay replay(rc);
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t)
    workers.emplace_back([&] {
      for (int i = 0; i < 1000; ++i) replay.add(Experience{});
    });
  for (auto& w : workers) w.join();
  CHECK(replay.size() == 4000);
  std::mt19937_64 rng(1);
  CHECK(replay.sample(16, rng).size() == 16);
}

TEST_CASE("agent and replay checkpoints round-trip") {
  std::mt19937_64 rng(6);
  auto cfg = agentchecks::small_config(kElementCount, kElementCount, {16, 16}, 6);
  Td3Agent agent(cfg);
  ReplayConfig rc;
  rc.capacity = 64;
  PrioritizedReplay replay(rc);
  for (int i = 0; i < 40; ++i) {
    Experience e;
    e.s[i % kElementCount] = 100;
    e.r = i * 0.1;
    replay.add(e);
  }
  for (int k = 0; k < 5; ++k) {
    const auto tb = replay.sample(8, rng);
    replay.update_priorities(tb.buffer_index, agent.update(tb).td_errors);
  }
  const auto dir = testsupport::scratch_dir("agent");
  agent.save(dir / "agent.bin");
  ArchiveWriter w("replay", 1);
  replay.write(w);
  w.save(dir / "replay.bin");

  auto restored = Td3Agent::load(dir / "agent.bin");
  auto in = ArchiveReader::open(dir / "replay.bin", "replay", 1);
  auto replay2 = PrioritizedReplay::read(in);
  CHECK(restored.state_hash() == agent.state_hash());
  CHECK(replay2.size() == replay.size());

  // Continuing from the checkpoint reproduces the original run.
  std::mt19937_64 rng2 = rng;
  for (int k = 0; k < 4; ++k) {
    const auto b1 = replay.sample(8, rng);
    const auto b2 = replay2.sample(8, rng2);
    CHECK(b1.buffer_index == b2.buffer_index);
    replay.update_priorities(b1.buffer_index, agent.update(b1).td_errors);
    replay2.update_priorities(b2.buffer_index, restored.update(b2).td_errors);
  }
  CHECK(restored.state_hash() == agent.state_hash());
  CHECK_THROWS_AS(Td3Agent::load(dir / "missing.bin"), Error);
}

TEST_CASE("bad agent configuration is rejected") {
  Td3Config c;
  c.gamma = 1.5;
  CHECK_THROWS_AS(Td3Agent{c}, ConfigError);
  c = {};
  c.hidden.clear();
  CHECK_THROWS_AS(Td3Agent{c}, ConfigError);
  ReplayConfig rc;
  rc.beta = 2;
  CHECK_THROWS_AS(PrioritizedReplay{rc}, ConfigError);
}

TEST_CASE("agent learns a one-step bandit") {
  const auto rep = agentchecks::bandit(2000, 400, 21);
  INFO("trained " << rep.trained_mean << " random " << rep.random_mean << " sd " << rep.random_std);
  CHECK(rep.pass());
  CHECK(rep.trained_mean > -0.3);
}
