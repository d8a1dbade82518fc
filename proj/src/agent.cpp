#include "matdesign/agent.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace matdesign {

// ---------------------------------------------------------------- sum tree

SumTree::SumTree(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {
  base_ = 1;
  while (base_ < capacity_) base_ <<= 1;
  nodes_.assign(2 * base_, 0.0);
}

void SumTree::set(std::size_t leaf, double value) {
  if (leaf >= capacity_) throw ModelError("sum tree leaf out of range");
  if (!(value >= 0.0) || !std::isfinite(value)) throw ModelError("sum tree priorities must be finite and >= 0");
  std::size_t i = base_ + leaf;
  nodes_[i] = value;
  // Recompute parents from children so rounding does not drift.
  for (i >>= 1; i >= 1; i >>= 1) nodes_[i] = nodes_[2 * i] + nodes_[2 * i + 1];
}

std::size_t SumTree::find(double prefix) const {
  std::size_t i = 1;
  while (i < base_) {
    const double left = nodes_[2 * i];
    if (prefix < left || nodes_[2 * i + 1] <= 0.0) {
      i = 2 * i;
    } else {
      prefix -= left;
      i = 2 * i + 1;
    }
  }
  return std::min(i - base_, capacity_ - 1);
}

// ---------------------------------------------------------------- replay

void ReplayConfig::validate() const {
  if (capacity < 1) throw ConfigError("replay.capacity must be >= 1");
  if (!(alpha >= 0.0)) throw ConfigError("replay.alpha must be >= 0");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("replay.beta must be in [0, 1]");
  if (!(priority_eps > 0.0)) throw ConfigError("replay.priority_eps must be > 0");
}

PrioritizedReplay::PrioritizedReplay(ReplayConfig config) : config_(config), tree_(config.capacity) {
  config_.validate();
  items_.reserve(std::min<std::size_t>(config_.capacity, 1 << 16));
}

PrioritizedReplay::PrioritizedReplay(PrioritizedReplay&& other) noexcept
    : config_(other.config_),
      items_(std::move(other.items_)),
      tree_(std::move(other.tree_)),
      next_(other.next_),
      max_priority_(other.max_priority_) {}

PrioritizedReplay& PrioritizedReplay::operator=(PrioritizedReplay&& other) noexcept {
  if (this != &other) {
    std::scoped_lock lock(mutex_, other.mutex_);
    config_ = other.config_;
    items_ = std::move(other.items_);
    tree_ = std::move(other.tree_);
    next_ = other.next_;
    max_priority_ = other.max_priority_;
  }
  return *this;
}

void PrioritizedReplay::add(Experience e) {
  std::lock_guard lock(mutex_);
  if (items_.size() < config_.capacity) {
    items_.push_back(std::move(e));
  } else {
    items_[next_] = std::move(e);
  }
  tree_.set(next_, max_priority_);
  next_ = (next_ + 1) % config_.capacity;
}

std::size_t PrioritizedReplay::size() const {
  std::lock_guard lock(mutex_);
  return items_.size();
}

TrainingBatch PrioritizedReplay::sample(std::size_t batch_size, std::mt19937_64& rng) const {
  std::lock_guard lock(mutex_);
  if (items_.empty()) throw ModelError("cannot sample from an empty replay buffer");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  TrainingBatch batch;
  batch.items.reserve(batch_size);
  batch.buffer_index.reserve(batch_size);
  batch.weights.resize(static_cast<Eigen::Index>(batch_size));
  const double total = tree_.total();
  const double segment = total / static_cast<double>(batch_size);
  const double n = static_cast<double>(items_.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < batch_size; ++k) {
    const double prefix = std::min((static_cast<double>(k) + u(rng)) * segment, std::nextafter(total, 0.0));
    auto idx = tree_.find(prefix);
    if (idx >= items_.size()) idx = items_.size() - 1;
    const double p = tree_.get(idx) / total;
    batch.items.push_back(items_[idx]);
    batch.buffer_index.push_back(static_cast<std::int64_t>(idx));
    batch.weights[static_cast<Eigen::Index>(k)] = std::pow(n * p, -config_.beta);
  }
  batch.weights /= batch.weights.maxCoeff();
  return batch;
}

void PrioritizedReplay::update_priorities(const std::vector<std::int64_t>& indices, const Eigen::VectorXd& td_errors) {
  if (static_cast<Eigen::Index>(indices.size()) != td_errors.size())
    throw ModelError("priority update: index and error counts differ");
  std::lock_guard lock(mutex_);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] < 0) continue;  // injected pool entry
    const auto idx = static_cast<std::size_t>(indices[k]);
    if (idx >= items_.size()) throw ModelError("priority update: index out of range");
    const double p = std::pow(std::abs(td_errors[static_cast<Eigen::Index>(k)]) + config_.priority_eps, config_.alpha);
    tree_.set(idx, p);
    max_priority_ = std::max(max_priority_, p);
  }
}

double PrioritizedReplay::priority(std::size_t index) const {
  std::lock_guard lock(mutex_);
  return tree_.get(index);
}

void PrioritizedReplay::write(ArchiveWriter& out) const {
  std::lock_guard lock(mutex_);
  out.put<std::uint64_t>(config_.capacity);
  out.put(config_.alpha);
  out.put(config_.beta);
  out.put(config_.priority_eps);
  out.put<std::uint64_t>(next_);
  out.put(max_priority_);
  out.put<std::uint64_t>(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    items_[i].write(out);
    out.put(tree_.get(i));
  }
}

PrioritizedReplay PrioritizedReplay::read(ArchiveReader& in) {
  ReplayConfig c;
  c.capacity = in.get_size();
  c.alpha = in.get<double>();
  c.beta = in.get<double>();
  c.priority_eps = in.get<double>();
  PrioritizedReplay r(c);
  r.next_ = in.get_size();
  r.max_priority_ = in.get<double>();
  const auto n = in.get_size();
  if (n > c.capacity || r.next_ >= c.capacity) throw DataError("corrupt replay archive");
  for (std::size_t i = 0; i < n; ++i) {
    r.items_.push_back(Experience::read(in));
    r.tree_.set(i, in.get<double>());
  }
  return r;
}

// ---------------------------------------------------------------- config

void Td3Config::validate() const {
  if (state_dim < 1 || action_dim < 1) throw ConfigError("agent dimensions must be positive");
  if (hidden.empty()) throw ConfigError("agent.hidden needs at least one layer");
  for (int h : hidden)
    if (h < 1) throw ConfigError("agent.hidden sizes must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("agent.gamma must be in [0, 1]");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("agent.tau must be in (0, 1]");
  if (policy_delay < 1) throw ConfigError("agent.policy_delay must be >= 1");
  if (!(action_bound > 0.0)) throw ConfigError("agent.action_bound must be > 0");
  if (!(state_scale > 0.0)) throw ConfigError("agent.state_scale must be > 0");
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("agent learning rates must be > 0");
  if (!(target_noise >= 0.0) || !(noise_clip >= 0.0) || !(exploration_noise >= 0.0))
    throw ConfigError("agent noise settings must be >= 0");
  if (!(actor_output_init >= 0.0)) throw ConfigError("agent.actor_output_init must be >= 0");
  if (!(preactivation_penalty >= 0.0)) throw ConfigError("agent.preactivation_penalty must be >= 0");
}

nlohmann::json Td3Config::to_json() const {
  return {{"state_dim", state_dim},
          {"action_dim", action_dim},
          {"hidden", hidden},
          {"gamma", gamma},
          {"tau", tau},
          {"policy_delay", policy_delay},
          {"action_bound", action_bound},
          {"state_scale", state_scale},
          {"actor_lr", actor_lr},
          {"critic_lr", critic_lr},
          {"target_noise", target_noise},
          {"noise_clip", noise_clip},
          {"exploration_noise", exploration_noise},
          {"zero_init_critic_output", zero_init_critic_output},
          {"actor_output_init", actor_output_init},
          {"preactivation_penalty", preactivation_penalty},
          {"seed", seed}};
}

Td3Config Td3Config::from_json(const nlohmann::json& doc) {
  Td3Config c;
  c.state_dim = doc.value("state_dim", c.state_dim);
  c.action_dim = doc.value("action_dim", c.action_dim);
  c.hidden = doc.value("hidden", c.hidden);
  c.gamma = doc.value("gamma", c.gamma);
  c.tau = doc.value("tau", c.tau);
  c.policy_delay = doc.value("policy_delay", c.policy_delay);
  c.action_bound = doc.value("action_bound", c.action_bound);
  c.state_scale = doc.value("state_scale", c.state_scale);
  c.actor_lr = doc.value("actor_lr", c.actor_lr);
  c.critic_lr = doc.value("critic_lr", c.critic_lr);
  c.target_noise = doc.value("target_noise", c.target_noise);
  c.noise_clip = doc.value("noise_clip", c.noise_clip);
  c.exploration_noise = doc.value("exploration_noise", c.exploration_noise);
  c.zero_init_critic_output = doc.value("zero_init_critic_output", c.zero_init_critic_output);
  c.actor_output_init = doc.value("actor_output_init", c.actor_output_init);
  c.preactivation_penalty = doc.value("preactivation_penalty", c.preactivation_penalty);
  c.seed = doc.value("seed", c.seed);
  c.validate();
  return c;
}

BatchMatrices BatchMatrices::from(const TrainingBatch& batch) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) throw ModelError("empty training batch");
  BatchMatrices b;
  b.s.resize(kElementCount, n);
  b.a.resize(kElementCount, n);
  b.s_next.resize(kElementCount, n);
  b.r.resize(n);
  b.done.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& e = batch.items[static_cast<std::size_t>(k)];
    b.s.col(k) = e.s;
    b.a.col(k) = e.a;
    b.s_next.col(k) = e.s_next;
    b.r[k] = e.r;
    b.done[k] = e.done ? 1.0 : 0.0;
  }
  b.weights = batch.weights.size() == n ? batch.weights : Eigen::VectorXd::Ones(n);
  return b;
}

// ---------------------------------------------------------------- agent

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw DataError("corrupt RNG state");
}

Td3Agent::Td3Agent(Td3Config config) : config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  std::vector<int> actor_sizes{config_.state_dim};
  actor_sizes.insert(actor_sizes.end(), config_.hidden.begin(), config_.hidden.end());
  actor_sizes.push_back(config_.action_dim);
  std::vector<int> critic_sizes{config_.state_dim + config_.action_dim};
  critic_sizes.insert(critic_sizes.end(), config_.hidden.begin(), config_.hidden.end());
  critic_sizes.push_back(1);

  actor_ = Mlp<double>(actor_sizes, Mlp<double>::Output::Tanh, config_.action_bound, rng_);
  if (config_.actor_output_init > 0.0) {
    std::uniform_real_distribution<double> u(-config_.actor_output_init, config_.actor_output_init);
    actor_.weights.back() = actor_.weights.back().unaryExpr([&](double) { return u(rng_); });
    actor_.biases.back() = actor_.biases.back().unaryExpr([&](double) { return u(rng_); });
  }
  critic1_ = Mlp<double>(critic_sizes, Mlp<double>::Output::Linear, 1.0, rng_, config_.zero_init_critic_output);
  critic2_ = Mlp<double>(critic_sizes, Mlp<double>::Output::Linear, 1.0, rng_, config_.zero_init_critic_output);
  actor_target_ = actor_;
  critic1_target_ = critic1_;
  critic2_target_ = critic2_;
  actor_opt_ = Adam<double>(actor_, config_.actor_lr);
  critic1_opt_ = Adam<double>(critic1_, config_.critic_lr);
  critic2_opt_ = Adam<double>(critic2_, config_.critic_lr);
}

Eigen::MatrixXd Td3Agent::critic_input(const Eigen::MatrixXd& s, const Eigen::MatrixXd& a) const {
  Eigen::MatrixXd x(config_.state_dim + config_.action_dim, s.cols());
  x.topRows(config_.state_dim) = s * config_.state_scale;
  x.bottomRows(config_.action_dim) = a / config_.action_bound;
  return x;
}

Eigen::VectorXd Td3Agent::policy(const Eigen::VectorXd& state) const {
  if (state.size() != config_.state_dim) throw ModelError("state has the wrong dimension");
  return actor_.forward(Eigen::MatrixXd(state * config_.state_scale)).col(0);
}

Eigen::VectorXd Td3Agent::act(const Eigen::VectorXd& state, double sigma) {
  Eigen::VectorXd a = policy(state);
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] += noise(rng_);
  }
  return a.cwiseMax(-config_.action_bound).cwiseMin(config_.action_bound);
}

double Td3Agent::q_min(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const {
  const auto x = critic_input(state, action);
  return std::min(critic1_.forward(x)(0, 0), critic2_.forward(x)(0, 0));
}

double Td3Agent::value_of(const Eigen::VectorXd& state) const { return q_min(state, policy(state)); }

Eigen::VectorXd Td3Agent::targets(const BatchMatrices& b) {
  const auto n = b.s.cols();
  Eigen::MatrixXd a_next = actor_target_.forward(Eigen::MatrixXd(b.s_next * config_.state_scale));
  const double sd = config_.target_noise * config_.action_bound;
  const double clip = config_.noise_clip * config_.action_bound;
  if (sd > 0.0) {
    std::normal_distribution<double> noise(0.0, sd);
    for (Eigen::Index j = 0; j < a_next.cols(); ++j)
      for (Eigen::Index i = 0; i < a_next.rows(); ++i) a_next(i, j) += std::clamp(noise(rng_), -clip, clip);
  }
  a_next = a_next.cwiseMax(-config_.action_bound).cwiseMin(config_.action_bound);
  const auto x = critic_input(b.s_next, a_next);
  const Eigen::RowVectorXd q1 = critic1_target_.forward(x);
  const Eigen::RowVectorXd q2 = critic2_target_.forward(x);
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k)
    y[k] = b.r[k] + config_.gamma * (1.0 - b.done[k]) * std::min(q1[k], q2[k]);
  return y;
}

double Td3Agent::critic_loss(const BatchMatrices& b, const Eigen::VectorXd& y) const {
  const Eigen::VectorXd q = critic1_.forward(critic_input(b.s, b.a)).row(0).transpose();
  return (b.weights.array() * (q - y).array().square()).sum() / static_cast<double>(y.size());
}

double Td3Agent::critic_gradients(int which, const BatchMatrices& b, const Eigen::VectorXd& y,
                                  Mlp<double>::Gradients& grads) const {
  const auto& net = critic(which);
  Mlp<double>::Cache cache;
  const Eigen::VectorXd q = net.forward(critic_input(b.s, b.a), cache).row(0).transpose();
  const Eigen::ArrayXd diff = (q - y).array();
  const double n = static_cast<double>(y.size());
  const Eigen::MatrixXd dq = (2.0 * b.weights.array() * diff / n).matrix().transpose();
  grads.set_zero_like(net);
  net.backward(cache, dq, grads);
  return (b.weights.array() * diff.square()).sum() / n;
}

double Td3Agent::actor_loss(const Eigen::MatrixXd& states, Mlp<double>::Gradients* grads) const {
  Mlp<double>::Cache actor_cache, critic_cache;
  const Eigen::MatrixXd a = actor_.forward(Eigen::MatrixXd(states * config_.state_scale), actor_cache);
  const Eigen::MatrixXd q = critic1_.forward(critic_input(states, a), critic_cache);
  const double n = static_cast<double>(states.cols());
  const auto& u = actor_cache.pre.back();
  const double lambda = config_.preactivation_penalty / static_cast<double>(config_.action_dim);
  const double loss = -q.sum() / n + lambda * u.squaredNorm() / n;
  if (grads) {
    Mlp<double>::Gradients unused;
    unused.set_zero_like(critic1_);
    const Eigen::MatrixXd dq = Eigen::MatrixXd::Constant(1, states.cols(), -1.0 / n);
    const Eigen::MatrixXd dx = critic1_.backward(critic_cache, dq, unused);
    const Eigen::MatrixXd da = dx.bottomRows(config_.action_dim) / config_.action_bound;
    grads->set_zero_like(actor_);
    const Eigen::MatrixXd du = (2.0 * lambda / n) * u;
    actor_.backward(actor_cache, da, *grads, &du);
  }
  return loss;
}

UpdateReport Td3Agent::update(const BatchMatrices& b) {
  UpdateReport rep;
  const Eigen::VectorXd y = targets(b);
  const Eigen::VectorXd q1 = critic1_.forward(critic_input(b.s, b.a)).row(0).transpose();
  rep.td_errors = q1 - y;

  Mlp<double>::Gradients g1, g2;
  rep.critic_loss = critic_gradients(0, b, y, g1);
  critic_gradients(1, b, y, g2);
  critic1_opt_.step(critic1_, g1);
  critic2_opt_.step(critic2_, g2);
  ++updates_;

  if (updates_ % config_.policy_delay == 0) {
    Mlp<double>::Gradients ga;
    rep.actor_loss = actor_loss(b.s, &ga);
    actor_opt_.step(actor_, ga);
    actor_target_.polyak_from(actor_, config_.tau);
    critic1_target_.polyak_from(critic1_, config_.tau);
    critic2_target_.polyak_from(critic2_, config_.tau);
  }
  return rep;
}

void Td3Agent::write(ArchiveWriter& out) const {
  out.put(config_.to_json().dump());
  for (const auto* net : {&actor_, &critic1_, &critic2_, &actor_target_, &critic1_target_, &critic2_target_})
    net->write(out);
  for (const auto* opt : {&actor_opt_, &critic1_opt_, &critic2_opt_}) opt->write(out);
  out.put(rng_state(rng_));
  out.put(updates_);
}

Td3Agent Td3Agent::read(ArchiveReader& in) {
  Td3Agent a(Td3Config::from_json(nlohmann::json::parse(in.get_string())));
  for (auto* net : {&a.actor_, &a.critic1_, &a.critic2_, &a.actor_target_, &a.critic1_target_, &a.critic2_target_})
    *net = Mlp<double>::read(in);
  for (auto* opt : {&a.actor_opt_, &a.critic1_opt_, &a.critic2_opt_}) *opt = Adam<double>::read(in);
  restore_rng(a.rng_, in.get_string());
  a.updates_ = in.get<std::int64_t>();
  return a;
}

void Td3Agent::save(const std::filesystem::path& path) const {
  ArchiveWriter w("matdesign.agent", kArchiveVersion);
  write(w);
  w.save(path);
}

Td3Agent Td3Agent::load(const std::filesystem::path& path) {
  auto in = ArchiveReader::open(path, "matdesign.agent", kArchiveVersion);
  return read(in);
}

std::uint64_t Td3Agent::state_hash() const {
  ArchiveWriter w("hash", 1);
  write(w);
  return fnv1a(w.bytes());
}

}  // namespace matdesign
