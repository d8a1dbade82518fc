#include "matdesign/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "matdesign/common.hpp"
#include "matdesign/metrics.hpp"
#include "text_util.hpp"

namespace matdesign {
namespace {

using nlohmann::json;

json composition_json(const Composition& c) {
  json j = json::object();
  for (const auto& [symbol, value] : sparse_entries(c)) j[symbol] = value;
  return j;
}

Composition composition_from(const json& j) {
  std::vector<std::pair<std::string, double>> entries;
  for (const auto& [symbol, value] : j.items()) entries.emplace_back(symbol, value.get<double>());
  return from_sparse(entries);
}

json props_json(const std::array<double, kPropertyCount>& p) {
  json j = json::object();
  for (int i = 0; i < kPropertyCount; ++i) j[std::string(kPropertyNames[static_cast<std::size_t>(i)])] = p[i];
  return j;
}

std::array<double, kPropertyCount> props_from(const json& j) {
  std::array<double, kPropertyCount> p{};
  for (int i = 0; i < kPropertyCount; ++i) p[i] = j.at(std::string(kPropertyNames[static_cast<std::size_t>(i)]));
  return p;
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_get(const json& doc, const char* key) {
  if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
  return doc[key].get<T>();
}

std::uint64_t file_size_or_zero(const std::filesystem::path& p) {
  return std::filesystem::exists(p) ? std::filesystem::file_size(p) : 0;
}

void append_lines(const std::filesystem::path& path, const std::vector<json>& docs) {
  if (docs.empty()) return;
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw Error("cannot append to " + path.string());
  for (const auto& d : docs) out << d.dump() << '\n';
  if (!out) throw Error("write failed on " + path.string());
}

std::uint64_t file_hash(const std::filesystem::path& p, std::uint64_t seed) {
  if (!std::filesystem::exists(p)) return fnv1a("absent", seed);
  return fnv1a(detail::read_file(p), seed);
}

std::mt19937_64 seeded(std::uint64_t seed, std::string_view stream) { return std::mt19937_64(fnv1a(stream, seed)); }

void write_pool_stats(const ExperiencePool& pool, const TepConfig& tep, const std::filesystem::path& path) {
  if (pool.empty()) return;
  std::ofstream(path) << pool_stats(pool, tep.histogram_bins).to_json().dump(2) << '\n';
}

}  // namespace

// ------------------------------------------------------------------ logs

json StepRecord::to_json() const {
  return {{"epoch", epoch},
          {"k", k},
          {"t", t},
          {"base", base},
          {"s", composition_json(s)},
          {"a", composition_json(a)},
          {"s_next", composition_json(s_next)},
          {"reward", reward},
          {"breakdown", breakdown.to_json()},
          {"props", props ? props_json(*props) : json(nullptr)},
          {"value", opt_json(value)},
          {"legal", legal()},
          {"done", done()},
          {"truncated", truncated},
          {"bundle_version", bundle_version}};
}

StepRecord StepRecord::from_json(const json& doc) {
  StepRecord r;
  r.epoch = doc.at("epoch").get<std::int64_t>();
  r.k = doc.at("k").get<int>();
  r.t = doc.at("t").get<std::int64_t>();
  r.base = doc.value("base", std::string());
  r.s = composition_from(doc.at("s"));
  r.a = composition_from(doc.at("a"));
  r.s_next = composition_from(doc.at("s_next"));
  r.reward = doc.at("reward").get<double>();
  r.breakdown = RewardBreakdown::from_json(doc.at("breakdown"));
  if (doc.contains("props") && !doc["props"].is_null()) r.props = props_from(doc["props"]);
  r.value = opt_get<double>(doc, "value");
  r.truncated = doc.value("truncated", false);
  r.bundle_version = doc.value("bundle_version", std::uint64_t{1});
  return r;
}

std::vector<json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::vector<StepRecord> read_trajectory(const std::filesystem::path& path) {
  std::vector<StepRecord> out;
  std::size_t n = 0;
  for (const auto& doc : read_json_lines(path)) {
    ++n;
    try {
      out.push_back(StepRecord::from_json(doc));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": record " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void append_trajectory(const std::filesystem::path& path, const std::vector<StepRecord>& records) {
  std::vector<json> docs;
  docs.reserve(records.size());
  for (const auto& r : records) docs.push_back(r.to_json());
  append_lines(path, docs);
}

json EpisodeSummary::to_json() const {
  return {{"epoch", epoch},
          {"base", base},
          {"steps", steps},
          {"t_end", t_end},
          {"total_reward", total_reward},
          {"mean_reward", mean_reward},
          {"legal", legal},
          {"bmg", bmg},
          {"done", done},
          {"truncated", truncated},
          {"values", values},
          {"updates", updates},
          {"critic_loss", opt_json(critic_loss)},
          {"actor_loss", opt_json(actor_loss)},
          {"tep_replaced", tep_replaced},
          {"amr_trigger", opt_json(amr_trigger)},
          {"amr_accepted", amr_accepted},
          {"bundle_version", bundle_version}};
}

EpisodeSummary EpisodeSummary::from_json(const json& doc) {
  EpisodeSummary s;
  s.epoch = doc.at("epoch").get<std::int64_t>();
  s.base = doc.value("base", std::string());
  s.steps = doc.at("steps").get<int>();
  s.t_end = doc.at("t_end").get<std::int64_t>();
  s.total_reward = doc.at("total_reward").get<double>();
  s.mean_reward = doc.at("mean_reward").get<double>();
  s.legal = doc.value("legal", 0);
  s.bmg = doc.value("bmg", 0);
  s.done = doc.value("done", false);
  s.truncated = doc.value("truncated", false);
  s.values = doc.value("values", std::vector<double>{});
  s.updates = doc.value("updates", 0);
  s.critic_loss = opt_get<double>(doc, "critic_loss");
  s.actor_loss = opt_get<double>(doc, "actor_loss");
  s.tep_replaced = doc.value("tep_replaced", std::size_t{0});
  s.amr_trigger = opt_get<std::string>(doc, "amr_trigger");
  s.amr_accepted = doc.value("amr_accepted", false);
  s.bundle_version = doc.value("bundle_version", std::uint64_t{1});
  return s;
}

std::vector<EpisodeSummary> summaries_from_trajectory(const std::vector<StepRecord>& records) {
  std::vector<EpisodeSummary> out;
  for (const auto& r : records) {
    if (out.empty() || out.back().epoch != r.epoch) {
      EpisodeSummary s;
      s.epoch = r.epoch;
      s.base = r.base;
      out.push_back(s);
    }
    auto& s = out.back();
    ++s.steps;
    s.t_end = r.t + 1;
    s.total_reward += r.reward;
    if (r.legal()) ++s.legal;
    if (r.legal() && r.breakdown.cls_prob && *r.breakdown.cls_prob > 0.5) ++s.bmg;
    s.done = s.done || r.done();
    s.truncated = r.truncated;
    if (r.value) s.values.push_back(*r.value);
    s.bundle_version = r.bundle_version;
  }
  for (auto& s : out) s.mean_reward = s.total_reward / s.steps;
  return out;
}

// ------------------------------------------------------------------ inputs

std::shared_ptr<const RunInputs> RunInputs::prepare(const RunConfig& config) {
  config.validate();
  auto in = std::make_shared<RunInputs>();
  in->config = config;
  in->table = std::make_shared<const ElementDescriptorTable>(
      ElementDescriptorTable::from_csv(config.data.elements_path()));
  in->data = load_dataset(config.data.dataset_path());
  if (in->data.regression.empty()) throw DataError("dataset has no regression rows");
  in->thresholds = compute_thresholds(in->data.regression, config.data.percentile, config.data.rule);
  in->reward = config.reward_config(in->thresholds);
  in->reward.validate();
  in->database = in->data.all_compositions();
  in->pool_source = in->data.bmg_compositions();
  if (in->pool_source.size() < 2) throw DataError("experience pool needs at least two BMG compositions");
  in->bases = derive_bases(in->database, config.data.bases);
  if (in->bases.empty()) throw DataError("no exploration bases could be derived");
  for (const auto& r : in->data.classification)
    if (r.label == ClassLabel::BMG) in->bmg_rows.push_back(&r);
  in->prompts = config.llm.templates.empty() ? PromptLibrary::load_default() : PromptLibrary::load(config.llm.templates);
  const auto knowledge_dir = default_data_dir() / "knowledge";
  in->rule = detail::read_file(config.llm.rule_file.empty() ? knowledge_dir / "rule.txt" : config.llm.rule_file);
  in->config.amr.knowledge =
      detail::read_file(config.llm.knowledge_file.empty() ? knowledge_dir / "knowledge.txt" : config.llm.knowledge_file);
  in->tau_var = variance_thresholds(in->data.regression, config.amr.tau_var_fraction);
  return in;
}

std::shared_ptr<LlmClient> make_llm(const LlmConfig& config) {
  if (config.live) {
    auto endpoint = config.endpoint;
    endpoint.apply_environment();
    endpoint.validate();
    return std::make_shared<HttpLlm>(endpoint);
  }
  return std::shared_ptr<LlmClient>(MockLlm::from_json(config.mock_spec()));
}

namespace {

std::uint64_t guidance_key(const RunInputs& in) {
  return fnv1a(hex64(in.config.guidance.hash()) + hex64(compositions_hash(in.database)) +
               std::to_string(in.data.regression.size()) + std::to_string(in.data.classification.size()));
}

}  // namespace

std::shared_ptr<const GuidanceBundle> load_or_train_guidance(const RunInputs& inputs,
                                                             const std::filesystem::path& path) {
  auto key_path = path;
  key_path += ".key";
  const auto key = hex64(guidance_key(inputs));
  if (std::filesystem::exists(path) && std::filesystem::exists(key_path)) {
    try {
      if (detail::read_file(key_path) == key)
        return std::make_shared<const GuidanceBundle>(GuidanceBundle::load(path, inputs.table));
    } catch (const Error& e) {
      warn(std::string("stored guidance bundle unusable, retraining: ") + e.what());
    }
  }
  auto bundle = std::make_shared<const GuidanceBundle>(train_guidance(inputs.data, inputs.table, inputs.config.guidance));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bundle->save(path);
  std::ofstream(key_path, std::ios::binary) << key;
  return bundle;
}

PoolKey pool_key(const RunInputs& inputs, const GuidanceBundle& bundle) {
  PoolKey key;
  key.dataset_hash = fnv1a(hex64(compositions_hash(inputs.pool_source)) + hex64(compositions_hash(inputs.database)));
  std::string features;
  for (const auto& f : bundle.features) features += f.name() + ";";
  key.bundle_version = bundle.version;
  key.config_hash = fnv1a(inputs.reward.to_json().dump() + inputs.thresholds.to_json().dump() +
                          environment_to_json(inputs.config.env).dump() + inputs.config.tep.to_json().dump() +
                          hex64(bundle.config_hash) + features);
  return key;
}

ExperiencePool load_or_build_pool(const RunInputs& inputs, std::shared_ptr<const GuidanceBundle> bundle,
                                  const std::filesystem::path& path) {
  const auto key = pool_key(inputs, *bundle);
  if (std::filesystem::exists(path)) {
    if (auto pool = ExperiencePool::load_if_matching(path, key)) return std::move(*pool);
  }
  BundlePredictor predictor(bundle);
  auto pool = ExperiencePool::build(inputs.pool_source, predictor, inputs.database, inputs.reward, inputs.config.env,
                                    inputs.config.tep);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  pool.save(path, key);
  return pool;
}

RewardBreakdown rescore_step(const StepRecord& record, const GuidanceBundle& bundle, const RunInputs& inputs) {
  const auto before = bundle.predict(record.s);
  std::optional<Prediction> after;
  if (record.legal()) after = bundle.predict(record.s_next);
  VisitCounter visits(inputs.reward.grid);
  if (record.breakdown.visits)
    for (std::uint64_t i = 1; i < *record.breakdown.visits; ++i) visits.increment(record.s_next);
  const EpisodeContext ctx{record.k, inputs.config.env.episode_steps, record.t, inputs.config.train.t_max};
  const auto& flags = record.breakdown.flags;
  const bool unavailable = std::find(flags.begin(), flags.end(), "kbr_unavailable") != flags.end();
  KbrScorer replay_kbr;
  if (record.breakdown.kbr_applied || unavailable) {
    const auto r_llm = record.breakdown.r_llm;
    replay_kbr = [r_llm](const Composition&, const Prediction&) { return r_llm; };
  }
  return compose_reward(before, record.legal(), record.s_next, after, ctx, inputs.database, visits, inputs.reward,
                        replay_kbr ? &replay_kbr : nullptr);
}

// ------------------------------------------------------------------ trainer

std::filesystem::path RunPaths::bundle(std::uint64_t version) const {
  return root / "bundles" / ("guidance_v" + std::to_string(version) + ".bin");
}

std::filesystem::path RunPaths::pool(std::uint64_t version) const {
  return root / "pools" / ("pool_v" + std::to_string(version) + ".bin");
}

Trainer::Trainer(std::shared_ptr<const RunInputs> inputs, std::shared_ptr<LlmClient> llm, RunPaths paths,
                 std::shared_ptr<const GuidanceBundle> bundle, Td3Agent agent)
    : inputs_(std::move(inputs)),
      llm_(std::move(llm)),
      paths_(std::move(paths)),
      agent_(std::move(agent)),
      replay_(inputs_->config.replay),
      visits_(inputs_->reward.grid),
      rng_(seeded(inputs_->config.seed, "trainer")) {
  if (!bundle) throw ModelError("trainer needs a guidance bundle");
  if (!llm_) throw ConfigError("trainer needs an LLM handle");
  predictor_ = std::make_unique<BundlePredictor>(bundle);
  KbrContext ctx;
  ctx.rule = inputs_->rule;
  ctx.similar_count = inputs_->config.llm.similar_count;
  ctx.library = &inputs_->prompts;
  ctx.client = llm_.get();
  ctx.references = inputs_->bmg_rows;
  kbr_ = make_kbr_scorer(std::move(ctx));
  std::filesystem::create_directories(paths_.root);
  if (!std::filesystem::exists(paths_.bundle(bundle->version))) {
    std::filesystem::create_directories(paths_.bundle(bundle->version).parent_path());
    bundle->save(paths_.bundle(bundle->version));
  }
  if (inputs_->config.train.use_tep) {
    pool_ = load_or_build_pool(*inputs_, bundle, paths_.pool(bundle->version));
    write_pool_stats(pool_, inputs_->config.tep, paths_.root / "pool_stats.json");
  }
}

Trainer::Trainer(std::shared_ptr<const RunInputs> inputs, std::shared_ptr<const GuidanceBundle> bundle,
                 std::shared_ptr<LlmClient> llm)
    : Trainer(inputs, llm, RunPaths{inputs->config.out_dir}, bundle, Td3Agent(inputs->config.agent)) {
  for (const auto& p : {paths_.trajectory(), paths_.episodes(), paths_.amr_events(), paths_.checkpoint()})
    std::filesystem::remove(p);
  json run = {{"config", inputs_->config.to_json()},
              {"trajectory_hash", hex64(inputs_->config.trajectory_hash())},
              {"thresholds", inputs_->thresholds.to_json()},
              {"bases", bases_manifest(inputs_->bases)},
              {"llm", llm_->describe()}};
  std::ofstream(paths_.run_config()) << run.dump(2) << '\n';
}

Trainer Trainer::resume(std::shared_ptr<const RunInputs> inputs, std::shared_ptr<LlmClient> llm,
                        const std::filesystem::path& run_dir) {
  RunPaths paths{run_dir};
  if (!std::filesystem::exists(paths.checkpoint()))
    throw DataError("no checkpoint in " + run_dir.string());
  auto in = ArchiveReader::open(paths.checkpoint(), "matdesign.trainer", kCheckpointVersion);
  if (in.get<std::uint64_t>() != inputs->config.trajectory_hash())
    throw ConfigError("checkpoint in " + run_dir.string() + " was written under a different configuration");
  const auto epoch = in.get<std::int64_t>();
  const auto t = in.get<std::int64_t>();
  const auto rng = in.get_string();
  const auto version = in.get<std::uint64_t>();
  auto agent = Td3Agent::read(in);
  auto replay = PrioritizedReplay::read(in);
  auto visits = VisitCounter::read(in);
  const auto traj_size = in.get<std::uint64_t>();
  const auto episodes_size = in.get<std::uint64_t>();
  const auto events_size = in.get<std::uint64_t>();

  auto bundle = std::make_shared<const GuidanceBundle>(GuidanceBundle::load(paths.bundle(version), inputs->table));
  Trainer tr(inputs, llm, paths, bundle, std::move(agent));
  tr.replay_ = std::move(replay);
  tr.visits_ = visits;
  restore_rng(tr.rng_, rng);
  tr.t_ = t;
  tr.epoch_ = epoch;
  for (const auto& [p, size] : {std::pair{paths.trajectory(), traj_size}, std::pair{paths.episodes(), episodes_size},
                                std::pair{paths.amr_events(), events_size}}) {
    if (file_size_or_zero(p) < size) throw DataError("log " + p.string() + " is shorter than its checkpoint");
    if (std::filesystem::exists(p)) std::filesystem::resize_file(p, size);
  }
  return tr;
}

TrainedPolicy load_trained(const RunInputs& inputs, const std::filesystem::path& run_dir) {
  RunPaths paths{run_dir};
  if (!std::filesystem::exists(paths.checkpoint())) throw DataError("no checkpoint in " + run_dir.string());
  auto in = ArchiveReader::open(paths.checkpoint(), "matdesign.trainer", Trainer::kCheckpointVersion);
  in.get<std::uint64_t>();  // trajectory hash
  const auto epoch = in.get<std::int64_t>();
  const auto t = in.get<std::int64_t>();
  in.get_string();  // RNG
  const auto version = in.get<std::uint64_t>();
  auto agent = Td3Agent::read(in);
  auto bundle = std::make_shared<const GuidanceBundle>(GuidanceBundle::load(paths.bundle(version), inputs.table));
  return TrainedPolicy{std::move(agent), std::move(bundle), epoch, t};
}

bool Trainer::finished() const {
  const auto& c = inputs_->config.train;
  return epoch_ >= c.epochs || t_ >= c.t_max;
}

void Trainer::install_bundle(std::shared_ptr<const GuidanceBundle> bundle) {
  const auto old_version = predictor_->bundle_version();
  std::filesystem::create_directories(paths_.bundle(bundle->version).parent_path());
  bundle->save(paths_.bundle(bundle->version));
  predictor_->swap_bundle(bundle);
  if (inputs_->config.train.use_tep) {
    pool_ = load_or_build_pool(*inputs_, bundle, paths_.pool(bundle->version));
    if (old_version != bundle->version) std::filesystem::remove(paths_.pool(old_version));
    write_pool_stats(pool_, inputs_->config.tep, paths_.root / "pool_stats.json");
  }
}

std::optional<RefinementEvent> Trainer::maybe_refine(const std::vector<StepRecord>& episode, EpisodeSummary& summary) {
  const auto& cfg = inputs_->config;
  if (!cfg.train.use_amr || episode.empty()) return std::nullopt;
  std::vector<Composition> window;
  Eigen::VectorXd rewards(static_cast<Eigen::Index>(episode.size()));
  Eigen::VectorXd values(static_cast<Eigen::Index>(episode.size()));
  for (std::size_t i = 0; i < episode.size(); ++i) {
    window.push_back(episode[i].s);
    rewards[static_cast<Eigen::Index>(i)] = episode[i].reward;
    values[static_cast<Eigen::Index>(i)] = episode[i].value.value_or(0.0);
  }
  const auto current = predictor_->bundle();
  RefineRequest req;
  req.window = window;
  req.t = t_;
  req.episode = epoch_;
  RefineHooks hooks;
  hooks.retrain = regressor_retrainer(inputs_->data.regression, *current, cfg.guidance);

  const auto vc = check_variance_trigger(window, *current, inputs_->tau_var, cfg.amr, t_, cfg.train.t_max);
  if (vc.fired) {
    const auto target = *vc.worst;
    req.kind = TriggerKind::Variance;
    req.target = target;
    req.observed = vc.variance[static_cast<std::size_t>(index_of(target))];
    req.tau_var = *inputs_->tau_var[static_cast<std::size_t>(index_of(target))];
    hooks.recheck = window_variance_recheck(window, target);
  } else {
    const auto cc = check_correlation_trigger(rewards, values, cfg.amr, t_, cfg.train.t_max);
    if (!cc.fired) return std::nullopt;
    req.kind = TriggerKind::Correlation;
    req.observed = cc.pearson;
    hooks.recheck = [&](const GuidanceBundle& candidate) -> std::optional<double> {
      Eigen::VectorXd r(rewards.size());
      for (std::size_t i = 0; i < episode.size(); ++i)
        r[static_cast<Eigen::Index>(i)] = rescore_step(episode[i], candidate, *inputs_).total;
      return metrics::pearson(r, values);
    };
  }
  auto out = refine(req, current, hooks, inputs_->prompts, *llm_, cfg.amr);
  summary.amr_trigger = std::string(trigger_name(req.kind));
  summary.amr_accepted = out.event.accepted;
  if (out.event.accepted) install_bundle(out.bundle);
  return out.event;
}

EpisodeSummary Trainer::run_epoch() {
  if (finished()) throw Error("training already reached its epoch or step limit");
  const auto& cfg = inputs_->config;
  const int t_ep = cfg.env.episode_steps;
  std::uniform_int_distribution<std::size_t> pick(0, inputs_->bases.size() - 1);
  const auto& base = inputs_->bases[pick(rng_)];
  Composition s = reset_state(base, rng_);
  Prediction pred_s = predictor_->predict(s);
  const KbrScorer* kbr = cfg.train.use_kbr ? &kbr_ : nullptr;

  std::vector<StepRecord> records;
  for (int k = 1; k <= t_ep; ++k) {
    const EpisodeContext ctx{k, t_ep, t_, cfg.train.t_max};
    StepRecord rec;
    rec.epoch = epoch_;
    rec.k = k;
    rec.t = t_;
    rec.base = base.symbol();
    rec.s = s;
    rec.value = agent_.value_of(s);
    const Composition raw = agent_.act(s, cfg.agent.exploration_noise);
    const auto transition = step(s, raw, base, cfg.env);
    const auto ev = evaluate_reward(pred_s, transition, ctx, *predictor_, inputs_->database, visits_, inputs_->reward, kbr);
    const auto term = is_terminal(ev.breakdown.done, ctx);
    rec.a = raw;
    rec.s_next = transition.next;
    rec.breakdown = ev.breakdown;
    rec.reward = ev.breakdown.total;
    if (ev.next_prediction) rec.props = ev.next_prediction->props;
    rec.bundle_version = predictor_->bundle_version();
    replay_.add(Experience{s, raw, transition.next, rec.reward, rec.done(), ExperienceSource::Live});
    ++t_;
    // The global cap may cut an episode short; that counts as truncation.
    rec.truncated = term.truncated || (!term.terminal && t_ >= cfg.train.t_max);
    records.push_back(rec);
    if (transition.legal) {
      s = transition.next;
      pred_s = *ev.next_prediction;
    }
    if (term.terminal || t_ >= cfg.train.t_max) break;
  }

  auto summary = summaries_from_trajectory(records).front();
  summary.bundle_version = predictor_->bundle_version();

  const auto event = maybe_refine(records, summary);
  summary.bundle_version = predictor_->bundle_version();

  const int n_updates = cfg.train.updates_per_episode > 0 ? cfg.train.updates_per_episode : summary.steps;
  if (replay_.size() >= cfg.train.effective_warmup()) {
    const bool tep = cfg.train.use_tep && !pool_.empty() &&
                     !pool_.above(pool_.mean_reward() + cfg.tep.margin).empty();
    if (cfg.train.use_tep && !tep) warn("experience pool has no entry above mean + margin; replacement skipped");
    double critic = 0.0, actor = 0.0;
    int actor_steps = 0;
    for (int u = 0; u < n_updates; ++u) {
      auto batch = replay_.sample(cfg.train.batch, rng_);
      if (tep) summary.tep_replaced += replace_with_pool(batch, pool_, summary.mean_reward, cfg.tep, rng_).replaced;
      const auto rep = agent_.update(batch);
      replay_.update_priorities(batch.buffer_index, rep.td_errors);
      critic += rep.critic_loss;
      if (rep.actor_loss) {
        actor += *rep.actor_loss;
        ++actor_steps;
      }
    }
    summary.updates = n_updates;
    summary.critic_loss = critic / n_updates;
    if (actor_steps > 0) summary.actor_loss = actor / actor_steps;
  }

  append_trajectory(paths_.trajectory(), records);
  append_lines(paths_.episodes(), {summary.to_json()});
  if (event) append_lines(paths_.amr_events(), {event->to_json()});
  ++epoch_;
  return summary;
}

void Trainer::run(std::optional<int> max_epochs) {
  const int every = inputs_->config.train.checkpoint_every;
  int ran = 0;
  bool saved = true;
  while (!finished() && (!max_epochs || ran < *max_epochs)) {
    try {
      run_epoch();
    } catch (const std::exception& e) {
      json failure = {{"epoch", epoch_}, {"t", t_}, {"error", e.what()}};
      std::ofstream(paths_.root / "failure.json") << failure.dump(2) << '\n';
      throw;
    }
    ++ran;
    saved = false;
    if ((every > 0 && epoch_ % every == 0) || finished()) {
      checkpoint();
      saved = true;
    }
  }
  if (!saved) checkpoint();
}

void Trainer::checkpoint() const {
  ArchiveWriter w("matdesign.trainer", kCheckpointVersion);
  w.put<std::uint64_t>(inputs_->config.trajectory_hash());
  w.put<std::int64_t>(epoch_);
  w.put<std::int64_t>(t_);
  w.put(rng_state(rng_));
  w.put<std::uint64_t>(predictor_->bundle_version());
  agent_.write(w);
  replay_.write(w);
  visits_.write(w);
  w.put<std::uint64_t>(file_size_or_zero(paths_.trajectory()));
  w.put<std::uint64_t>(file_size_or_zero(paths_.episodes()));
  w.put<std::uint64_t>(file_size_or_zero(paths_.amr_events()));
  auto tmp = paths_.checkpoint();
  tmp += ".tmp";
  w.save(tmp);
  std::filesystem::rename(tmp, paths_.checkpoint());
}

std::uint64_t Trainer::state_hash() const {
  ArchiveWriter w("matdesign.state", 1);
  w.put<std::int64_t>(epoch_);
  w.put<std::int64_t>(t_);
  w.put(rng_state(rng_));
  w.put<std::uint64_t>(predictor_->bundle_version());
  w.put<std::uint64_t>(agent_.state_hash());
  replay_.write(w);
  w.put<std::uint64_t>(visits_.fingerprint());
  std::uint64_t h = fnv1a(w.bytes());
  for (const auto& p : {paths_.trajectory(), paths_.episodes(), paths_.amr_events()}) h = file_hash(p, h);
  return h;
}

// ------------------------------------------------------------------ design

json DesignCandidate::to_json() const {
  return {{"formula", formula(composition)},
          {"composition", composition_json(composition)},
          {"cls_prob", prediction.cls_prob},
          {"props", props_json(prediction.props)},
          {"score", score},
          {"base", base},
          {"episode", episode},
          {"k", k}};
}

json DesignReport::to_json() const {
  json list = json::array();
  for (const auto& c : candidates) list.push_back(c.to_json());
  return {{"episodes", episodes}, {"steps", steps}, {"hits", hits}, {"unique", candidates.size()}, {"candidates", list}};
}

double design_score(const Prediction& p, const RewardConfig& reward) {
  double score = 0.0, weight = 0.0;
  for (int i = 0; i < kPropertyCount; ++i) {
    const auto& tau = reward.thresholds.tau[static_cast<std::size_t>(i)];
    const double w = reward.thresholds.weight[static_cast<std::size_t>(i)];
    if (!tau || w <= 0.0) continue;
    const double ratio = reward.higher_is_better[static_cast<std::size_t>(i)] ? p.props[i] / *tau : *tau / p.props[i];
    score += w * ratio;
    weight += w;
  }
  return weight > 0.0 ? score / weight : 0.0;
}

DesignReport design(const Policy& policy, Predictor& predictor, const std::vector<ExplorationBase>& bases,
                    const RewardConfig& reward, const EnvironmentConfig& env, int episodes, std::uint64_t seed) {
  if (bases.empty()) throw ConfigError("design needs at least one exploration base");
  if (episodes < 0) throw ConfigError("design episode count must be >= 0");
  auto rng = seeded(seed, "design");
  std::uniform_int_distribution<std::size_t> pick(0, bases.size() - 1);
  DesignReport report;
  std::vector<DesignCandidate> hits;
  for (int e = 0; e < episodes; ++e) {
    const auto& base = bases[pick(rng)];
    Composition s = reset_state(base, rng);
    for (int k = 1; k <= env.episode_steps; ++k) {
      const Composition raw = policy(s);
      const auto tr = step(s, raw, base, env);
      ++report.steps;
      if (!tr.legal) continue;
      s = tr.next;
      const auto p = predictor.predict(s);
      if (p.cls_prob > 0.5 && thresholds_met(p.props, reward)) hits.push_back({s, p, design_score(p, reward), base.symbol(), e, k});
    }
    ++report.episodes;
  }
  report.hits = static_cast<int>(hits.size());
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  for (auto& h : hits) {
    const bool dup = std::any_of(report.candidates.begin(), report.candidates.end(), [&](const DesignCandidate& c) {
      return max_norm_distance(c.composition, h.composition) <= reward.match_tolerance;
    });
    if (!dup) report.candidates.push_back(std::move(h));
  }
  return report;
}

Policy greedy_policy(const Td3Agent& agent) {
  return [&agent](const Composition& s) -> Eigen::VectorXd { return agent.policy(s); };
}

Policy random_policy(double delta_max, std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seeded(seed, "random-policy"));
  return [rng, delta_max](const Composition&) -> Eigen::VectorXd {
    std::uniform_real_distribution<double> u(-delta_max, delta_max);
    Eigen::VectorXd a(kElementCount);
    for (int i = 0; i < kElementCount; ++i) a[i] = u(*rng);
    return a;
  };
}

}  // namespace matdesign
