#include "matdesign/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "matdesign/common.hpp"

namespace matdesign {
namespace {

using nlohmann::json;

constexpr std::uint64_t kSaturated = std::numeric_limits<std::uint64_t>::max();

std::uint64_t sat_add(std::uint64_t a, std::uint64_t b) { return a > kSaturated - b ? kSaturated : a + b; }

std::mt19937_64 seeded(std::uint64_t seed, std::string_view stream) { return std::mt19937_64(fnv1a(stream, seed)); }

struct IntLattice {
  std::vector<int> elements;
  std::vector<long> lo, hi;
  long total = 0;
  double h = 1.0;
};

IntLattice integer_lattice(const ExplorationBase& base, double h) {
  if (!(h > 0.0)) throw ConfigError("grid resolution must be positive");
  const double n = 100.0 / h;
  if (std::abs(n - std::round(n)) > 1e-9 * n) throw ConfigError("grid resolution must divide 100 at.%");
  IntLattice L;
  L.h = h;
  L.total = std::lround(n);
  for (int e : base.allowed) {
    L.elements.push_back(e);
    L.lo.push_back(static_cast<long>(std::ceil(base.lo[e] / h - 1e-9)));
    L.hi.push_back(static_cast<long>(std::floor(base.hi[e] / h + 1e-9)));
  }
  return L;
}

void enumerate(const IntLattice& L, std::size_t i, long remaining, const std::vector<long>& min_tail,
               const std::vector<long>& max_tail, std::vector<long>& n, std::vector<Composition>& out,
               std::size_t limit) {
  if (out.size() >= limit) return;
  if (i == L.elements.size()) {
    if (remaining != 0) return;
    Composition c = Composition::Zero();
    for (std::size_t j = 0; j < n.size(); ++j) c[L.elements[j]] = static_cast<double>(n[j]) * L.h;
    out.push_back(c);
    return;
  }
  const long from = std::max(L.lo[i], remaining - max_tail[i + 1]);
  const long to = std::min(L.hi[i], remaining - min_tail[i + 1]);
  for (long v = from; v <= to && out.size() < limit; ++v) {
    n[i] = v;
    enumerate(L, i + 1, remaining - v, min_tail, max_tail, n, out, limit);
  }
}

Prediction predict_or_stop(Predictor& predictor, const Composition& c, bool& exhausted) {
  try {
    return predictor.predict(c);
  } catch (const BudgetExhausted&) {
    exhausted = true;
    return {};
  }
}

std::string fmt(const std::optional<double>& v, int precision = 2) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << *v;
  return s.str();
}

}  // namespace

// ------------------------------------------------------------------ rates

std::optional<double> Rate::percent() const {
  if (denominator == 0) return std::nullopt;
  return 100.0 * static_cast<double>(numerator) / static_cast<double>(denominator);
}

json Rate::to_json() const {
  json j = {{"numerator", numerator}, {"denominator", denominator}};
  const auto p = percent();
  j["percent"] = p ? json(*p) : json(nullptr);
  if (!p) j["flag"] = "zero_denominator";
  return j;
}

json SuccessRates::to_json() const {
  json sr = json::object();
  for (std::size_t i = 0; i < sr80.size(); ++i) sr[std::string(kSr80Columns[i])] = sr80[i].to_json();
  return {{"SR_legal", legal.to_json()}, {"SR_cls", cls.to_json()}, {"SR_80", sr},
          {"SR_done", done.to_json()},   {"steps", steps},          {"epochs", epochs}};
}

SuccessRates success_rates(const std::vector<StepRecord>& log, const ThresholdSet& thresholds) {
  if (log.empty()) throw DataError("success rates need a non-empty trajectory log");
  SuccessRates r;
  std::map<std::int64_t, bool> epochs;
  const auto tau = [&](Property p) { return thresholds.tau[static_cast<std::size_t>(index_of(p))]; };
  const std::array<std::optional<double>, 5> limits{tau(Property::Dmax), thresholds.tg_tl_ratio, tau(Property::SigmaY),
                                                    tau(Property::E), tau(Property::Elongation)};
  for (const auto& s : log) {
    ++r.steps;
    epochs[s.epoch] = epochs[s.epoch] || s.done();
    if (!s.legal()) continue;
    ++r.legal.numerator;
    if (!(s.breakdown.cls_prob && *s.breakdown.cls_prob > 0.5)) continue;
    ++r.cls.numerator;
    if (!s.props) continue;
    const auto& p = *s.props;
    const std::array<double, 5> values{p[index_of(Property::Dmax)],
                                       p[index_of(Property::Tg)] / p[index_of(Property::Tl)],
                                       p[index_of(Property::SigmaY)], p[index_of(Property::E)],
                                       p[index_of(Property::Elongation)]};
    for (std::size_t i = 0; i < values.size(); ++i)
      if (limits[i] && values[i] >= *limits[i]) ++r.sr80[i].numerator;
  }
  r.legal.denominator = r.steps;
  r.cls.denominator = r.legal.numerator;
  for (std::size_t i = 0; i < r.sr80.size(); ++i) r.sr80[i].denominator = limits[i] ? r.cls.numerator : 0;
  r.epochs = epochs.size();
  r.done.denominator = r.epochs;
  for (const auto& [e, d] : epochs) r.done.numerator += d ? 1 : 0;
  return r;
}

// ------------------------------------------------------------------ baselines

json BaselineRun::to_json() const {
  return {{"method", method},
          {"steps", log.size()},
          {"calls", calls},
          {"exhausted", exhausted},
          {"resolution", resolution ? json(*resolution) : json(nullptr)}};
}

BaselineRun random_baseline(const RunInputs& inputs, Predictor& predictor, std::uint64_t seed) {
  const auto& cfg = inputs.config;
  BaselineRun run;
  run.method = "random";
  auto rng = seeded(seed, "random-baseline");
  std::uniform_int_distribution<std::size_t> pick(0, inputs.bases.size() - 1);
  std::uniform_real_distribution<double> u(-cfg.env.delta_max, cfg.env.delta_max);
  VisitCounter visits(inputs.reward.grid);
  const std::uint64_t start = predictor.calls();
  // The configured budget applies even to an unbudgeted predictor.
  const auto spent = [&] { return predictor.calls() - start >= cfg.eval.budget; };
  std::int64_t t = 0;
  const std::int64_t t_max = std::max<std::int64_t>(static_cast<std::int64_t>(cfg.eval.budget), cfg.env.episode_steps);
  for (std::int64_t epoch = 0; !run.exhausted; ++epoch) {
    if (spent()) {
      run.exhausted = true;
      break;
    }
    const auto& base = inputs.bases[pick(rng)];
    Composition s = reset_state(base, rng);
    auto pred_s = predict_or_stop(predictor, s, run.exhausted);
    if (run.exhausted) break;
    for (int k = 1; k <= cfg.env.episode_steps; ++k) {
      Composition raw = Composition::Zero();
      for (int e : base.allowed) raw[e] = u(rng);
      const auto tr = step(s, raw, base, cfg.env);
      if (tr.legal && spent()) {
        run.exhausted = true;
        break;
      }
      const EpisodeContext ctx{k, cfg.env.episode_steps, t, t_max};
      StepEvaluation ev;
      try {
        ev = evaluate_reward(pred_s, tr, ctx, predictor, inputs.database, visits, inputs.reward, nullptr);
      } catch (const BudgetExhausted&) {
        run.exhausted = true;
        break;
      }
      const auto term = is_terminal(ev.breakdown.done, ctx);
      StepRecord rec;
      rec.epoch = epoch;
      rec.k = k;
      rec.t = t++;
      rec.base = base.symbol();
      rec.s = s;
      rec.a = raw;
      rec.s_next = tr.next;
      rec.breakdown = ev.breakdown;
      rec.reward = ev.breakdown.total;
      if (ev.next_prediction) rec.props = ev.next_prediction->props;
      rec.truncated = term.truncated;
      rec.bundle_version = predictor.bundle_version();
      run.log.push_back(std::move(rec));
      if (tr.legal) {
        s = tr.next;
        pred_s = *ev.next_prediction;
      }
      if (term.terminal) break;
    }
  }
  run.calls = predictor.calls() - start;
  return run;
}

std::uint64_t lattice_count(const ExplorationBase& base, double h) {
  const auto L = integer_lattice(base, h);
  // ways[r] = number of assignments of the elements seen so far summing to r.
  std::vector<std::uint64_t> ways(static_cast<std::size_t>(L.total) + 1, 0);
  ways[0] = 1;
  for (std::size_t i = 0; i < L.elements.size(); ++i) {
    std::vector<std::uint64_t> next(ways.size(), 0);
    const long lo = std::max(0L, L.lo[i]);
    for (long r = 0; r <= L.total; ++r) {
      if (ways[static_cast<std::size_t>(r)] == 0) continue;
      for (long v = lo; v <= L.hi[i] && r + v <= L.total; ++v)
        next[static_cast<std::size_t>(r + v)] = sat_add(next[static_cast<std::size_t>(r + v)], ways[static_cast<std::size_t>(r)]);
    }
    ways.swap(next);
  }
  return ways[static_cast<std::size_t>(L.total)];
}

std::vector<Composition> lattice_points(const ExplorationBase& base, double h, std::size_t limit) {
  auto L = integer_lattice(base, h);
  for (auto& v : L.lo) v = std::max(0L, v);
  const std::size_t m = L.elements.size();
  std::vector<long> min_tail(m + 1, 0), max_tail(m + 1, 0);
  for (std::size_t i = m; i-- > 0;) {
    min_tail[i] = min_tail[i + 1] + L.lo[i];
    max_tail[i] = max_tail[i + 1] + std::max(L.hi[i], L.lo[i] - 1);
  }
  std::vector<Composition> out;
  std::vector<long> n(m, 0);
  enumerate(L, 0, L.total, min_tail, max_tail, n, out, limit);
  return out;
}

double choose_resolution(const std::vector<ExplorationBase>& bases, std::uint64_t budget) {
  static constexpr std::array<double, 12> ladder{0.1, 0.2, 0.25, 0.5, 1, 2, 2.5, 5, 10, 20, 25, 50};
  for (double h : ladder) {
    std::uint64_t total = 0;
    for (const auto& b : bases) total = sat_add(total, lattice_count(b, h));
    if (total <= budget && total > 0) return h;
  }
  return ladder.back();
}

BaselineRun grid_baseline(const RunInputs& inputs, Predictor& predictor, std::optional<double> resolution) {
  const auto& cfg = inputs.config;
  const double h = resolution ? *resolution : choose_resolution(inputs.bases, cfg.eval.budget);
  BaselineRun run;
  run.method = "grid";
  run.resolution = h;
  std::uint64_t total = 0;
  for (const auto& b : inputs.bases) total = sat_add(total, lattice_count(b, h));
  if (total == 0) throw ConfigError("grid resolution " + fmt(h) + " at.% leaves no lattice points inside the base ranges");

  const std::uint64_t start = predictor.calls();
  const std::size_t share = std::max<std::uint64_t>(1, cfg.eval.budget / inputs.bases.size());
  const int t_ep = cfg.env.episode_steps;
  VisitCounter visits(inputs.reward.grid);
  std::int64_t t = 0, epoch = 0;
  const std::int64_t t_max = std::max<std::int64_t>(static_cast<std::int64_t>(cfg.eval.budget), t_ep);
  Prediction prev_pred;
  for (const auto& base : inputs.bases) {
    if (run.exhausted) break;
    const auto points = lattice_points(base, h, share);
    for (std::size_t i = 0; i < points.size() && !run.exhausted; ++i) {
      const int k = static_cast<int>(i % static_cast<std::size_t>(t_ep)) + 1;
      if (k == 1 && i > 0) ++epoch;
      const auto pred = predict_or_stop(predictor, points[i], run.exhausted);
      if (run.exhausted) break;
      if (k == 1) prev_pred = pred;
      const Composition& prev = k == 1 ? points[i] : points[i - 1];
      const EpisodeContext ctx{k, t_ep, t, t_max};
      StepRecord rec;
      rec.epoch = epoch;
      rec.k = k;
      rec.t = t++;
      rec.base = base.symbol();
      rec.s = prev;
      rec.a = points[i] - prev;
      rec.s_next = points[i];
      // The previous lattice point is the "before" state of the step.
      rec.breakdown = compose_reward(prev_pred, true, points[i], pred, ctx, inputs.database, visits, inputs.reward, nullptr);
      prev_pred = pred;
      rec.reward = rec.breakdown.total;
      rec.props = pred.props;
      rec.truncated = k == t_ep;
      rec.bundle_version = predictor.bundle_version();
      run.log.push_back(std::move(rec));
    }
    if (!points.empty()) ++epoch;
  }
  run.calls = predictor.calls() - start;
  return run;
}

// ------------------------------------------------------------------ policy evaluation

json PolicyEvaluation::to_json() const {
  return {{"episodes", episode_means.size()}, {"mean", mean},   {"stddev", stddev},
          {"steps", steps},                   {"legal", legal}, {"episode_means", episode_means}};
}

PolicyEvaluation evaluate_policy(const Policy& policy, std::shared_ptr<const GuidanceBundle> bundle,
                                 const RunInputs& inputs, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw ConfigError("policy evaluation needs at least one episode");
  const auto& cfg = inputs.config;
  BundlePredictor predictor(std::move(bundle));
  VisitCounter visits(inputs.reward.grid);
  auto rng = seeded(seed, "policy-evaluation");
  std::uniform_int_distribution<std::size_t> pick(0, inputs.bases.size() - 1);
  PolicyEvaluation out;
  for (int e = 0; e < episodes; ++e) {
    const auto& base = inputs.bases[pick(rng)];
    Composition s = reset_state(base, rng);
    auto pred_s = predictor.predict(s);
    double total = 0.0;
    int steps = 0;
    for (int k = 1; k <= cfg.env.episode_steps; ++k) {
      const EpisodeContext ctx{k, cfg.env.episode_steps, 0, cfg.train.t_max};
      const auto tr = step(s, policy(s), base, cfg.env);
      const auto ev = evaluate_reward(pred_s, tr, ctx, predictor, inputs.database, visits, inputs.reward, nullptr);
      total += ev.breakdown.total;
      ++steps;
      if (tr.legal) {
        ++out.legal;
        s = tr.next;
        pred_s = *ev.next_prediction;
      }
      if (is_terminal(ev.breakdown.done, ctx).terminal) break;
    }
    out.steps += static_cast<std::uint64_t>(steps);
    out.episode_means.push_back(total / steps);
  }
  const Eigen::Map<const Eigen::VectorXd> m(out.episode_means.data(), static_cast<Eigen::Index>(out.episode_means.size()));
  out.mean = m.mean();
  out.stddev = std::sqrt((m.array() - out.mean).square().mean());
  return out;
}

// ------------------------------------------------------------------ report

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

std::vector<std::string> rate_cells(const SuccessRates& r) {
  std::vector<std::string> cells{fmt(r.legal.percent()), fmt(r.cls.percent())};
  for (const auto& s : r.sr80) cells.push_back(fmt(s.percent()));
  cells.push_back(fmt(r.done.percent()));
  return cells;
}

}  // namespace

json write_report(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir) {
  const RunPaths paths{run_dir};
  if (!std::filesystem::exists(paths.run_config())) throw DataError("no run.json in " + run_dir.string());
  std::ifstream run_in(paths.run_config());
  json run;
  try {
    run = json::parse(run_in);
  } catch (const json::exception& e) {
    throw DataError("run.json unreadable: " + std::string(e.what()));
  }
  const auto thresholds = ThresholdSet::from_json(run.at("thresholds"));
  std::filesystem::create_directories(out_dir);

  json summary = {{"run_dir", run_dir.string()}, {"methods", json::array()}};
  std::vector<std::pair<std::string, SuccessRates>> rows;
  const std::vector<std::pair<std::string, std::filesystem::path>> sources{
      {"TD3 (this run)", paths.trajectory()},
      {"Random", run_dir / "baseline_random.jsonl"},
      {"Grid Search", run_dir / "baseline_grid.jsonl"}};
  for (const auto& [name, path] : sources) {
    if (!std::filesystem::exists(path)) continue;
    const auto log = read_trajectory(path);
    if (log.empty()) continue;
    const auto rates = success_rates(log, thresholds);
    rows.emplace_back(name, rates);
    json m = rates.to_json();
    m["method"] = name;
    summary["methods"].push_back(m);
  }

  // Table-shaped text and CSV.
  std::vector<std::string> header{"Method", "SR_legal", "SR_cls"};
  for (auto c : kSr80Columns) header.emplace_back("SR_80 " + std::string(c));
  header.emplace_back("SR_done");
  std::ostringstream txt, csv;
  txt << "Success rates (%) for " << run_dir.string() << "\n\n";
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& [name, r] : rows) {
    width[0] = std::max(width[0], name.size());
    const auto cells = rate_cells(r);
    for (std::size_t i = 0; i < cells.size(); ++i) width[i + 1] = std::max(width[i + 1], cells[i].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      txt << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << (i ? std::right : std::left) << cells[i];
    txt << '\n';
  };
  line(header);
  for (std::size_t i = 0; i < header.size(); ++i) csv << (i ? "," : "") << header[i];
  csv << '\n';
  for (const auto& [name, r] : rows) {
    auto cells = rate_cells(r);
    cells.insert(cells.begin(), name);
    line(cells);
    for (std::size_t i = 0; i < cells.size(); ++i) csv << (i ? "," : "") << cells[i];
    csv << '\n';
  }
  txt << "\nn/a marks a zero denominator.\n";

  // Per-episode series.
  if (std::filesystem::exists(paths.episodes())) {
    std::ostringstream series;
    series << "epoch,base,steps,t_end,mean_reward,total_reward,done,legal,bmg,mean_value,critic_loss,actor_loss,"
              "tep_replaced,amr_trigger,amr_accepted,bundle_version\n";
    double reward_sum = 0.0;
    std::size_t n = 0;
    for (const auto& doc : read_json_lines(paths.episodes())) {
      const auto e = EpisodeSummary::from_json(doc);
      double mv = 0.0;
      for (double v : e.values) mv += v;
      if (!e.values.empty()) mv /= static_cast<double>(e.values.size());
      series << e.epoch << ',' << e.base << ',' << e.steps << ',' << e.t_end << ',' << e.mean_reward << ','
             << e.total_reward << ',' << e.done << ',' << e.legal << ',' << e.bmg << ',' << mv << ','
             << (e.critic_loss ? std::to_string(*e.critic_loss) : "") << ','
             << (e.actor_loss ? std::to_string(*e.actor_loss) : "") << ',' << e.tep_replaced << ','
             << e.amr_trigger.value_or("") << ',' << e.amr_accepted << ',' << e.bundle_version << '\n';
      reward_sum += e.mean_reward;
      ++n;
    }
    write_text(out_dir / "episodes.csv", series.str());
    summary["episodes"] = n;
    if (n) summary["mean_episode_reward"] = reward_sum / static_cast<double>(n);
  }

  if (std::filesystem::exists(paths.amr_events())) {
    std::ostringstream events;
    events << "episode,t,kind,target,observed,threshold,baseline_r2,iterations,accepted,version_before,version_after\n";
    std::size_t accepted = 0, total = 0;
    for (const auto& e : read_json_lines(paths.amr_events())) {
      auto num = [&](const char* k) { return e.contains(k) && !e[k].is_null() ? e[k].dump() : std::string(); };
      events << e.value("episode", 0) << ',' << e.value("t", 0) << ',' << e.value("kind", std::string()) << ','
             << (e.contains("target") && e["target"].is_string() ? e["target"].get<std::string>() : "") << ','
             << num("observed") << ',' << num("threshold") << ',' << num("baseline_r2") << ','
             << e.value("iterations", json::array()).size() << ',' << e.value("accepted", false) << ','
             << num("version_before") << ',' << num("version_after") << '\n';
      ++total;
      accepted += e.value("accepted", false) ? 1 : 0;
    }
    write_text(out_dir / "amr_events.csv", events.str());
    summary["amr"] = {{"events", total}, {"accepted", accepted}};
    txt << "Refinement events: " << total << " (" << accepted << " accepted)\n";
  }

  const auto stats_path = run_dir / "pool_stats.json";
  if (std::filesystem::exists(stats_path)) {
    std::ifstream in(stats_path);
    const auto stats = json::parse(in);
    std::ostringstream hist;
    hist << "bin_lo,bin_hi,count\n";
    const auto counts = stats.at("histogram").get<std::vector<std::size_t>>();
    const double lo = stats.at("lo").get<double>(), hi = stats.at("hi").get<double>();
    const double w = (hi - lo) / static_cast<double>(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i)
      hist << lo + w * static_cast<double>(i) << ',' << lo + w * static_cast<double>(i + 1) << ',' << counts[i] << '\n';
    write_text(out_dir / "tep_histogram.csv", hist.str());
    summary["tep"] = {{"mean", stats.at("mean")}, {"fraction_in_band", stats.at("fraction_in_band")},
                      {"size", stats.at("size")}};
    txt << "Experience pool: " << stats.at("size").get<std::size_t>() << " entries, mean reward "
        << fmt(stats.at("mean").get<double>(), 3) << ", " << fmt(100.0 * stats.at("fraction_in_band").get<double>())
        << "% in [0.4, 0.6]\n";
  }

  write_text(out_dir / "summary.txt", txt.str());
  write_text(out_dir / "summary.csv", csv.str());
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

}  // namespace matdesign
