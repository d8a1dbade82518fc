#include "matdesign/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "matdesign/common.hpp"
#include "text_util.hpp"

namespace matdesign {

std::optional<Property> property_from_name(std::string_view name) {
  for (int i = 0; i < kPropertyCount; ++i)
    if (kPropertyNames[i] == name) return static_cast<Property>(i);
  return std::nullopt;
}

std::string_view label_name(ClassLabel label) {
  switch (label) {
    case ClassLabel::RMG: return "RMG";
    case ClassLabel::CRA: return "CRA";
    case ClassLabel::BMG: return "BMG";
  }
  return "?";
}

std::optional<ClassLabel> label_from_name(std::string_view name) {
  if (name == "RMG") return ClassLabel::RMG;
  if (name == "CRA") return ClassLabel::CRA;
  if (name == "BMG") return ClassLabel::BMG;
  return std::nullopt;
}

bool DatasetRow::has_any_property() const {
  return std::any_of(properties.begin(), properties.end(), [](const auto& v) { return v.has_value(); });
}

namespace {

void append_unique(std::vector<Composition>& out, const Composition& c) {
  for (const auto& existing : out)
    if (existing == c) return;
  out.push_back(c);
}

}  // namespace

std::vector<Composition> Dataset::all_compositions() const {
  std::vector<Composition> out;
  for (const auto& r : regression) append_unique(out, r.composition);
  for (const auto& r : classification) append_unique(out, r.composition);
  return out;
}

std::vector<Composition> Dataset::bmg_compositions() const {
  std::vector<Composition> out;
  for (const auto& r : classification)
    if (r.label == ClassLabel::BMG) append_unique(out, r.composition);
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, char delimiter) {
  if (!std::filesystem::exists(path)) throw DataError("dataset not found: " + path.string());
  return parse_dataset(detail::read_file(path), delimiter);
}

Dataset parse_dataset(std::string_view text, char delimiter) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  const auto header = detail::split_delimited(line, delimiter);
  std::array<int, kElementCount> element_col;
  std::array<int, kPropertyCount> property_col;
  element_col.fill(-1);
  property_col.fill(-1);
  int label_col = -1;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const auto& name = header[j];
    if (auto e = element_index(name)) {
      element_col[*e] = static_cast<int>(j);
    } else if (auto p = property_from_name(name)) {
      property_col[index_of(*p)] = static_cast<int>(j);
    } else if (name == "label") {
      label_col = static_cast<int>(j);
    } else {
      throw DataError("unexpected column '" + name + "' in dataset header");
    }
  }
  std::string missing;
  for (int i = 0; i < kElementCount; ++i)
    if (element_col[i] < 0) missing += " " + std::string(kElementSymbols[i]);
  for (int i = 0; i < kPropertyCount; ++i)
    if (property_col[i] < 0) missing += " " + std::string(kPropertyNames[i]);
  if (label_col < 0) missing += " label";
  if (!missing.empty()) throw DataError("dataset header lacks columns:" + missing);

  Dataset ds;
  std::size_t line_no = 1;
  auto reject = [&](std::string msg) { ds.rejected.push_back({line_no, std::move(msg)}); };

  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_delimited(line, delimiter);
    if (fields.size() != header.size()) {
      reject("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
      continue;
    }
    DatasetRow row;
    row.line = line_no;
    bool ok = true;
    for (int i = 0; i < kElementCount && ok; ++i) {
      const auto& f = fields[element_col[i]];
      if (detail::trim(f).empty()) continue;
      const auto v = detail::parse_double(f);
      if (!v) {
        reject("non-numeric fraction for " + std::string(kElementSymbols[i]) + ": '" + f + "'");
        ok = false;
      } else {
        row.composition[i] = *v;
      }
    }
    if (!ok) continue;
    if ((row.composition.array() < 0.0).any()) {
      reject("negative atomic fraction");
      continue;
    }
    const double sum = row.composition.sum();
    if (std::abs(sum - 100.0) > 0.5) {
      reject("fractions sum to " + std::to_string(sum) + " (outside 100 +- 0.5)");
      continue;
    }
    row.composition = renormalized(row.composition);
    if (auto why = composition_violation(row.composition, CompositionRole::DatasetRow); !why.empty()) {
      reject(why);
      continue;
    }
    for (int p = 0; p < kPropertyCount && ok; ++p) {
      const auto& f = fields[property_col[p]];
      if (detail::trim(f).empty()) continue;
      const auto v = detail::parse_double(f);
      if (!v || !std::isfinite(*v) || *v < 0.0) {
        reject("invalid value for " + std::string(kPropertyNames[p]) + ": '" + f + "'");
        ok = false;
      } else {
        row.properties[p] = *v;
      }
    }
    if (!ok) continue;
    const auto& lf = fields[label_col];
    if (!detail::trim(lf).empty()) {
      row.label = label_from_name(detail::trim(lf));
      if (!row.label) {
        reject("unknown label '" + lf + "'");
        continue;
      }
    }
    if (!row.label && !row.has_any_property()) {
      reject("row has neither properties nor a label");
      continue;
    }
    ++ds.parsed_rows;
    if (row.label) {
      ++ds.class_counts[std::string(label_name(*row.label))];
      ds.classification.push_back(row);
    }
    if (row.has_any_property()) {
      for (int p = 0; p < kPropertyCount; ++p)
        if (row.properties[p]) ++ds.property_counts[std::string(kPropertyNames[p])];
      ds.regression.push_back(std::move(row));
    }
  }
  for (const auto& d : ds.rejected) warn("dataset line " + std::to_string(d.line) + ": " + d.message);
  return ds;
}

std::string_view percentile_rule_name(PercentileRule rule) {
  switch (rule) {
    case PercentileRule::Linear: return "linear";
    case PercentileRule::Lower: return "lower";
    case PercentileRule::Higher: return "higher";
    case PercentileRule::Nearest: return "nearest";
    case PercentileRule::Midpoint: return "midpoint";
    case PercentileRule::Hazen: return "hazen";
    case PercentileRule::Weibull: return "weibull";
  }
  return "?";
}

double percentile(std::vector<double> values, double p, PercentileRule rule) {
  if (values.empty()) throw DataError("percentile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw DataError("percentile fraction outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  const double last = n - 1.0;
  auto at = [&](double idx) { return values[static_cast<std::size_t>(idx)]; };
  auto interpolate = [&](double h) {
    h = std::clamp(h, 0.0, last);
    const double lo = std::floor(h);
    const double hi = std::ceil(h);
    return at(lo) + (h - lo) * (at(hi) - at(lo));
  };
  const double h = last * p;
  switch (rule) {
    case PercentileRule::Linear: return interpolate(h);
    case PercentileRule::Lower: return at(std::floor(h));
    case PercentileRule::Higher: return at(std::ceil(h));
    case PercentileRule::Nearest: return at(std::nearbyint(h));
    case PercentileRule::Midpoint: return 0.5 * (at(std::floor(h)) + at(std::ceil(h)));
    case PercentileRule::Hazen: return interpolate(n * p - 0.5);
    case PercentileRule::Weibull: return interpolate((n + 1.0) * p - 1.0);
  }
  return interpolate(h);
}

void ThresholdSet::validate() const {
  double sum = 0.0;
  for (int p = 0; p < kPropertyCount; ++p) {
    if (tau[p] && !(*tau[p] > 0.0))
      throw ConfigError("threshold for " + std::string(kPropertyNames[p]) + " must be positive");
    if (!(weight[p] >= 0.0)) throw ConfigError("weights must be non-negative");
    if (!tau[p] && weight[p] != 0.0)
      throw ConfigError("weight set for " + std::string(kPropertyNames[p]) + " without a threshold");
    sum += weight[p];
  }
  if (tg_tl_ratio && !(*tg_tl_ratio > 0.0)) throw ConfigError("Tg/Tl threshold must be positive");
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("threshold weights must sum to 1");
}

std::vector<Property> ThresholdSet::active_properties() const {
  std::vector<Property> out;
  for (int p = 0; p < kPropertyCount; ++p)
    if (tau[p] && weight[p] > 0.0) out.push_back(static_cast<Property>(p));
  return out;
}

nlohmann::json ThresholdSet::to_json() const {
  nlohmann::json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["percentile"] = percentile;
  doc["percentile_rule"] = std::string(percentile_rule_name(rule));
  auto& props = doc["properties"];
  props = nlohmann::json::object();
  for (int p = 0; p < kPropertyCount; ++p) {
    nlohmann::json entry;
    entry["unit"] = std::string(kPropertyUnits[p]);
    entry["tau"] = tau[p] ? nlohmann::json(*tau[p]) : nlohmann::json(nullptr);
    entry["weight"] = weight[p];
    props[std::string(kPropertyNames[p])] = entry;
  }
  doc["tg_tl_ratio"] = {{"unit", "dimensionless"},
                        {"tau", tg_tl_ratio ? nlohmann::json(*tg_tl_ratio) : nlohmann::json(nullptr)}};
  doc["flagged"] = flagged;
  return doc;
}

ThresholdSet ThresholdSet::from_json(const nlohmann::json& doc) {
  if (!doc.contains("schema_version") || doc["schema_version"].get<int>() != kSchemaVersion)
    throw ConfigError("threshold document has unsupported schema_version");
  ThresholdSet t;
  t.percentile = doc.at("percentile").get<double>();
  const auto rule = doc.value("percentile_rule", std::string("linear"));
  for (auto r : {PercentileRule::Linear, PercentileRule::Lower, PercentileRule::Higher, PercentileRule::Nearest,
                 PercentileRule::Midpoint, PercentileRule::Hazen, PercentileRule::Weibull})
    if (percentile_rule_name(r) == rule) t.rule = r;
  const auto& props = doc.at("properties");
  for (int p = 0; p < kPropertyCount; ++p) {
    const std::string name(kPropertyNames[p]);
    if (!props.contains(name)) continue;
    const auto& entry = props[name];
    if (entry.contains("unit") && entry["unit"].get<std::string>() != kPropertyUnits[p])
      throw ConfigError("threshold for " + name + " uses unit " + entry["unit"].get<std::string>());
    if (!entry.at("tau").is_null()) t.tau[p] = entry["tau"].get<double>();
    t.weight[p] = entry.value("weight", 0.0);
  }
  if (doc.contains("tg_tl_ratio") && !doc["tg_tl_ratio"].at("tau").is_null())
    t.tg_tl_ratio = doc["tg_tl_ratio"]["tau"].get<double>();
  t.flagged = doc.value("flagged", std::vector<std::string>{});
  t.validate();
  return t;
}

ThresholdSet compute_thresholds(const std::vector<DatasetRow>& rows, double fraction, PercentileRule rule) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("percentile must be in (0, 1)");
  ThresholdSet t;
  t.percentile = fraction;
  t.rule = rule;
  int active = 0;
  for (int p = 0; p < kPropertyCount; ++p) {
    std::vector<double> values;
    for (const auto& r : rows)
      if (r.properties[p]) values.push_back(*r.properties[p]);
    if (values.size() < kMinThresholdSamples) {
      t.flagged.emplace_back(kPropertyNames[p]);
      warn("property " + std::string(kPropertyNames[p]) + " has " + std::to_string(values.size()) +
           " values; excluded from thresholds");
      continue;
    }
    const double tau = percentile(std::move(values), fraction, rule);
    if (!(tau > 0.0)) {
      t.flagged.emplace_back(kPropertyNames[p]);
      warn("property " + std::string(kPropertyNames[p]) + " has a non-positive percentile; excluded");
      continue;
    }
    t.tau[p] = tau;
    ++active;
  }
  if (active == 0) throw DataError("no property has enough data for a threshold");
  for (int p = 0; p < kPropertyCount; ++p) t.weight[p] = t.tau[p] ? 1.0 / active : 0.0;

  std::vector<double> ratios;
  const int tg = index_of(Property::Tg), tl = index_of(Property::Tl);
  for (const auto& r : rows)
    if (r.properties[tg] && r.properties[tl] && *r.properties[tl] > 0.0)
      ratios.push_back(*r.properties[tg] / *r.properties[tl]);
  if (ratios.size() >= kMinThresholdSamples) {
    t.tg_tl_ratio = percentile(std::move(ratios), fraction, rule);
  } else {
    t.flagged.emplace_back("Tg/Tl");
  }
  return t;
}

std::size_t smote_synthetic_count(std::size_t minority, std::size_t majority, double ratio) {
  const double wanted = std::round(ratio * static_cast<double>(majority));
  return wanted > static_cast<double>(minority) ? static_cast<std::size_t>(wanted) - minority : 0;
}

SmoteResult smote_oversample(const std::vector<DatasetRow>& rows, ClassLabel target, int k, double ratio,
                             std::mt19937_64& rng) {
  if (k < 1) throw ConfigError("SMOTE neighbour count must be >= 1");
  if (!(ratio > 0.0)) throw ConfigError("SMOTE ratio must be positive");
  std::vector<const DatasetRow*> minority;
  std::size_t majority = 0;
  for (const auto& r : rows) {
    if (r.label == target)
      minority.push_back(&r);
    else if (r.label)
      ++majority;
  }
  if (minority.size() < static_cast<std::size_t>(k) + 1)
    throw DataError("SMOTE needs at least k+1 = " + std::to_string(k + 1) + " minority rows");

  SmoteResult result;
  const std::size_t n_syn = smote_synthetic_count(minority.size(), majority, ratio);
  if (n_syn == 0) return result;

  const std::size_t m = minority.size();
  result.degenerate = std::all_of(minority.begin(), minority.end(),
                                  [&](const DatasetRow* r) { return r->composition == minority[0]->composition; });
  if (result.degenerate) warn("SMOTE minority rows are all identical; synthetic rows repeat them");

  // k nearest minority neighbours (Euclidean on compositions), self excluded.
  std::vector<std::vector<std::size_t>> neighbours(m);
  std::vector<std::pair<double, std::size_t>> dist;
  for (std::size_t i = 0; i < m; ++i) {
    dist.clear();
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) dist.emplace_back((minority[i]->composition - minority[j]->composition).squaredNorm(), j);
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int q = 0; q < k; ++q) neighbours[i].push_back(dist[q].second);
  }

  std::uniform_int_distribution<std::size_t> pick_row(0, m - 1);
  std::uniform_int_distribution<int> pick_nn(0, k - 1);
  std::uniform_real_distribution<double> gap(0.0, 1.0);
  result.synthetic.reserve(n_syn);
  for (std::size_t s = 0; s < n_syn; ++s) {
    const std::size_t i = pick_row(rng);
    const std::size_t j = neighbours[i][pick_nn(rng)];
    const Composition& x = minority[i]->composition;
    const Composition& nn = minority[j]->composition;
    DatasetRow row;
    row.composition = renormalized(x + gap(rng) * (nn - x));
    row.label = target;
    result.synthetic.push_back(std::move(row));
  }
  return result;
}

}  // namespace matdesign
