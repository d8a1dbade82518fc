#include "matdesign/elements.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <unordered_set>

#include "matdesign/common.hpp"
#include "text_util.hpp"

#ifndef MATDESIGN_SOURCE_DATA_DIR
#define MATDESIGN_SOURCE_DATA_DIR "data"
#endif

namespace matdesign {

std::optional<int> element_index(std::string_view symbol) {
  for (int i = 0; i < kElementCount; ++i)
    if (kElementSymbols[i] == symbol) return i;
  return std::nullopt;
}

std::string composition_violation(const Composition& c, CompositionRole role, double sum_tolerance) {
  for (int i = 0; i < kElementCount; ++i) {
    if (!std::isfinite(c[i])) return std::string(kElementSymbols[i]) + " is not finite";
    if (c[i] < 0.0 || c[i] > 100.0)
      return std::string(kElementSymbols[i]) + " outside [0, 100]: " + std::to_string(c[i]);
  }
  const double sum = c.sum();
  if (std::abs(sum - 100.0) > sum_tolerance) return "fractions sum to " + std::to_string(sum);
  const int present = present_count(c);
  if (role == CompositionRole::DatasetRow && (present < 3 || present > 9))
    return std::to_string(present) + " elements present (expected 3..9)";
  if (present < 1) return "no element present";
  return {};
}

Composition renormalized(const Composition& c) {
  const double sum = c.sum();
  if (!(sum > 0.0)) throw DataError("cannot renormalize an empty composition");
  return c * (100.0 / sum);
}

std::string formula(const Composition& c, int precision) {
  std::vector<int> idx;
  for (int i = 0; i < kElementCount; ++i)
    if (c[i] > 0.0) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return c[a] > c[b]; });
  std::string out;
  char buf[64];
  for (int i : idx) {
    std::snprintf(buf, sizeof buf, "%.*g", precision + 2, c[i]);
    out += kElementSymbols[i];
    out += buf;
  }
  return out;
}

std::vector<std::pair<std::string, double>> sparse_entries(const Composition& c) {
  std::vector<std::pair<std::string, double>> out;
  for (int i = 0; i < kElementCount; ++i)
    if (c[i] != 0.0) out.emplace_back(std::string(kElementSymbols[i]), c[i]);
  return out;
}

Composition from_sparse(const std::vector<std::pair<std::string, double>>& entries) {
  Composition c = Composition::Zero();
  for (const auto& [symbol, value] : entries) {
    const auto idx = element_index(symbol);
    if (!idx) throw DataError("unknown element symbol '" + symbol + "'");
    c[*idx] = value;
  }
  return c;
}

ElementDescriptorTable::ElementDescriptorTable(std::vector<std::string> names,
                                               Eigen::Matrix<double, kElementCount, Eigen::Dynamic> values)
    : names_(std::move(names)), values_(std::move(values)) {
  if (static_cast<Eigen::Index>(names_.size()) != values_.cols())
    throw DataError("descriptor name count does not match value columns");
  std::unordered_set<std::string> seen;
  for (const auto& n : names_)
    if (!seen.insert(n).second) throw DataError("duplicate descriptor name '" + n + "'");
  if (!values_.allFinite()) throw DataError("descriptor table contains non-finite values");
}

ElementDescriptorTable ElementDescriptorTable::from_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open descriptor table " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("descriptor table is empty: " + path.string());
  auto header = detail::split_delimited(line);
  if (header.empty() || header[0] != "symbol") throw DataError("descriptor table must start with a 'symbol' column");
  std::vector<std::string> names(header.begin() + 1, header.end());
  Eigen::Matrix<double, kElementCount, Eigen::Dynamic> values(kElementCount, static_cast<Eigen::Index>(names.size()));
  std::vector<bool> filled(kElementCount, false);
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_delimited(line);
    if (fields.size() != header.size())
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": wrong field count");
    const auto idx = element_index(fields[0]);
    if (!idx) throw DataError(path.string() + ":" + std::to_string(line_no) + ": unknown element " + fields[0]);
    for (std::size_t j = 0; j < names.size(); ++j) {
      const auto v = detail::parse_double(fields[j + 1]);
      if (!v)
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad value for " + names[j]);
      values(*idx, static_cast<Eigen::Index>(j)) = *v;
    }
    filled[*idx] = true;
  }
  for (int i = 0; i < kElementCount; ++i)
    if (!filled[i]) throw DataError("descriptor table lacks element " + std::string(kElementSymbols[i]));
  return ElementDescriptorTable(std::move(names), std::move(values));
}

std::optional<int> ElementDescriptorTable::descriptor_index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  return std::nullopt;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("MATDESIGN_DATA_DIR"); env && *env) return env;
  return MATDESIGN_SOURCE_DATA_DIR;
}

}  // namespace matdesign
