#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace matdesign {

inline constexpr int kElementCount = 52;

/// Canonical element order. Every composition vector in the project is
/// indexed by this list; input files are mapped onto it by header name.
inline constexpr std::array<std::string_view, kElementCount> kElementSymbols = {
    "Ag", "Al", "Au", "B",  "Be", "Bi", "C",  "Ca", "Ce", "Co", "Cr", "Cu", "Dy",
    "Er", "Fe", "Ga", "Gd", "Ge", "Hf", "Ho", "In", "La", "Li", "Lu", "Mg", "Mn",
    "Mo", "Nb", "Nd", "Ni", "P",  "Pb", "Pd", "Pr", "Pt", "Ru", "Sb", "Sc", "Si",
    "Sm", "Sn", "Sr", "Ta", "Tb", "Ti", "Tm", "V",  "W",  "Y",  "Yb", "Zn", "Zr"};

std::optional<int> element_index(std::string_view symbol);

template <typename Scalar>
using CompositionT = Eigen::Matrix<Scalar, kElementCount, 1>;

/// Atomic percentages over the canonical elements.
using Composition = CompositionT<double>;

enum class CompositionRole {
  DatasetRow,  // 3..9 elements present
  RlState,     // at least one element present
};

inline constexpr double kCompositionSumTolerance = 1e-6;

/// Empty string when `c` satisfies the composition invariants for `role`,
/// otherwise a human-readable reason.
std::string composition_violation(const Composition& c, CompositionRole role,
                                  double sum_tolerance = kCompositionSumTolerance);

inline bool is_valid_composition(const Composition& c, CompositionRole role,
                                 double sum_tolerance = kCompositionSumTolerance) {
  return composition_violation(c, role, sum_tolerance).empty();
}

template <typename Derived>
int present_count(const Eigen::MatrixBase<Derived>& c) {
  return static_cast<int>((c.array() > 0.0).count());
}

template <typename DerivedA, typename DerivedB>
auto max_norm_distance(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

/// Rescales non-negative entries so they sum to exactly 100.
Composition renormalized(const Composition& c);

/// "Zr63Cu15Al10Ni10Fe2"-style formula, largest fraction first.
std::string formula(const Composition& c, int precision = 2);

/// Sparse JSON-friendly form: symbol -> percent for present elements.
std::vector<std::pair<std::string, double>> sparse_entries(const Composition& c);
Composition from_sparse(const std::vector<std::pair<std::string, double>>& entries);

/// Per-element physical descriptors keyed by the canonical elements.
class ElementDescriptorTable {
 public:
  ElementDescriptorTable(std::vector<std::string> names,
                         Eigen::Matrix<double, kElementCount, Eigen::Dynamic> values);

  static ElementDescriptorTable from_csv(const std::filesystem::path& path);

  int descriptor_count() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<int> descriptor_index(std::string_view name) const;
  /// Column of descriptor values, one per canonical element.
  auto column(int descriptor) const { return values_.col(descriptor); }
  double value(int element, int descriptor) const { return values_(element, descriptor); }
  const Eigen::Matrix<double, kElementCount, Eigen::Dynamic>& values() const { return values_; }

 private:
  std::vector<std::string> names_;
  Eigen::Matrix<double, kElementCount, Eigen::Dynamic> values_;
};

/// Directory holding elements.csv, the bundled dataset and prompt templates.
/// Resolution order: MATDESIGN_DATA_DIR env var, then the compiled-in source path.
std::filesystem::path default_data_dir();

}  // namespace matdesign
