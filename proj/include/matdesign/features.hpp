#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "matdesign/elements.hpp"

namespace matdesign {

enum class Aggregation { WeightedMean, WeightedStd, Min, Max };

std::string_view aggregation_suffix(Aggregation agg);

/// A descriptor aggregated over a composition, named "<descriptor>.<suffix>"
/// with suffix one of wmean, wstd, min, max.
struct CandidateFeature {
  std::string descriptor;
  Aggregation aggregation = Aggregation::WeightedMean;

  std::string name() const;
  static CandidateFeature parse(std::string_view name);

  friend bool operator==(const CandidateFeature&, const CandidateFeature&) = default;
};

/// Every descriptor crossed with every aggregation, in table order.
std::vector<CandidateFeature> candidate_vocabulary(const ElementDescriptorTable& table);

/// One feature value. Throws DataError on an empty composition or an unknown descriptor.
double featurize(const Composition& c, const CandidateFeature& feature, const ElementDescriptorTable& table);

Eigen::VectorXd featurize(const Composition& c, const std::vector<CandidateFeature>& features,
                          const ElementDescriptorTable& table);

/// Model input: the 52 raw fractions followed by the appended features.
Eigen::VectorXd model_input(const Composition& c, const std::vector<CandidateFeature>& features,
                            const ElementDescriptorTable& table);

Eigen::MatrixXd model_inputs(const std::vector<Composition>& rows, const std::vector<CandidateFeature>& features,
                             const ElementDescriptorTable& table);

}  // namespace matdesign
