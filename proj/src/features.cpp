#include "matdesign/features.hpp"

#include <cmath>
#include <limits>

#include "matdesign/common.hpp"

namespace matdesign {

std::string_view aggregation_suffix(Aggregation agg) {
  switch (agg) {
    case Aggregation::WeightedMean: return "wmean";
    case Aggregation::WeightedStd: return "wstd";
    case Aggregation::Min: return "min";
    case Aggregation::Max: return "max";
  }
  return "?";
}

std::string CandidateFeature::name() const { return descriptor + "." + std::string(aggregation_suffix(aggregation)); }

CandidateFeature CandidateFeature::parse(std::string_view name) {
  const auto dot = name.rfind('.');
  if (dot == std::string_view::npos || dot == 0) throw DataError("malformed feature name '" + std::string(name) + "'");
  const auto suffix = name.substr(dot + 1);
  for (auto agg : {Aggregation::WeightedMean, Aggregation::WeightedStd, Aggregation::Min, Aggregation::Max})
    if (aggregation_suffix(agg) == suffix) return {std::string(name.substr(0, dot)), agg};
  throw DataError("unknown aggregation in feature name '" + std::string(name) + "'");
}

std::vector<CandidateFeature> candidate_vocabulary(const ElementDescriptorTable& table) {
  std::vector<CandidateFeature> out;
  for (const auto& d : table.names())
    for (auto agg : {Aggregation::WeightedMean, Aggregation::WeightedStd, Aggregation::Min, Aggregation::Max})
      out.push_back({d, agg});
  return out;
}

double featurize(const Composition& c, const CandidateFeature& feature, const ElementDescriptorTable& table) {
  const auto d = table.descriptor_index(feature.descriptor);
  if (!d) throw DataError("feature '" + feature.name() + "' is not in the descriptor vocabulary");
  const double total = c.sum();
  if (!(total > 0.0) || present_count(c) == 0) throw DataError("cannot featurize an empty composition");
  const auto values = table.column(*d);
  const Composition w = c / 100.0;
  switch (feature.aggregation) {
    case Aggregation::WeightedMean: return w.dot(values);
    case Aggregation::WeightedStd: {
      const double mean = w.dot(values);
      return std::sqrt(w.dot((values.array() - mean).square().matrix()));
    }
    case Aggregation::Min:
    case Aggregation::Max: {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (int i = 0; i < kElementCount; ++i) {
        if (c[i] <= 0.0) continue;
        lo = std::min(lo, values[i]);
        hi = std::max(hi, values[i]);
      }
      return feature.aggregation == Aggregation::Min ? lo : hi;
    }
  }
  return 0.0;
}

Eigen::VectorXd featurize(const Composition& c, const std::vector<CandidateFeature>& features,
                          const ElementDescriptorTable& table) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < features.size(); ++i) out[static_cast<Eigen::Index>(i)] = featurize(c, features[i], table);
  return out;
}

Eigen::VectorXd model_input(const Composition& c, const std::vector<CandidateFeature>& features,
                            const ElementDescriptorTable& table) {
  Eigen::VectorXd x(kElementCount + static_cast<Eigen::Index>(features.size()));
  x.head<kElementCount>() = c;
  if (!features.empty()) x.tail(static_cast<Eigen::Index>(features.size())) = featurize(c, features, table);
  return x;
}

Eigen::MatrixXd model_inputs(const std::vector<Composition>& rows, const std::vector<CandidateFeature>& features,
                             const ElementDescriptorTable& table) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kElementCount + static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = model_input(rows[i], features, table).transpose();
  return x;
}

}  // namespace matdesign
