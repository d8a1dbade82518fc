#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "matdesign/common.hpp"

// Evaluation metrics. Undefined values (zero denominators) come back as
// std::nullopt rather than NaN; callers decide how to report them.
namespace matdesign::metrics {

namespace detail {

template <typename DA, typename DB>
void require_same_nonempty(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  if (a.size() == 0) throw DataError("metric input is empty");
  if (a.size() != b.size()) throw DataError("metric inputs differ in length");
}

}  // namespace detail

/// Area under the ROC curve via the Mann-Whitney rank statistic with
/// average ranks for ties (half credit per tied positive/negative pair).
/// `labels` holds 1 for positives and 0 for negatives.
template <typename DS, typename DL>
std::optional<double> auc(const Eigen::MatrixBase<DS>& scores, const Eigen::MatrixBase<DL>& labels) {
  detail::require_same_nonempty(scores, labels);
  const Eigen::Index n = scores.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return scores.derived().coeff(a) < scores.derived().coeff(b);
  });
  double positive_rank_sum = 0.0;
  double n_pos = 0.0;
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && scores.derived().coeff(order[j + 1]) == scores.derived().coeff(order[i])) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index q = i; q <= j; ++q) {
      if (labels.derived().coeff(order[q]) != 0) {
        positive_rank_sum += avg_rank;
        n_pos += 1.0;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  return (positive_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

template <typename DS, typename DL>
Confusion confusion(const Eigen::MatrixBase<DS>& scores, const Eigen::MatrixBase<DL>& labels, double cutoff = 0.5) {
  detail::require_same_nonempty(scores, labels);
  Confusion c;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const bool predicted = scores.derived().coeff(i) >= cutoff;
    const bool actual = labels.derived().coeff(i) != 0;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline std::optional<double> precision(const Confusion& c) {
  if (c.tp + c.fp == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

inline std::optional<double> recall(const Confusion& c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline std::optional<double> f1(const Confusion& c) {
  const auto p = precision(c);
  const auto r = recall(c);
  if (!p || !r || *p + *r == 0.0) return std::nullopt;
  return 2.0 * (*p * *r) / (*p + *r);
}

template <typename DY, typename DP>
std::optional<double> rmse(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DP>& yhat) {
  detail::require_same_nonempty(y, yhat);
  return std::sqrt((y - yhat).squaredNorm() / static_cast<double>(y.size()));
}

/// Coefficient of determination; undefined when `y` has zero variance.
template <typename DY, typename DP>
std::optional<double> r2(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DP>& yhat) {
  detail::require_same_nonempty(y, yhat);
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  if (ss_tot == 0.0) return std::nullopt;
  return 1.0 - (y - yhat).squaredNorm() / ss_tot;
}

/// Mean absolute percentage error in percent; undefined if any y_i == 0.
template <typename DY, typename DP>
std::optional<double> mape(const Eigen::MatrixBase<DY>& y, const Eigen::MatrixBase<DP>& yhat) {
  detail::require_same_nonempty(y, yhat);
  if ((y.array() == 0.0).any()) return std::nullopt;
  return 100.0 / static_cast<double>(y.size()) * ((y - yhat).array() / y.array()).abs().sum();
}

/// Population variance.
template <typename D>
double variance(const Eigen::MatrixBase<D>& x) {
  if (x.size() == 0) throw DataError("variance of an empty series");
  return (x.array() - x.mean()).square().mean();
}

/// Pearson correlation; undefined when either series has zero variance.
template <typename DA, typename DB>
std::optional<double> pearson(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  detail::require_same_nonempty(a, b);
  const auto da = (a.array() - a.mean()).eval();
  const auto db = (b.array() - b.mean()).eval();
  const double saa = da.square().sum();
  const double sbb = db.square().sum();
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp((da * db).sum() / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace matdesign::metrics
