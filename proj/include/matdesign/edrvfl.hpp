#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "matdesign/archive.hpp"
#include "matdesign/common.hpp"

namespace matdesign {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Linear readout y = X w + b.
template <typename Scalar>
struct LinearReadout {
  VectorX<Scalar> weights;
  Scalar intercept = Scalar(0);

  template <typename Derived>
  VectorX<Scalar> predict(const Eigen::MatrixBase<Derived>& x) const {
    return (x * weights).array() + intercept;
  }
};

namespace detail {

/// Solves (A + lambda I) z = rhs by Cholesky. A failed factorisation is
/// retried once with a jittered lambda before giving up.
template <typename Scalar, typename DA, typename DR>
VectorX<Scalar> regularised_solve(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DR>& rhs, Scalar lambda) {
  MatrixX<Scalar> system = a;
  system.diagonal().array() += lambda;
  Eigen::LLT<MatrixX<Scalar>> llt(system);
  if (llt.info() != Eigen::Success) {
    const Scalar jitter = std::max<Scalar>(Scalar(1e-8), Scalar(1e-6) * (a.diagonal().cwiseAbs().maxCoeff() + lambda));
    system.diagonal().array() += jitter;
    llt.compute(system);
    if (llt.info() != Eigen::Success) throw ModelError("ridge normal equations are singular after jitter");
  }
  VectorX<Scalar> z = llt.solve(rhs);
  if (!z.allFinite()) throw ModelError("ridge solve produced non-finite weights");
  return z;
}

}  // namespace detail

/// Ridge regression with an unpenalised intercept:
///   min ||y - b - X w||^2 + lambda ||w||^2.
/// Solved in the primal when rows >= columns, otherwise in the dual.
template <typename DX, typename DY>
LinearReadout<typename DX::Scalar> fit_ridge(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                            typename DX::Scalar lambda) {
  using Scalar = typename DX::Scalar;
  if (!(lambda > Scalar(0))) throw ConfigError("ridge lambda must be positive");
  if (x.rows() != y.rows() || x.rows() == 0) throw DataError("ridge inputs must be non-empty and aligned");
  const RowVectorX<Scalar> mu = x.colwise().mean();
  const Scalar y_mean = y.mean();
  const MatrixX<Scalar> xc = x.rowwise() - mu;
  const VectorX<Scalar> yc = y.array() - y_mean;
  LinearReadout<Scalar> out;
  if (xc.rows() >= xc.cols()) {
    out.weights = detail::regularised_solve<Scalar>(xc.transpose() * xc, xc.transpose() * yc, lambda);
  } else {
    out.weights = xc.transpose() * detail::regularised_solve<Scalar>(xc * xc.transpose(), yc, lambda);
  }
  out.intercept = y_mean - mu.dot(out.weights);
  return out;
}

enum class Activation { Logistic, Relu, Tanh };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Logistic: return "logistic";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "logistic") return Activation::Logistic;
  if (s == "relu") return Activation::Relu;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

struct EdRvflConfig {
  int layers = 8;
  int width = 128;
  double lambda = 1.0;
  Activation activation = Activation::Logistic;
  std::uint64_t seed = 7;
  int min_rows_per_target = 20;
};

/// Ensemble deep random vector functional link network.
///
/// Layer l computes H_l = act([X, H_{l-1}] W_l + b_l) with fixed random
/// (W_l, b_l); H_0 is empty. Each layer has its own ridge readout over
/// [X, H_1, ..., H_l], and the prediction is the mean of the layer readouts.
/// Inputs are standardised with training statistics. Targets are fitted
/// independently (sharing the random features); NaN entries in the target
/// matrix mark missing values and are skipped per target.
template <typename Scalar>
class EdRvfl {
 public:
  EdRvfl() = default;

  static EdRvfl fit(const MatrixX<Scalar>& x, const MatrixX<Scalar>& targets, const EdRvflConfig& config) {
    if (config.layers < 1) throw ConfigError("edRVFL needs at least one layer");
    if (config.width < 0) throw ConfigError("edRVFL width must be non-negative");
    if (!(config.lambda > 0.0)) throw ConfigError("edRVFL lambda must be positive");
    if (x.rows() != targets.rows()) throw DataError("edRVFL inputs and targets differ in row count");

    EdRvfl model;
    model.config_ = config;
    model.mean_ = x.colwise().mean();
    model.scale_ = ((x.rowwise() - model.mean_).array().square().colwise().mean()).sqrt().matrix();
    for (Eigen::Index j = 0; j < model.scale_.size(); ++j)
      if (!(model.scale_[j] > Scalar(1e-12))) model.scale_[j] = Scalar(1);

    const Eigen::Index d = x.cols();
    std::mt19937_64 rng(config.seed);
    for (int l = 0; l < config.layers; ++l) {
      const Eigen::Index fan_in = l == 0 ? d : d + config.width;
      const Scalar bound = std::sqrt(Scalar(3) / static_cast<Scalar>(std::max<Eigen::Index>(fan_in, 1)));
      std::uniform_real_distribution<double> w_dist(-bound, bound);
      std::uniform_real_distribution<double> b_dist(-1.0, 1.0);
      MatrixX<Scalar> w(fan_in, config.width);
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<Scalar>(w_dist(rng));
      RowVectorX<Scalar> b(config.width);
      for (Eigen::Index c = 0; c < b.size(); ++c) b[c] = static_cast<Scalar>(b_dist(rng));
      model.weights_.push_back(std::move(w));
      model.biases_.push_back(std::move(b));
    }

    const MatrixX<Scalar> design = model.design_matrix(x);
    model.readouts_.resize(static_cast<std::size_t>(targets.cols()));
    for (Eigen::Index t = 0; t < targets.cols(); ++t)
      model.readouts_[static_cast<std::size_t>(t)] = model.fit_target(design, targets.col(t), d);
    return model;
  }

  /// Predictions, one column per target.
  MatrixX<Scalar> predict(const MatrixX<Scalar>& x) const {
    if (x.cols() != mean_.size()) throw DataError("edRVFL input width mismatch");
    const MatrixX<Scalar> design = design_matrix(x);
    const Eigen::Index d = x.cols();
    MatrixX<Scalar> out = MatrixX<Scalar>::Zero(x.rows(), static_cast<Eigen::Index>(readouts_.size()));
    for (std::size_t t = 0; t < readouts_.size(); ++t) {
      for (int l = 0; l < config_.layers; ++l) {
        const Eigen::Index cols = d + static_cast<Eigen::Index>(l + 1) * config_.width;
        out.col(static_cast<Eigen::Index>(t)) += readouts_[t][static_cast<std::size_t>(l)].predict(design.leftCols(cols));
      }
    }
    return out / static_cast<Scalar>(config_.layers);
  }

  const EdRvflConfig& config() const { return config_; }
  Eigen::Index input_dim() const { return mean_.size(); }
  Eigen::Index target_count() const { return static_cast<Eigen::Index>(readouts_.size()); }

  void write(ArchiveWriter& out) const {
    out.put<std::int32_t>(config_.layers);
    out.put<std::int32_t>(config_.width);
    out.put(config_.lambda);
    out.put(activation_name(config_.activation));
    out.put<std::uint64_t>(config_.seed);
    out.put<std::int32_t>(config_.min_rows_per_target);
    out.put(mean_);
    out.put(scale_);
    out.put(weights_);
    out.put(biases_);
    out.put<std::uint64_t>(readouts_.size());
    for (const auto& per_layer : readouts_) {
      for (const auto& r : per_layer) {
        out.put(r.weights);
        out.put(r.intercept);
      }
    }
  }

  static EdRvfl read(ArchiveReader& in) {
    EdRvfl m;
    m.config_.layers = in.get<std::int32_t>();
    m.config_.width = in.get<std::int32_t>();
    m.config_.lambda = in.get<double>();
    m.config_.activation = activation_from_name(in.get_string());
    m.config_.seed = in.get<std::uint64_t>();
    m.config_.min_rows_per_target = in.get<std::int32_t>();
    m.mean_ = in.get_matrix<RowVectorX<Scalar>>();
    m.scale_ = in.get_matrix<RowVectorX<Scalar>>();
    m.weights_ = in.get_matrices<MatrixX<Scalar>>();
    m.biases_ = in.get_matrices<RowVectorX<Scalar>>();
    const auto targets = in.get_size();
    m.readouts_.resize(targets);
    for (auto& per_layer : m.readouts_) {
      per_layer.resize(static_cast<std::size_t>(m.config_.layers));
      for (auto& r : per_layer) {
        r.weights = in.get_matrix<VectorX<Scalar>>();
        r.intercept = in.get<Scalar>();
      }
    }
    return m;
  }

 private:
  Scalar activate(Scalar z) const {
    switch (config_.activation) {
      case Activation::Logistic: return Scalar(1) / (Scalar(1) + std::exp(-z));
      case Activation::Relu: return z > Scalar(0) ? z : Scalar(0);
      case Activation::Tanh: return std::tanh(z);
    }
    return z;
  }

  /// [X_std, H_1, ..., H_L] for every row.
  MatrixX<Scalar> design_matrix(const MatrixX<Scalar>& x) const {
    const Eigen::Index d = x.cols();
    const Eigen::Index w = config_.width;
    MatrixX<Scalar> design(x.rows(), d + static_cast<Eigen::Index>(config_.layers) * w);
    design.leftCols(d) = (x.rowwise() - mean_).array().rowwise() / scale_.array();
    for (int l = 0; l < config_.layers; ++l) {
      MatrixX<Scalar> pre;
      if (l == 0) {
        pre = design.leftCols(d) * weights_[0];
      } else {
        const Eigen::Index prev = d + static_cast<Eigen::Index>(l - 1) * w;
        pre = design.leftCols(d) * weights_[l].topRows(d) + design.middleCols(prev, w) * weights_[l].bottomRows(w);
      }
      pre.rowwise() += biases_[static_cast<std::size_t>(l)];
      design.middleCols(d + static_cast<Eigen::Index>(l) * w, w) = pre.unaryExpr([this](Scalar z) { return activate(z); });
    }
    return design;
  }

  std::vector<LinearReadout<Scalar>> fit_target(const MatrixX<Scalar>& design, const VectorX<Scalar>& y,
                                                Eigen::Index d) const {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (std::isfinite(y[i])) rows.push_back(i);
    if (static_cast<int>(rows.size()) < config_.min_rows_per_target)
      throw DataError("edRVFL target has " + std::to_string(rows.size()) + " usable rows; needs " +
                      std::to_string(config_.min_rows_per_target));
    const auto n = static_cast<Eigen::Index>(rows.size());
    MatrixX<Scalar> sub(n, design.cols());
    VectorX<Scalar> ys(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      sub.row(i) = design.row(rows[static_cast<std::size_t>(i)]);
      ys[i] = y[rows[static_cast<std::size_t>(i)]];
    }
    const RowVectorX<Scalar> mu = sub.colwise().mean();
    const MatrixX<Scalar> centred = sub.rowwise() - mu;
    const Scalar y_mean = ys.mean();
    const VectorX<Scalar> yc = ys.array() - y_mean;
    const Scalar lambda = static_cast<Scalar>(config_.lambda);

    std::vector<LinearReadout<Scalar>> out;
    MatrixX<Scalar> gram = centred.leftCols(d) * centred.leftCols(d).transpose();
    for (int l = 0; l < config_.layers; ++l) {
      const Eigen::Index w = config_.width;
      const Eigen::Index cols = d + static_cast<Eigen::Index>(l + 1) * w;
      LinearReadout<Scalar> r;
      if (n < cols) {
        if (w > 0) {
          const auto h = centred.middleCols(d + static_cast<Eigen::Index>(l) * w, w);
          gram.noalias() += h * h.transpose();
        }
        r.weights = centred.leftCols(cols).transpose() * detail::regularised_solve<Scalar>(gram, yc, lambda);
      } else {
        const auto block = centred.leftCols(cols);
        r.weights = detail::regularised_solve<Scalar>(block.transpose() * block, block.transpose() * yc, lambda);
        if (w > 0) {
          const auto h = centred.middleCols(d + static_cast<Eigen::Index>(l) * w, w);
          gram.noalias() += h * h.transpose();
        }
      }
      r.intercept = y_mean - mu.leftCols(cols).dot(r.weights);
      out.push_back(std::move(r));
    }
    return out;
  }

  EdRvflConfig config_;
  RowVectorX<Scalar> mean_;
  RowVectorX<Scalar> scale_;
  std::vector<MatrixX<Scalar>> weights_;
  std::vector<RowVectorX<Scalar>> biases_;
  std::vector<std::vector<LinearReadout<Scalar>>> readouts_;  // [target][layer]
};

}  // namespace matdesign
