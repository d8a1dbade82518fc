#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "matdesign/archive.hpp"
#include "matdesign/common.hpp"
#include "matdesign/edrvfl.hpp"

namespace matdesign {

/// Dense ReLU network with a linear or scaled-tanh output layer. Batches are
/// column-major: one sample per column.
template <typename Scalar>
class Mlp {
 public:
  enum class Output : std::uint8_t { Linear = 0, Tanh = 1 };

  struct Cache {
    std::vector<MatrixX<Scalar>> inputs;  // input to each layer
    std::vector<MatrixX<Scalar>> pre;     // pre-activation of each layer
  };

  struct Gradients {
    std::vector<MatrixX<Scalar>> w;
    std::vector<VectorX<Scalar>> b;

    void set_zero_like(const Mlp& net) {
      w.resize(net.weights.size());
      b.resize(net.biases.size());
      for (std::size_t l = 0; l < w.size(); ++l) {
        w[l] = MatrixX<Scalar>::Zero(net.weights[l].rows(), net.weights[l].cols());
        b[l] = VectorX<Scalar>::Zero(net.biases[l].size());
      }
    }
  };

  Mlp() = default;

  /// Layer sizes including input and output. Weights and biases are
  /// uniform in +-1/sqrt(fan_in); `zero_output` zeroes the last layer.
  Mlp(const std::vector<int>& sizes, Output output, Scalar output_scale, std::mt19937_64& rng, bool zero_output = false)
      : output_(output), output_scale_(output_scale) {
    if (sizes.size() < 2) throw ConfigError("network needs input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const int in = sizes[l], out = sizes[l + 1];
      if (in < 1 || out < 1) throw ConfigError("network layer sizes must be positive");
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      MatrixX<Scalar> w(out, in);
      VectorX<Scalar> b(out);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(u(rng));
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = static_cast<Scalar>(u(rng));
      if (zero_output && l + 2 == sizes.size()) {
        w.setZero();
        b.setZero();
      }
      weights.push_back(std::move(w));
      biases.push_back(std::move(b));
    }
  }

  Eigen::Index input_dim() const { return weights.front().cols(); }
  Eigen::Index output_dim() const { return weights.back().rows(); }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& x) const {
    Cache unused;
    return forward(x, unused, false);
  }

  MatrixX<Scalar> forward(const MatrixX<Scalar>& x, Cache& cache, bool keep = true) const {
    if (x.rows() != input_dim()) throw ModelError("network input has the wrong width");
    if (keep) {
      cache.inputs.clear();
      cache.pre.clear();
    }
    MatrixX<Scalar> a = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      MatrixX<Scalar> z = weights[l] * a;
      z.colwise() += biases[l];
      if (keep) {
        cache.inputs.push_back(a);
        cache.pre.push_back(z);
      }
      if (l + 1 < weights.size()) {
        a = z.cwiseMax(Scalar(0));
      } else {
        a = output_ == Output::Tanh ? MatrixX<Scalar>(output_scale_ * z.array().tanh()) : z;
      }
    }
    return a;
  }

  /// Adds parameter gradients of a scalar loss with output gradient `dy`
  /// into `grads` and returns the gradient with respect to the input.
  /// `dpre` is an extra gradient on the last layer's pre-activation.
  MatrixX<Scalar> backward(const Cache& cache, const MatrixX<Scalar>& dy, Gradients& grads,
                           const MatrixX<Scalar>* dpre = nullptr) const {
    if (grads.w.size() != weights.size()) grads.set_zero_like(*this);
    MatrixX<Scalar> delta;
    const auto last = weights.size() - 1;
    if (output_ == Output::Tanh) {
      const auto t = cache.pre[last].array().tanh();
      delta = dy.array() * output_scale_ * (Scalar(1) - t.square());
    } else {
      delta = dy;
    }
    if (dpre) delta += *dpre;
    for (std::size_t l = weights.size(); l-- > 0;) {
      if (l < last) delta = delta.cwiseProduct((cache.pre[l].array() > Scalar(0)).template cast<Scalar>().matrix());
      grads.w[l].noalias() += delta * cache.inputs[l].transpose();
      grads.b[l] += delta.rowwise().sum();
      delta = weights[l].transpose() * delta;
    }
    return delta;
  }

  /// this <- (1 - tau) this + tau src.
  void polyak_from(const Mlp& src, Scalar tau) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] = (Scalar(1) - tau) * weights[l] + tau * src.weights[l];
      biases[l] = (Scalar(1) - tau) * biases[l] + tau * src.biases[l];
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
  }

  void write(ArchiveWriter& out) const {
    out.put(static_cast<std::uint8_t>(output_));
    out.put(output_scale_);
    out.put(weights);
    out.put(biases);
  }

  static Mlp read(ArchiveReader& in) {
    Mlp m;
    m.output_ = static_cast<Output>(in.get<std::uint8_t>());
    m.output_scale_ = in.get<Scalar>();
    m.weights = in.get_matrices<MatrixX<Scalar>>();
    m.biases = in.get_matrices<VectorX<Scalar>>();
    if (m.weights.empty() || m.weights.size() != m.biases.size()) throw DataError("corrupt network archive");
    return m;
  }

  std::vector<MatrixX<Scalar>> weights;
  std::vector<VectorX<Scalar>> biases;

 private:
  Output output_ = Output::Linear;
  Scalar output_scale_ = Scalar(1);
};

/// Adam with bias correction, one instance per network.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(const Mlp<Scalar>& net, Scalar lr, Scalar beta1 = Scalar(0.9), Scalar beta2 = Scalar(0.999),
       Scalar eps = Scalar(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.set_zero_like(net);
    v_.set_zero_like(net);
  }

  void step(Mlp<Scalar>& net, const typename Mlp<Scalar>::Gradients& g) {
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(beta1_, static_cast<Scalar>(t_));
    const Scalar c2 = Scalar(1) - std::pow(beta2_, static_cast<Scalar>(t_));
    auto apply = [&](auto& param, auto& m, auto& v, const auto& grad) {
      m = beta1_ * m + (Scalar(1) - beta1_) * grad;
      v = beta2_ * v + (Scalar(1) - beta2_) * grad.cwiseAbs2();
      param.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    };
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      apply(net.weights[l], m_.w[l], v_.w[l], g.w[l]);
      apply(net.biases[l], m_.b[l], v_.b[l], g.b[l]);
    }
  }

  std::int64_t steps() const { return t_; }

  void write(ArchiveWriter& out) const {
    out.put(lr_);
    out.put(beta1_);
    out.put(beta2_);
    out.put(eps_);
    out.put(t_);
    out.put(m_.w);
    out.put(m_.b);
    out.put(v_.w);
    out.put(v_.b);
  }

  static Adam read(ArchiveReader& in) {
    Adam a;
    a.lr_ = in.get<Scalar>();
    a.beta1_ = in.get<Scalar>();
    a.beta2_ = in.get<Scalar>();
    a.eps_ = in.get<Scalar>();
    a.t_ = in.get<std::int64_t>();
    a.m_.w = in.get_matrices<MatrixX<Scalar>>();
    a.m_.b = in.get_matrices<VectorX<Scalar>>();
    a.v_.w = in.get_matrices<MatrixX<Scalar>>();
    a.v_.b = in.get_matrices<VectorX<Scalar>>();
    return a;
  }

 private:
  Scalar lr_ = Scalar(1e-3), beta1_ = Scalar(0.9), beta2_ = Scalar(0.999), eps_ = Scalar(1e-8);
  std::int64_t t_ = 0;
  typename Mlp<Scalar>::Gradients m_, v_;
};

}  // namespace matdesign
