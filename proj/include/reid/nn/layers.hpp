#pragma once

#include <cmath>
#include <numbers>

#include "reid/error.hpp"
#include "reid/nn/param.hpp"

namespace reid::nn {

/// y = x W^T + b over the rows of x.
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, bool with_bias, std::mt19937_64& rng,
         double stddev = -1.0)
      : weight(name + ".weight", out, in) {
    fill_normal(weight.value, stddev > 0 ? stddev : std::sqrt(1.0 / in), rng);
    if (with_bias) bias = Param<Scalar>(name + ".bias", out, 1);
  }

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  Mat<Scalar> forward(const Mat<Scalar>& x) const {
    if (x.cols() != weight.value.cols()) throw ValidationError(weight.name + ": input width mismatch");
    Mat<Scalar> y = x * weight.value.transpose();
    if (!bias.empty()) y.rowwise() += bias.value.col(0).transpose();
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx.
  Mat<Scalar> backward(const Mat<Scalar>& x, const Mat<Scalar>& dy) {
    weight.grad.noalias() += dy.transpose() * x;
    if (!bias.empty()) bias.grad.col(0) += dy.colwise().sum().transpose();
    return dy * weight.value;
  }

  void collect(ParamList<Scalar>& out) {
    out.push_back(&weight);
    if (!bias.empty()) out.push_back(&bias);
  }

  Param<Scalar> weight;  // out x in
  Param<Scalar> bias;    // out x 1, empty when disabled
};

/// Row-wise layer normalization with affine gain and shift.
template <typename Scalar>
class LayerNorm {
 public:
  struct Cache {
    Mat<Scalar> normalized;
    Vec<Scalar> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim) : gain(name + ".gain", dim, 1), shift(name + ".shift", dim, 1) {
    gain.value.setOnes();
  }

  Mat<Scalar> forward(const Mat<Scalar>& x, Cache* cache = nullptr) const {
    const Eigen::Index n = x.cols();
    if (n != gain.value.rows()) throw ValidationError(gain.name + ": input width mismatch");
    Vec<Scalar> mean = x.rowwise().mean();
    Mat<Scalar> centered = x.colwise() - mean;
    Vec<Scalar> inv_std =
        ((centered.array().square().rowwise().sum() / Scalar(n)) + Scalar(kEps)).rsqrt().matrix();
    Mat<Scalar> normalized = centered.array().colwise() * inv_std.array();
    Mat<Scalar> y = (normalized.array().rowwise() * gain.value.col(0).transpose().array()).matrix();
    y.rowwise() += shift.value.col(0).transpose();
    if (cache) {
      cache->normalized = std::move(normalized);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Mat<Scalar> backward(const Cache& cache, const Mat<Scalar>& dy) {
    const auto n = static_cast<Scalar>(dy.cols());
    gain.grad.col(0) += (dy.array() * cache.normalized.array()).colwise().sum().transpose().matrix();
    shift.grad.col(0) += dy.colwise().sum().transpose();
    Mat<Scalar> dxhat = dy.array().rowwise() * gain.value.col(0).transpose().array();
    Vec<Scalar> mean_dxhat = dxhat.rowwise().sum() / n;
    Vec<Scalar> mean_dxhat_xhat = (dxhat.array() * cache.normalized.array()).rowwise().sum().matrix() / n;
    Mat<Scalar> dx = dxhat;
    dx.colwise() -= mean_dxhat;
    dx -= (cache.normalized.array().colwise() * mean_dxhat_xhat.array()).matrix();
    return dx.array().colwise() * cache.inv_std.array();
  }

  void collect(ParamList<Scalar>& out) {
    out.push_back(&gain);
    out.push_back(&shift);
  }

  static constexpr double kEps = 1e-5;
  Param<Scalar> gain;
  Param<Scalar> shift;
};

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

/// Exact (erf) GELU.
template <typename Scalar>
Mat<Scalar> gelu(const Mat<Scalar>& x) {
  return x.unaryExpr([](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::erf(v * Scalar(kInvSqrt2)));
  });
}

template <typename Scalar>
Mat<Scalar> gelu_backward(const Mat<Scalar>& x, const Mat<Scalar>& dy) {
  const Scalar inv_sqrt_2pi = Scalar(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  Mat<Scalar> d = x.unaryExpr([&](Scalar v) {
    return Scalar(0.5) * (Scalar(1) + std::erf(v * Scalar(kInvSqrt2))) +
           v * std::exp(Scalar(-0.5) * v * v) * inv_sqrt_2pi;
  });
  return d.cwiseProduct(dy);
}

/// Row-wise softmax, stable against large logits.
template <typename Derived>
typename Derived::PlainObject softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  typename Derived::PlainObject out = logits.colwise() - logits.rowwise().maxCoeff();
  out = out.array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

}  // namespace reid::nn
