#pragma once

#include "reid/nn/layers.hpp"

namespace reid::nn {

/// Batch of feature maps: channels x (batch * height * width), column index
/// b * H * W + y * W + x.
template <typename Scalar>
struct FeatureMap {
  Mat<Scalar> data;
  int batch = 0;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }
};

template <typename Scalar>
class Conv2d {
 public:
  struct Cache {
    Mat<Scalar> columns;
    int batch = 0, height = 0, width = 0;
  };

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel, int stride, std::mt19937_64& rng,
         double gain = 1.0)
      : weight(name + ".weight", out, static_cast<Eigen::Index>(in) * kernel * kernel),
        bias(name + ".bias", out, 1),
        in_(in),
        kernel_(kernel),
        stride_(stride),
        pad_(kernel / 2) {
    fill_normal(weight.value, gain * std::sqrt(2.0 / (static_cast<double>(in) * kernel * kernel)), rng);
  }

  int out_channels() const { return static_cast<int>(weight.value.rows()); }
  int out_size(int n) const { return (n + 2 * pad_ - kernel_) / stride_ + 1; }

  FeatureMap<Scalar> forward(const FeatureMap<Scalar>& x, Cache* cache = nullptr) const {
    if (x.channels() != in_) throw ValidationError(weight.name + ": channel mismatch");
    const int ho = out_size(x.height), wo = out_size(x.width);
    FeatureMap<Scalar> y{Mat<Scalar>(), x.batch, ho, wo};
    if (kernel_ == 1 && stride_ == 1) {
      y.data.noalias() = weight.value * x.data;
      if (cache) *cache = {x.data, x.batch, x.height, x.width};
    } else {
      Mat<Scalar> cols = im2col(x, ho, wo);
      y.data.noalias() = weight.value * cols;
      if (cache) *cache = {std::move(cols), x.batch, x.height, x.width};
    }
    y.data.colwise() += bias.value.col(0);
    return y;
  }

  FeatureMap<Scalar> backward(const Cache& cache, const FeatureMap<Scalar>& dy) {
    weight.grad.noalias() += dy.data * cache.columns.transpose();
    bias.grad.col(0) += dy.data.rowwise().sum();
    FeatureMap<Scalar> dx{Mat<Scalar>(), cache.batch, cache.height, cache.width};
    if (kernel_ == 1 && stride_ == 1) {
      dx.data.noalias() = weight.value.transpose() * dy.data;
    } else {
      Mat<Scalar> dcols = weight.value.transpose() * dy.data;
      dx.data = col2im(dcols, cache.batch, cache.height, cache.width, dy.height, dy.width);
    }
    return dx;
  }

  void collect(ParamList<Scalar>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Param<Scalar> weight;  // out x (in * k * k), row index c * k * k + ky * k + kx
  Param<Scalar> bias;

 private:
  Mat<Scalar> im2col(const FeatureMap<Scalar>& x, int ho, int wo) const {
    const Eigen::Index k2 = static_cast<Eigen::Index>(kernel_) * kernel_;
    Mat<Scalar> cols = Mat<Scalar>::Zero(in_ * k2, static_cast<Eigen::Index>(x.batch) * ho * wo);
    for (int b = 0; b < x.batch; ++b)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const Eigen::Index col = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
          Scalar* dst = cols.col(col).data();
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.width) continue;
              const Scalar* src =
                  x.data.col((static_cast<Eigen::Index>(b) * x.height + iy) * x.width + ix).data();
              for (int c = 0; c < in_; ++c) dst[c * k2 + ky * kernel_ + kx] = src[c];
            }
          }
        }
    return cols;
  }

  Mat<Scalar> col2im(const Mat<Scalar>& dcols, int batch, int h, int w, int ho, int wo) const {
    const Eigen::Index k2 = static_cast<Eigen::Index>(kernel_) * kernel_;
    Mat<Scalar> dx = Mat<Scalar>::Zero(in_, static_cast<Eigen::Index>(batch) * h * w);
    for (int b = 0; b < batch; ++b)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          const Scalar* src = dcols.col((static_cast<Eigen::Index>(b) * ho + oy) * wo + ox).data();
          for (int ky = 0; ky < kernel_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= w) continue;
              Scalar* dst = dx.col((static_cast<Eigen::Index>(b) * h + iy) * w + ix).data();
              for (int c = 0; c < in_; ++c) dst[c] += src[c * k2 + ky * kernel_ + kx];
            }
          }
        }
    return dx;
  }

  int in_ = 0;
  int kernel_ = 1;
  int stride_ = 1;
  int pad_ = 0;
};

template <typename Scalar>
FeatureMap<Scalar> relu(const FeatureMap<Scalar>& x) {
  return {x.data.cwiseMax(Scalar(0)), x.batch, x.height, x.width};
}

/// Gradient through relu given the relu output.
template <typename Scalar>
FeatureMap<Scalar> relu_backward(const FeatureMap<Scalar>& out, const FeatureMap<Scalar>& dy) {
  return {(out.data.array() > Scalar(0)).select(dy.data, Scalar(0)), dy.batch, dy.height, dy.width};
}

/// Spatial mean per channel: batch x channels.
template <typename Scalar>
Mat<Scalar> global_average_pool(const FeatureMap<Scalar>& x) {
  Mat<Scalar> out(x.batch, x.channels());
  const Eigen::Index hw = x.pixels();
  for (int b = 0; b < x.batch; ++b) {
    out.row(b) = x.data.middleCols(b * hw, hw).rowwise().mean().transpose();
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> global_average_pool_backward(const Mat<Scalar>& dpooled, int height, int width) {
  const Eigen::Index hw = static_cast<Eigen::Index>(height) * width;
  const auto batch = static_cast<int>(dpooled.rows());
  FeatureMap<Scalar> dx{Mat<Scalar>(dpooled.cols(), batch * hw), batch, height, width};
  for (int b = 0; b < batch; ++b) {
    dx.data.middleCols(b * hw, hw).colwise() = dpooled.row(b).transpose() / Scalar(hw);
  }
  return dx;
}

}  // namespace reid::nn
