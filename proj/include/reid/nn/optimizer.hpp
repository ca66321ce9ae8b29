#pragma once

#include <string>
#include <vector>

#include "reid/nn/param.hpp"

namespace reid::nn {

enum class OptimizerKind { kRmsProp, kSgdMomentum };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kRmsProp;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;  // L2 coefficient added to every gradient
  double rms_decay = 0.99;
  double momentum = 0.9;
  double epsilon = 1e-8;
};

/// First-order update over a fixed parameter list. Holds one state slot per
/// parameter, so the list order must not change between steps.
template <typename Scalar>
class Optimizer {
 public:
  Optimizer(ParamList<Scalar> params, OptimizerConfig config)
      : params_(std::move(params)), config_(config) {
    for (auto* p : params_) state_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
  }

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }

  void step() {
    const auto lr = static_cast<Scalar>(config_.learning_rate);
    const auto wd = static_cast<Scalar>(config_.weight_decay);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Param<Scalar>& p = *params_[i];
      Mat<Scalar> g = p.grad + wd * p.value;
      Mat<Scalar>& s = state_[i];
      if (config_.kind == OptimizerKind::kRmsProp) {
        const auto rho = static_cast<Scalar>(config_.rms_decay);
        s = rho * s + (Scalar(1) - rho) * g.cwiseAbs2();
        p.value.array() -= lr * g.array() / (s.array().sqrt() + static_cast<Scalar>(config_.epsilon));
      } else {
        s = static_cast<Scalar>(config_.momentum) * s + g;
        p.value -= lr * s;
      }
    }
  }

 private:
  ParamList<Scalar> params_;
  OptimizerConfig config_;
  std::vector<Mat<Scalar>> state_;
};

}  // namespace reid::nn
