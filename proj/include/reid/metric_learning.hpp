#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "reid/dataset_io.hpp"
#include "reid/error.hpp"

namespace reid {

struct SamplerConfig {
  int identities_per_batch = 3;  // P
  int instances_per_identity = 4;  // K
  std::uint64_t seed = 0;

  int batch_size() const { return identities_per_batch * instances_per_identity; }
  void validate() const {
    require(identities_per_batch >= 2, "sampler P must be >= 2");
    require(instances_per_identity >= 2, "sampler K must be >= 2");
  }
};

struct TripletConfig {
  double margin = 0.3;
  bool soft_margin = false;  // log(1 + exp(x)) instead of the hinge

  void validate() const { require(margin >= 0.0, "triplet margin must be >= 0"); }
};

/// Draws P distinct identities, then K records per identity (without
/// replacement when the identity has >= K records, with replacement otherwise).
std::vector<ImageRecord> pk_sample_batch(std::span<const ImageRecord> train_records,
                                         const SamplerConfig& config, std::mt19937_64& rng);

/// Euclidean distances between the rows of `x`, computed directly from the
/// differences.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> pairwise_distances(
    const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() == 0) throw ValidationError("pairwise_distances: empty batch");
  if (!x.allFinite()) throw NumericError("pairwise_distances: non-finite embedding");
  const Eigen::Index n = x.rows();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = Scalar(0);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (x.row(i) - x.row(j)).norm();
    }
  }
  return d;
}

template <typename Scalar>
struct TripletLossResult {
  Scalar loss = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> gradient;  // dL/d(embeddings)
  std::vector<Eigen::Index> hardest_positive;
  std::vector<Eigen::Index> hardest_negative;
  std::vector<Scalar> anchor_terms;  // per-anchor hinge (or soft-margin) value
};

/// Batch-hard triplet loss: mean over anchors of
/// hinge(margin + max_p d(a, p) - min_n d(a, n)).
/// Ties resolve to the lowest index; the hinge and a zero distance both take
/// a zero subgradient.
template <typename Derived>
TripletLossResult<typename Derived::Scalar> batch_hard_triplet_loss(
    const Eigen::MatrixBase<Derived>& embeddings, std::span<const int> labels,
    const TripletConfig& config) {
  using Scalar = typename Derived::Scalar;
  config.validate();
  const Eigen::Index n = embeddings.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw ValidationError("triplet loss: label count does not match batch");
  }
  const auto d = pairwise_distances(embeddings);

  TripletLossResult<Scalar> out;
  out.gradient = decltype(out.gradient)::Zero(n, embeddings.cols());
  out.hardest_positive.resize(n);
  out.hardest_negative.resize(n);
  out.anchor_terms.resize(n);

  auto add_distance_grad = [&](Eigen::Index a, Eigen::Index b, Scalar weight) {
    if (d(a, b) <= Scalar(0)) return;
    const auto unit = ((embeddings.row(a) - embeddings.row(b)) / d(a, b)).eval();
    out.gradient.row(a) += weight * unit;
    out.gradient.row(b) -= weight * unit;
  };

  Scalar total = 0;
  for (Eigen::Index a = 0; a < n; ++a) {
    Eigen::Index pos = -1, neg = -1;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos < 0 || d(a, j) > d(a, pos)) pos = j;
      } else if (neg < 0 || d(a, j) < d(a, neg)) {
        neg = j;
      }
    }
    if (pos < 0) throw ValidationError("triplet loss: anchor " + std::to_string(a) + " has no positive");
    if (neg < 0) throw ValidationError("triplet loss: anchor " + std::to_string(a) + " has no negative");
    out.hardest_positive[a] = pos;
    out.hardest_negative[a] = neg;

    const Scalar x = d(a, pos) - d(a, neg);
    Scalar term, slope;
    if (config.soft_margin) {
      term = x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
      slope = Scalar(1) / (Scalar(1) + std::exp(-x));
    } else {
      term = std::max(Scalar(0), Scalar(config.margin) + x);
      slope = term > Scalar(0) ? Scalar(1) : Scalar(0);
    }
    out.anchor_terms[a] = term;
    total += term;
    if (slope != Scalar(0)) {
      add_distance_grad(a, pos, slope / Scalar(n));
      add_distance_grad(a, neg, -slope / Scalar(n));
    }
  }
  out.loss = total / Scalar(n);
  return out;
}

}  // namespace reid
