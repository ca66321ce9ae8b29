#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "reid/dataset_io.hpp"

namespace reid {

/// Row-wise concatenation of two branch embeddings over the same ids.
struct FusedEmbeddingSet {
  std::vector<std::string> ids;
  Eigen::MatrixXd matrix;             // count x (D + P)
  std::pair<int, int> source_dims{};  // (D, P)

  Eigen::Index count() const { return matrix.rows(); }
  Eigen::Index dim() const { return matrix.cols(); }
  /// As a storable set tagged `fused` (float payload).
  EmbeddingSet to_embedding_set() const;
};

struct FusionOptions {
  bool l2_normalize_branches = false;
};

/// Requires identical id sequences and neither input already fused.
FusedEmbeddingSet fuse_embeddings(const EmbeddingSet& branch_a, const EmbeddingSet& branch_b,
                                  const FusionOptions& options = {});

/// Wraps a single branch so standalone and fused evaluation share one path.
FusedEmbeddingSet as_fused(const EmbeddingSet& branch);

/// Euclidean distances between query rows and gallery rows, in double.
Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& query, const Eigen::MatrixXd& gallery);
Eigen::MatrixXd distance_matrix(const FusedEmbeddingSet& query, const FusedEmbeddingSet& gallery);

struct RankedResult {
  std::string query_id;
  std::vector<int> ordering;      // gallery indices, nearest first
  std::vector<double> distances;  // aligned with ordering
};

/// Stable ascending sort; equal distances keep ascending gallery index.
std::vector<int> rank_gallery(const Eigen::Ref<const Eigen::VectorXd>& distances);

std::vector<RankedResult> rank_all(const Eigen::MatrixXd& distances,
                                   const std::vector<std::string>& query_ids);

}  // namespace reid
