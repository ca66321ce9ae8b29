#include "reid/fusion.hpp"

#include <algorithm>
#include <numeric>

#include "reid/error.hpp"

namespace reid {

EmbeddingSet FusedEmbeddingSet::to_embedding_set() const {
  EmbeddingSet set;
  set.branch = Branch::kFused;
  set.ids = ids;
  set.matrix = matrix.cast<float>();
  return set;
}

FusedEmbeddingSet fuse_embeddings(const EmbeddingSet& branch_a, const EmbeddingSet& branch_b,
                                  const FusionOptions& options) {
  if (branch_a.branch == Branch::kFused || branch_b.branch == Branch::kFused) {
    throw ValidationError("cannot fuse an already fused embedding set");
  }
  branch_a.validate();
  branch_b.validate();
  if (branch_a.ids != branch_b.ids) {
    throw ValidationError("branch embedding sets do not share the same id sequence");
  }
  Eigen::MatrixXd a = branch_a.matrix.cast<double>();
  Eigen::MatrixXd b = branch_b.matrix.cast<double>();
  if (options.l2_normalize_branches) {
    a.rowwise().normalize();
    b.rowwise().normalize();
  }
  FusedEmbeddingSet fused;
  fused.ids = branch_a.ids;
  fused.source_dims = {static_cast<int>(a.cols()), static_cast<int>(b.cols())};
  fused.matrix.resize(a.rows(), a.cols() + b.cols());
  fused.matrix << a, b;
  return fused;
}

FusedEmbeddingSet as_fused(const EmbeddingSet& branch) {
  branch.validate();
  FusedEmbeddingSet out;
  out.ids = branch.ids;
  out.matrix = branch.matrix.cast<double>();
  out.source_dims = {static_cast<int>(branch.dim()), 0};
  return out;
}

Eigen::MatrixXd distance_matrix(const Eigen::MatrixXd& query, const Eigen::MatrixXd& gallery) {
  if (query.cols() != gallery.cols()) {
    throw ValidationError("query dim " + std::to_string(query.cols()) + " != gallery dim " +
                          std::to_string(gallery.cols()));
  }
  Eigen::MatrixXd d(query.rows(), gallery.rows());
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    d.row(i) = (gallery.rowwise() - query.row(i)).rowwise().norm().transpose();
  }
  if (!d.allFinite()) throw NumericError("distance matrix contains non-finite values");
  return d;
}

Eigen::MatrixXd distance_matrix(const FusedEmbeddingSet& query, const FusedEmbeddingSet& gallery) {
  return distance_matrix(query.matrix, gallery.matrix);
}

std::vector<int> rank_gallery(const Eigen::Ref<const Eigen::VectorXd>& distances) {
  if (!distances.allFinite()) throw NumericError("rank_gallery: non-finite distance");
  std::vector<int> order(static_cast<std::size_t>(distances.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return distances(a) < distances(b); });
  return order;
}

std::vector<RankedResult> rank_all(const Eigen::MatrixXd& distances,
                                   const std::vector<std::string>& query_ids) {
  require(static_cast<Eigen::Index>(query_ids.size()) == distances.rows(),
          "rank_all: one query id per distance row required");
  std::vector<RankedResult> out;
  out.reserve(query_ids.size());
  for (Eigen::Index i = 0; i < distances.rows(); ++i) {
    RankedResult r;
    r.query_id = query_ids[i];
    r.ordering = rank_gallery(distances.row(i).transpose());
    for (int j : r.ordering) r.distances.push_back(distances(i, j));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace reid
