#include "doctest.h"
#include "reid/fusion.hpp"
#include "support.hpp"

using namespace reid;
using testing::random_matrix;

namespace {

EmbeddingSet make_set(Branch branch, const Eigen::MatrixXd& m, const std::string& prefix = "x") {
  EmbeddingSet s;
  s.branch = branch;
  s.matrix = m.cast<float>();
  for (Eigen::Index i = 0; i < m.rows(); ++i) s.ids.push_back(prefix + std::to_string(i));
  return s;
}

Eigen::MatrixXd random_orthogonal(int n, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, n, rng));
  return qr.householderQ();
}

}  // namespace

TEST_CASE("fuse: [1,2] and [3] concatenate to [1,2,3]") {
  Eigen::MatrixXd a(1, 2), b(1, 1);
  a << 1, 2;
  b << 3;
  const auto f = fuse_embeddings(make_set(Branch::kCnnMid, a), make_set(Branch::kTransformer, b));
  REQUIRE(f.dim() == 3);
  CHECK(f.matrix(0, 0) == 1);
  CHECK(f.matrix(0, 1) == 2);
  CHECK(f.matrix(0, 2) == 3);
  CHECK(f.source_dims == std::pair{2, 1});
}

TEST_CASE("fuse: default widths give N x 3840") {
  std::mt19937_64 rng(1);
  const auto f = fuse_embeddings(make_set(Branch::kCnnMid, random_matrix(3, 3072, rng)),
                                 make_set(Branch::kTransformer, random_matrix(3, 768, rng)));
  CHECK(f.count() == 3);
  CHECK(f.dim() == 3840);
  const EmbeddingSet stored = f.to_embedding_set();
  CHECK(stored.branch == Branch::kFused);
  CHECK(stored.dim() == 3840);
}

TEST_CASE("fuse: columns keep each branch's rows in order") {
  std::mt19937_64 rng(2);
  const auto a = make_set(Branch::kCnnMid, random_matrix(5, 4, rng));
  const auto b = make_set(Branch::kTransformer, random_matrix(5, 3, rng));
  const auto f = fuse_embeddings(a, b);
  CHECK(f.matrix.leftCols(4) == a.matrix.cast<double>());
  CHECK(f.matrix.rightCols(3) == b.matrix.cast<double>());
  CHECK(f.ids == a.ids);

  FusionOptions norm;
  norm.l2_normalize_branches = true;
  const auto fn = fuse_embeddings(a, b, norm);
  for (int i = 0; i < 5; ++i) {
    CHECK(fn.matrix.row(i).leftCols(4).norm() == doctest::Approx(1.0));
    CHECK(fn.matrix.row(i).rightCols(3).norm() == doctest::Approx(1.0));
  }
}

TEST_CASE("fuse: id mismatch, reordering and already fused inputs are rejected") {
  std::mt19937_64 rng(3);
  const auto a = make_set(Branch::kCnnMid, random_matrix(3, 2, rng));
  auto b = make_set(Branch::kTransformer, random_matrix(3, 2, rng));
  std::swap(b.ids[0], b.ids[1]);
  CHECK_THROWS_AS(fuse_embeddings(a, b), ValidationError);
  CHECK_THROWS_AS(fuse_embeddings(a, make_set(Branch::kTransformer, random_matrix(2, 2, rng))), ValidationError);
  CHECK_THROWS_AS(fuse_embeddings(a, make_set(Branch::kFused, random_matrix(3, 2, rng))), ValidationError);
}

TEST_CASE("distance matrix: zero on equal rows, 4x7 brute force, symmetry, dim mismatch") {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd q = random_matrix(4, 5, rng);
  Eigen::MatrixXd g = random_matrix(7, 5, rng);
  g.row(3) = q.row(1);
  const Eigen::MatrixXd d = distance_matrix(q, g);
  CHECK(d(1, 3) == 0.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 7; ++j) {
      double s = 0;
      for (int c = 0; c < 5; ++c) s += (q(i, c) - g(j, c)) * (q(i, c) - g(j, c));
      CHECK(d(i, j) == doctest::Approx(std::sqrt(s)).epsilon(1e-14));
    }
  CHECK((distance_matrix(g, q) - d.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(distance_matrix(q, random_matrix(2, 4, rng)), ValidationError);
}

TEST_CASE("distance matrix property: fused d^2 = d_a^2 + d_b^2") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd qa = random_matrix(3, 6, rng), qb = random_matrix(3, 4, rng);
    const Eigen::MatrixXd ga = random_matrix(5, 6, rng), gb = random_matrix(5, 4, rng);
    Eigen::MatrixXd qf(3, 10), gf(5, 10);
    qf << qa, qb;
    gf << ga, gb;
    const Eigen::MatrixXd lhs = distance_matrix(qf, gf).array().square();
    const Eigen::MatrixXd rhs = distance_matrix(qa, ga).array().square() + distance_matrix(qb, gb).array().square();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("rank gallery: examples") {
  Eigen::VectorXd d(3);
  d << 0.5, 0.1, 0.3;
  CHECK(rank_gallery(d) == std::vector<int>{1, 2, 0});
  CHECK(rank_gallery((d.array() + 4.0).matrix()) == std::vector<int>{1, 2, 0});
  CHECK(rank_gallery(Eigen::VectorXd::Constant(5, 2.0)) == std::vector<int>{0, 1, 2, 3, 4});
  Eigen::VectorXd ties(4);
  ties << 1, 0, 1, 0;
  CHECK(rank_gallery(ties) == std::vector<int>{1, 3, 0, 2});
  d(2) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(rank_gallery(d), NumericError);
}

TEST_CASE("rank all: orderings are permutations with non-decreasing distances") {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd d = distance_matrix(random_matrix(4, 3, rng), random_matrix(9, 3, rng));
  const auto ranked = rank_all(d, {"a", "b", "c", "d"});
  REQUIRE(ranked.size() == 4);
  for (const auto& r : ranked) {
    std::vector<int> sorted = r.ordering;
    std::sort(sorted.begin(), sorted.end());
    for (int j = 0; j < 9; ++j) CHECK(sorted[j] == j);
    CHECK(std::is_sorted(r.distances.begin(), r.distances.end()));
  }
  CHECK(ranked[2].query_id == "c");
}

TEST_CASE("rank dominance: both branches prefer j over k, so does the fusion") {
  std::mt19937_64 rng(7);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::MatrixXd qa = random_matrix(3, 4, rng), qb = random_matrix(3, 2, rng);
    const Eigen::MatrixXd ga = random_matrix(12, 4, rng), gb = random_matrix(12, 2, rng);
    const auto fa = fuse_embeddings(make_set(Branch::kCnnMid, qa, "q"), make_set(Branch::kTransformer, qb, "q"));
    const auto fg = fuse_embeddings(make_set(Branch::kCnnMid, ga, "g"), make_set(Branch::kTransformer, gb, "g"));
    const Eigen::MatrixXd da = distance_matrix(fa.matrix.leftCols(4), fg.matrix.leftCols(4));
    const Eigen::MatrixXd db = distance_matrix(fa.matrix.rightCols(2), fg.matrix.rightCols(2));
    const auto ranked = rank_all(distance_matrix(fa, fg), fa.ids);
    for (int q = 0; q < 3; ++q) {
      std::vector<int> pos(12);
      for (int r = 0; r < 12; ++r) pos[ranked[q].ordering[r]] = r;
      for (int j = 0; j < 12; ++j)
        for (int k = 0; k < 12; ++k)
          if (da(q, j) < da(q, k) && db(q, j) < db(q, k)) {
            CHECK(pos[j] < pos[k]);
            ++checked;
          }
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("orthogonal invariance: a common rotation keeps every ordering") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd q = random_matrix(4, 6, rng), g = random_matrix(15, 6, rng);
    const Eigen::MatrixXd r = random_orthogonal(6, rng);
    const Eigen::MatrixXd d = distance_matrix(q, g);
    const Eigen::MatrixXd dr = distance_matrix(q * r, g * r);
    CHECK((d - dr).cwiseAbs().maxCoeff() < 1e-9);
    const auto a = rank_all(d, {"0", "1", "2", "3"});
    const auto b = rank_all(dr, {"0", "1", "2", "3"});
    for (int i = 0; i < 4; ++i) CHECK(a[i].ordering == b[i].ordering);
  }
}
