#pragma once

// Helpers shared by the unit and acceptance suites: reference evaluators
// written straight from the metric definitions, and finite-difference checks.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "reid/dataset_io.hpp"
#include "reid/error.hpp"
#include "reid/evaluation.hpp"
#include "reid/fusion.hpp"
#include "reid/image.hpp"
#include "reid/nn/param.hpp"

namespace reid::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("reid_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Image solid_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

inline Image noise_image(int w, int h, std::mt19937_64& rng, int lo = 0, int hi = 255) {
  std::uniform_int_distribution<int> u(lo, hi);
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(u(rng));
  return img;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                                     double stddev = 1.0) {
  std::normal_distribution<double> n(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Frame sequence with `cuts` abrupt scene changes at the returned indices.
// Each shot is a flat background with a small rectangle drifting one pixel per
// frame; colours sit on bin centres and shots never share a background bin,
// so within-shot differences stay tiny and cuts are large.
struct ShotSequence {
  std::vector<Image> frames;
  std::vector<int> cuts;
};

inline ShotSequence make_shot_sequence(int cuts, int frames_per_shot, std::mt19937_64& rng,
                                       int width = 64, int height = 48) {
  ShotSequence out;
  std::uniform_int_distribution<int> bin(0, 15);
  int prev[3] = {-1, -1, -1};
  for (int shot = 0; shot <= cuts; ++shot) {
    int bg[3], fg[3];
    for (int c = 0; c < 3; ++c) {
      do bg[c] = bin(rng);
      while (bg[c] == prev[c]);
      prev[c] = bg[c];
      fg[c] = bin(rng);
    }
    if (shot > 0) out.cuts.push_back(static_cast<int>(out.frames.size()));
    for (int f = 0; f < frames_per_shot; ++f) {
      Image img(width, height);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const bool inside = x >= 4 + f && x < 12 + f && y >= 4 && y < 12;
          for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(16 * (inside ? fg[c] : bg[c]) + 8);
        }
      out.frames.push_back(std::move(img));
    }
  }
  return out;
}

// Identities are (group, sub) pairs. Branch A sees only the group, branch B
// only the sub index, so each branch alone ties every identity sharing its
// coordinate while the concatenation separates all of them. One query on
// camera 0 and two gallery images on camera 1 per identity; gallery rows are
// sub-major so same-group strangers sit at lower indices than some matches.
struct StubInstance {
  Eigen::MatrixXd query_a, query_b, gallery_a, gallery_b;
  std::vector<int> query_labels, query_cams, gallery_labels, gallery_cams;
};

inline StubInstance complementary_stub(int groups, int subs) {
  StubInstance s;
  auto add = [&](Eigen::MatrixXd& a, Eigen::MatrixXd& b, int g, int u) {
    a.conservativeResize(a.rows() + 1, groups);
    b.conservativeResize(b.rows() + 1, subs);
    a.row(a.rows() - 1).setZero();
    b.row(b.rows() - 1).setZero();
    a(a.rows() - 1, g) = 1.0;
    b(b.rows() - 1, u) = 1.0;
  };
  s.query_a.resize(0, groups);
  s.gallery_a.resize(0, groups);
  s.query_b.resize(0, subs);
  s.gallery_b.resize(0, subs);
  for (int g = 0; g < groups; ++g)
    for (int u = 0; u < subs; ++u) {
      add(s.query_a, s.query_b, g, u);
      s.query_labels.push_back(g * subs + u);
      s.query_cams.push_back(0);
    }
  for (int copy = 0; copy < 2; ++copy)
    for (int u = 0; u < subs; ++u)
      for (int g = 0; g < groups; ++g) {
        add(s.gallery_a, s.gallery_b, g, u);
        s.gallery_labels.push_back(g * subs + u);
        s.gallery_cams.push_back(1);
      }
  return s;
}

// Reference evaluator: loops over every (query, gallery) pair, sorts by
// (distance, index), drops invalid entries and scores straight from the
// definitions. Shares no code with the toolkit evaluator.
struct BruteForceResult {
  double map = 0.0;
  std::vector<double> cmc;  // aligned with the requested ranks
  int scored = 0;
};

inline BruteForceResult brute_force_evaluate(const Eigen::MatrixXd& query_emb,
                                             const Eigen::MatrixXd& gallery_emb,
                                             const std::vector<int>& query_labels,
                                             const std::vector<int>& query_cams,
                                             const std::vector<int>& gallery_labels,
                                             const std::vector<int>& gallery_cams,
                                             bool exclude_same_camera, const std::vector<int>& ranks) {
  BruteForceResult out;
  out.cmc.assign(ranks.size(), 0.0);
  double ap_sum = 0.0;
  for (Eigen::Index q = 0; q < query_emb.rows(); ++q) {
    std::vector<std::pair<double, int>> scored;
    for (Eigen::Index g = 0; g < gallery_emb.rows(); ++g) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < query_emb.cols(); ++c) {
        const double diff = query_emb(q, c) - gallery_emb(g, c);
        s += diff * diff;
      }
      scored.emplace_back(std::sqrt(s), static_cast<int>(g));
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> rel;
    for (auto& [dist, g] : scored) {
      const bool same_id = gallery_labels[g] == query_labels[q];
      if (exclude_same_camera && same_id && gallery_cams[g] == query_cams[q]) continue;
      rel.push_back(same_id ? 1 : 0);
    }
    int hits = 0, first = 0;
    double precision_sum = 0.0;
    for (std::size_t k = 0; k < rel.size(); ++k) {
      if (!rel[k]) continue;
      ++hits;
      if (first == 0) first = static_cast<int>(k) + 1;
      precision_sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
    if (hits == 0) continue;
    ++out.scored;
    ap_sum += precision_sum / hits;
    for (std::size_t r = 0; r < ranks.size(); ++r)
      if (first <= ranks[r]) out.cmc[r] += 1.0;
  }
  if (out.scored > 0) {
    out.map = ap_sum / out.scored;
    for (auto& c : out.cmc) c /= out.scored;
  }
  return out;
}

inline std::vector<ImageRecord> make_records(const std::string& prefix, const std::vector<int>& labels,
                                             const std::vector<int>& cams, Split split) {
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out.push_back({prefix + std::to_string(i), "", "v" + std::to_string(labels[i]),
                   "c" + std::to_string(cams[i]), split});
  }
  return out;
}

// The toolkit path: distances, ranking, evaluation.
inline EvalReport toolkit_evaluate(const Eigen::MatrixXd& query_emb, const Eigen::MatrixXd& gallery_emb,
                                   const std::vector<int>& query_labels, const std::vector<int>& query_cams,
                                   const std::vector<int>& gallery_labels, const std::vector<int>& gallery_cams,
                                   const EvalProtocol& protocol) {
  const auto queries = make_records("q", query_labels, query_cams, Split::kQuery);
  const auto gallery = make_records("g", gallery_labels, gallery_cams, Split::kGallery);
  std::vector<std::string> ids;
  for (const auto& q : queries) ids.push_back(q.image_id);
  const auto rankings = rank_all(distance_matrix(query_emb, gallery_emb), ids);
  return evaluate("test", queries, gallery, rankings, protocol);
}

// Per-anchor hardest term by enumerating every (anchor, positive, negative)
// triplet and taking the largest hinge.
inline double brute_force_batch_hard(const Eigen::MatrixXd& x, const std::vector<int>& labels,
                                     double margin) {
  const auto n = static_cast<int>(x.rows());
  double total = 0.0;
  for (int a = 0; a < n; ++a) {
    double worst = 0.0;
    for (int p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (int m = 0; m < n; ++m) {
        if (labels[m] == labels[a]) continue;
        const double dp = std::sqrt((x.row(a) - x.row(p)).squaredNorm());
        const double dn = std::sqrt((x.row(a) - x.row(m)).squaredNorm());
        worst = std::max(worst, std::max(0.0, margin + dp - dn));
      }
    }
    total += worst;
  }
  return total / n;
}

// True when no anchor's hinge argument and no max/min selection in the
// batch-hard loss sits within `gap` of switching.
inline bool batch_hard_is_smooth(const Eigen::MatrixXd& x, const std::vector<int>& labels, double margin,
                                 double gap) {
  const auto n = static_cast<int>(x.rows());
  auto dist = [&](int i, int j) { return (x.row(i) - x.row(j)).norm(); };
  for (int a = 0; a < n; ++a) {
    std::vector<double> pos, neg;
    for (int j = 0; j < n; ++j) {
      if (j == a) continue;
      (labels[j] == labels[a] ? pos : neg).push_back(dist(a, j));
    }
    std::sort(pos.rbegin(), pos.rend());
    std::sort(neg.begin(), neg.end());
    if (pos.size() > 1 && pos[0] - pos[1] < gap) return false;
    if (neg.size() > 1 && neg[1] - neg[0] < gap) return false;
    if (std::abs(margin + pos[0] - neg[0]) < gap) return false;
  }
  return true;
}

// Central differences of `loss` against every entry of `x`.
inline Eigen::MatrixXd numeric_gradient(Eigen::MatrixXd x, const std::function<double(const Eigen::MatrixXd&)>& loss,
                                        double step) {
  Eigen::MatrixXd g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + step;
    const double up = loss(x);
    x.data()[i] = keep - step;
    const double down = loss(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * step);
  }
  return g;
}

inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-8});
  return (a - b).norm() / scale;
}

// Checks analytic parameter gradients against central differences for up to
// `samples` entries of each parameter. `loss` runs a full forward pass;
// `analytic` zeroes, runs forward+backward and leaves the gradients in place.
inline double worst_param_gradient_error(const nn::ParamList<double>& params,
                                         const std::function<double()>& loss,
                                         const std::function<void()>& analytic, int samples,
                                         std::mt19937_64& rng, double step = 1e-6) {
  analytic();
  double worst = 0.0;
  for (auto* p : params) {
    const Eigen::MatrixXd grad = p->grad;
    std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
    Eigen::VectorXd num(samples), ana(samples);
    for (int s = 0; s < samples; ++s) {
      const Eigen::Index i = pick(rng);
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + step;
      const double up = loss();
      p->value.data()[i] = keep - step;
      const double down = loss();
      p->value.data()[i] = keep;
      num[s] = (up - down) / (2 * step);
      ana[s] = grad.data()[i];
    }
    worst = std::max(worst, relative_error(num, ana));
  }
  return worst;
}

}  // namespace reid::testing
