#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "reid/dataset_io.hpp"
#include "reid/fusion.hpp"
#include "reid/image.hpp"

namespace reid {

struct EvalProtocol {
  bool exclude_same_camera = true;
  std::vector<int> ranks_reported{1, 5, 10, 20};

  void validate() const;
};

struct RelevanceLabels {
  std::vector<std::uint8_t> relevant;  // same vehicle_id
  std::vector<std::uint8_t> valid;     // 0 = dropped from ranking and scoring

  bool has_valid_match() const;
};

/// Labels the gallery (in the given order) against one query. Same-vehicle
/// same-camera entries are invalid when the protocol excludes them.
RelevanceLabels relevance_labels(const ImageRecord& query, std::span<const ImageRecord> gallery,
                                 const EvalProtocol& protocol);

/// Mean of precision@k over the ranks k holding a relevant entry.
double average_precision(std::span<const std::uint8_t> relevance);

/// rate(k) = fraction of queries whose first hit has rank <= k (1-based).
std::map<int, double> cmc_curve(std::span<const int> first_match_ranks,
                                std::span<const int> ranks_reported);

struct QueryResult {
  std::string query_id;
  double average_precision = 0.0;
  int first_match_rank = 0;
};

struct EvalReport {
  std::string experiment;
  double mean_average_precision = 0.0;
  std::map<int, double> cmc;
  std::vector<QueryResult> per_query;
  std::vector<std::string> skipped;  // queries without a valid match
  EvalProtocol protocol;

  nlohmann::json to_json() const;
  /// Percent table: Experiment, mAP, rank-k columns.
  std::string to_table() const;
};

/// `rankings` index into `gallery`; every query needs exactly one ranking.
EvalReport evaluate(const std::string& experiment, std::span<const ImageRecord> queries,
                    std::span<const ImageRecord> gallery, const std::vector<RankedResult>& rankings,
                    const EvalProtocol& protocol);

struct PanelLayout {
  int thumb = 64;
  int margin = 4;
  int border = 3;

  int width(int k) const { return (k + 1) * thumb + (k + 2) * margin; }
  int height() const { return thumb + 2 * margin; }
};

/// One row: query thumbnail, then the top-k gallery thumbnails framed green
/// (relevant) or red (not relevant).
Image render_topk_grid(const Image& query, std::span<const Image> ranked_gallery,
                       std::span<const std::uint8_t> relevance, int k,
                       const PanelLayout& layout = {});

void render_topk_grid(const std::filesystem::path& query,
                      std::span<const std::filesystem::path> ranked_gallery,
                      std::span<const std::uint8_t> relevance, int k,
                      const std::filesystem::path& out, const PanelLayout& layout = {});

}  // namespace reid
