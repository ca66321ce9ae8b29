#include "reid/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "reid/error.hpp"

namespace reid {

void EvalProtocol::validate() const {
  require(!ranks_reported.empty(), "ranks_reported must not be empty");
  for (std::size_t i = 0; i < ranks_reported.size(); ++i) {
    require(ranks_reported[i] >= 1, "reported ranks must be >= 1");
    require(i == 0 || ranks_reported[i] > ranks_reported[i - 1],
            "reported ranks must be strictly increasing");
  }
}

bool RelevanceLabels::has_valid_match() const {
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    if (relevant[i] && valid[i]) return true;
  }
  return false;
}

RelevanceLabels relevance_labels(const ImageRecord& query, std::span<const ImageRecord> gallery,
                                 const EvalProtocol& protocol) {
  require(!gallery.empty(), "relevance_labels: empty gallery");
  RelevanceLabels out;
  out.relevant.reserve(gallery.size());
  out.valid.reserve(gallery.size());
  for (const auto& g : gallery) {
    const bool same_vehicle = g.vehicle_id == query.vehicle_id;
    const bool excluded =
        protocol.exclude_same_camera && same_vehicle && g.camera_id == query.camera_id;
    out.relevant.push_back(same_vehicle ? 1 : 0);
    out.valid.push_back(excluded ? 0 : 1);
  }
  return out;
}

double average_precision(std::span<const std::uint8_t> relevance) {
  double sum = 0.0;
  int hits = 0;
  for (std::size_t k = 0; k < relevance.size(); ++k) {
    if (relevance[k]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) throw ValidationError("average_precision: no relevant entry");
  return sum / hits;
}

std::map<int, double> cmc_curve(std::span<const int> first_match_ranks,
                                std::span<const int> ranks_reported) {
  std::map<int, double> out;
  for (int k : ranks_reported) {
    int within = 0;
    for (int r : first_match_ranks) {
      require(r >= 1, "first-match ranks must be >= 1");
      if (r <= k) ++within;
    }
    out[k] = first_match_ranks.empty()
                 ? 0.0
                 : static_cast<double>(within) / static_cast<double>(first_match_ranks.size());
  }
  return out;
}

EvalReport evaluate(const std::string& experiment, std::span<const ImageRecord> queries,
                    std::span<const ImageRecord> gallery, const std::vector<RankedResult>& rankings,
                    const EvalProtocol& protocol) {
  protocol.validate();
  std::unordered_map<std::string, const RankedResult*> by_id;
  for (const auto& r : rankings) by_id[r.query_id] = &r;

  EvalReport report;
  report.experiment = experiment;
  report.protocol = protocol;
  std::vector<int> first_ranks;
  double ap_sum = 0.0;
  for (const auto& q : queries) {
    auto it = by_id.find(q.image_id);
    if (it == by_id.end()) throw ValidationError("no ranking for query " + q.image_id);
    const RankedResult& ranking = *it->second;
    if (ranking.ordering.size() != gallery.size()) {
      throw ValidationError("ranking for " + q.image_id + " does not cover the gallery");
    }
    const RelevanceLabels labels = relevance_labels(q, gallery, protocol);
    if (!labels.has_valid_match()) {
      report.skipped.push_back(q.image_id);
      continue;
    }
    std::vector<std::uint8_t> ranked;
    ranked.reserve(gallery.size());
    for (int j : ranking.ordering) {
      if (labels.valid[j]) ranked.push_back(labels.relevant[j]);
    }
    QueryResult qr;
    qr.query_id = q.image_id;
    qr.average_precision = average_precision(ranked);
    qr.first_match_rank =
        static_cast<int>(std::find(ranked.begin(), ranked.end(), 1) - ranked.begin()) + 1;
    ap_sum += qr.average_precision;
    first_ranks.push_back(qr.first_match_rank);
    report.per_query.push_back(std::move(qr));
  }
  if (report.per_query.empty()) throw ValidationError("no query has a valid gallery match");
  report.mean_average_precision = ap_sum / static_cast<double>(report.per_query.size());
  report.cmc = cmc_curve(first_ranks, protocol.ranks_reported);
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json cmc_json = nlohmann::json::object();
  for (const auto& [k, v] : cmc) cmc_json["rank-" + std::to_string(k)] = v;
  nlohmann::json queries = nlohmann::json::array();
  for (const auto& q : per_query) {
    queries.push_back({{"query_id", q.query_id},
                       {"ap", q.average_precision},
                       {"first_match_rank", q.first_match_rank}});
  }
  return {{"experiment", experiment},
          {"mAP", mean_average_precision},
          {"cmc", cmc_json},
          {"protocol",
           {{"exclude_same_camera", protocol.exclude_same_camera},
            {"ranks_reported", protocol.ranks_reported},
            {"tie_break", "ascending gallery index"}}},
          {"per_query", queries},
          {"skipped", skipped}};
}

std::string EvalReport::to_table() const {
  std::string header = "| Experiment | mAP |";
  std::string rule = "|---|---|";
  char buf[64];
  std::snprintf(buf, sizeof(buf), " %.2f |", 100.0 * mean_average_precision);
  std::string row = "| " + experiment + " |" + buf;
  for (const auto& [k, v] : cmc) {
    header += " rank-" + std::to_string(k) + " |";
    rule += "---|";
    std::snprintf(buf, sizeof(buf), " %.2f |", 100.0 * v);
    row += buf;
  }
  return header + "\n" + rule + "\n" + row + "\n";
}

namespace {

void blit_thumbnail(Image& canvas, const Image& src, int x0, int y0, const PanelLayout& layout,
                    const std::uint8_t color[3]) {
  const Image thumb = resize_bilinear(src, layout.thumb, layout.thumb);
  for (int y = 0; y < layout.thumb; ++y)
    for (int x = 0; x < layout.thumb; ++x) {
      const bool edge = x < layout.border || y < layout.border || x >= layout.thumb - layout.border ||
                        y >= layout.thumb - layout.border;
      for (int c = 0; c < 3; ++c) canvas.at(x0 + x, y0 + y, c) = edge ? color[c] : thumb.at(x, y, c);
    }
}

}  // namespace

Image render_topk_grid(const Image& query, std::span<const Image> ranked_gallery,
                       std::span<const std::uint8_t> relevance, int k, const PanelLayout& layout) {
  require(k >= 1, "render_topk_grid: k must be >= 1");
  require(layout.thumb > 2 * layout.border && layout.margin >= 0, "render_topk_grid: bad layout");
  require(relevance.size() >= std::min<std::size_t>(ranked_gallery.size(), k),
          "render_topk_grid: relevance shorter than the shown gallery");
  static constexpr std::uint8_t kQuery[3] = {60, 120, 255};
  static constexpr std::uint8_t kHit[3] = {0, 200, 0};
  static constexpr std::uint8_t kMiss[3] = {220, 0, 0};

  Image canvas(layout.width(k), layout.height(), 255);
  blit_thumbnail(canvas, query, layout.margin, layout.margin, layout, kQuery);
  const int shown = std::min<int>(k, static_cast<int>(ranked_gallery.size()));
  for (int i = 0; i < shown; ++i) {
    const int x0 = layout.margin + (i + 1) * (layout.thumb + layout.margin);
    blit_thumbnail(canvas, ranked_gallery[i], x0, layout.margin, layout, relevance[i] ? kHit : kMiss);
  }
  return canvas;
}

void render_topk_grid(const std::filesystem::path& query,
                      std::span<const std::filesystem::path> ranked_gallery,
                      std::span<const std::uint8_t> relevance, int k,
                      const std::filesystem::path& out, const PanelLayout& layout) {
  const Image q = read_png(query);
  std::vector<Image> gallery;
  const std::size_t shown = std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)), ranked_gallery.size());
  for (std::size_t i = 0; i < shown; ++i) gallery.push_back(read_png(ranked_gallery[i]));
  write_png(render_topk_grid(q, gallery, relevance, k, layout), out);
}

}  // namespace reid
