#include "reid/keyframe.hpp"

#include <string>

#include "reid/error.hpp"

namespace reid {

void KeyframeConfig::validate() const {
  require(grid >= 1, "keyframe grid must be >= 1");
  require(bins >= 2 && bins <= 256, "keyframe bins must be in [2, 256]");
  require(threshold > 0.0 && threshold < 1.0, "keyframe threshold must be in (0, 1)");
}

FrameHistogram grid_histogram(const Image& frame, const KeyframeConfig& config) {
  config.validate();
  if (frame.width < config.grid || frame.height < config.grid) {
    throw ValidationError("frame " + std::to_string(frame.width) + "x" +
                          std::to_string(frame.height) + " is smaller than the " +
                          std::to_string(config.grid) + "x" + std::to_string(config.grid) +
                          " grid");
  }
  FrameHistogram h;
  h.grid = config.grid;
  h.bins = config.bins;
  h.values = Eigen::VectorXd::Zero(h.block_count() * config.bins);

  const int cell_w = frame.width / config.grid;
  const int cell_h = frame.height / config.grid;
  for (int y = 0; y < frame.height; ++y) {
    const int row = std::min(y / cell_h, config.grid - 1);
    for (int x = 0; x < frame.width; ++x) {
      const int col = std::min(x / cell_w, config.grid - 1);
      const Eigen::Index cell = static_cast<Eigen::Index>(row) * config.grid + col;
      for (int c = 0; c < 3; ++c) {
        const int bin = frame.at(x, y, c) * config.bins / 256;
        h.values((cell * 3 + c) * config.bins + bin) += 1.0;
      }
    }
  }
  for (Eigen::Index b = 0; b < h.block_count(); ++b) {
    auto block = h.values.segment(b * config.bins, config.bins);
    const double total = block.sum();
    if (total > 0) block /= total;
  }
  return h;
}

double histogram_difference(const FrameHistogram& a, const FrameHistogram& b) {
  if (a.values.size() != b.values.size() || a.bins != b.bins) {
    throw ValidationError("histogram length mismatch");
  }
  if (a.values.size() == 0) return 0.0;
  const Eigen::Index blocks = a.values.size() / a.bins;
  return 0.5 * (a.values - b.values).cwiseAbs().sum() / static_cast<double>(blocks);
}

std::vector<ShotBoundary> detect_shot_boundaries(const std::vector<FrameHistogram>& histograms,
                                                 double threshold) {
  std::vector<ShotBoundary> out;
  for (std::size_t t = 1; t < histograms.size(); ++t) {
    const double d = histogram_difference(histograms[t - 1], histograms[t]);
    if (d > threshold) out.push_back({static_cast<int>(t), d});
  }
  return out;
}

std::vector<ShotBoundary> detect_shot_boundaries(const std::vector<Image>& frames,
                                                 const KeyframeConfig& config) {
  config.validate();
  std::vector<FrameHistogram> hists;
  hists.reserve(frames.size());
  for (const auto& f : frames) hists.push_back(grid_histogram(f, config));
  return detect_shot_boundaries(hists, config.threshold);
}

std::vector<Keyframe> extract_keyframes(const std::vector<Image>& frames,
                                        const KeyframeConfig& config) {
  require(!frames.empty(), "keyframe extraction needs at least one frame");
  std::vector<Keyframe> out{{0, frames.front()}};
  for (const auto& b : detect_shot_boundaries(frames, config)) {
    out.push_back({b.frame_index, frames[b.frame_index]});
  }
  return out;
}

}  // namespace reid
