#pragma once

#include <Eigen/Dense>
#include <vector>

#include "reid/image.hpp"

namespace reid {

struct KeyframeConfig {
  int grid = 16;            // cells per side
  int bins = 16;            // per channel
  double threshold = 0.20;  // difference above which a cut is declared

  void validate() const;
};

/// Per-cell, per-channel normalized histograms laid out as
/// ((cell_row * grid + cell_col) * 3 + channel) * bins + bin.
struct FrameHistogram {
  int grid = 0;
  int bins = 0;
  Eigen::VectorXd values;

  Eigen::Index block_count() const { return static_cast<Eigen::Index>(grid) * grid * 3; }
};

struct ShotBoundary {
  int frame_index = 0;  // frames frame_index-1 and frame_index are in different shots
  double score = 0.0;

  bool operator==(const ShotBoundary&) const = default;
};

struct Keyframe {
  int frame_index = 0;
  Image image;
};

/// The frame is cut into a uniform grid x grid partition; the last row and
/// column of cells absorb the remainder pixels.
FrameHistogram grid_histogram(const Image& frame, const KeyframeConfig& config);

/// Half the block-mean L1 distance; lies in [0, 1].
double histogram_difference(const FrameHistogram& a, const FrameHistogram& b);

std::vector<ShotBoundary> detect_shot_boundaries(const std::vector<Image>& frames,
                                                 const KeyframeConfig& config);

/// Same as above over precomputed histograms.
std::vector<ShotBoundary> detect_shot_boundaries(const std::vector<FrameHistogram>& histograms,
                                                 double threshold);

/// The first frame plus the frame at every boundary.
std::vector<Keyframe> extract_keyframes(const std::vector<Image>& frames,
                                        const KeyframeConfig& config);

}  // namespace reid
