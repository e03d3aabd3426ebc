#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "densefocus/geometry.hpp"

namespace densefocus::anchors {

// Pyramid anchor layout. Level l has stride 2^l and base area 4^l * 16,
// i.e. 32^2 at level 3 up to 512^2 at level 7.
struct AnchorConfig {
  std::vector<int> levels = {3, 4, 5, 6, 7};
  std::vector<double> aspect_ratios = {0.5, 1.0, 2.0};
  std::vector<double> octave_scales = {1.0, 1.2599210498948732, 1.5874010519681994};  // 2^{0,1/3,2/3}

  int anchors_per_location() const {
    return static_cast<int>(aspect_ratios.size() * octave_scales.size());
  }
  static double stride_at_level(int level) { return static_cast<double>(1 << level); }
  static double base_area_at_level(int level) {
    return 16.0 * static_cast<double>(1ull << (2 * level));
  }
  void validate() const;  // throws std::invalid_argument
};

struct AnchorSet {
  std::vector<geometry::Box> boxes;        // not clipped to the image
  std::vector<std::size_t> level_offsets;  // start index per level, plus total at the end
  AnchorConfig config;
  int image_width = 0;
  int image_height = 0;

  std::size_t size() const { return boxes.size(); }
  int level_of(std::size_t index) const;
};

enum class AnchorLabel : std::uint8_t { Foreground, Background, Ignore };

struct GroundTruth {
  geometry::Box box;
  int class_id = 0;
};

// One label per anchor. gt_index/class_id are -1 and the regression target is
// zero unless the anchor is Foreground.
struct MatchAssignment {
  std::vector<AnchorLabel> labels;
  std::vector<int> gt_index;
  std::vector<int> class_id;
  std::vector<geometry::RegressionTarget> targets;

  std::size_t size() const { return labels.size(); }
  std::size_t foreground_count() const;
};

// Deterministic ordering: level, row, col, scale-major, ratio-minor.
// Throws if the image is smaller than the coarsest stride.
AnchorSet generate_anchors(const AnchorConfig& cfg, int image_width, int image_height);

// Max-IoU band assignment: foreground at IoU >= 0.5 (argmax gt, lower index
// wins ties), background below 0.4, ignore in [0.4, 0.5).
MatchAssignment assign_targets(const AnchorSet& anchor_set, std::span<const GroundTruth> gts);

inline constexpr double kForegroundIou = 0.5;
inline constexpr double kBackgroundIou = 0.4;

}  // namespace densefocus::anchors
