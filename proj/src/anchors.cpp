#include "densefocus/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace densefocus::anchors {

void AnchorConfig::validate() const {
  if (levels.empty()) throw std::invalid_argument("AnchorConfig: levels empty");
  if (!std::is_sorted(levels.begin(), levels.end()) ||
      std::adjacent_find(levels.begin(), levels.end()) != levels.end()) {
    throw std::invalid_argument("AnchorConfig: levels must be strictly ascending");
  }
  for (int l : levels) {
    if (l < 0 || l > 16) throw std::invalid_argument("AnchorConfig: level out of range");
  }
  for (double r : aspect_ratios) {
    if (!(r > 0.0)) throw std::invalid_argument("AnchorConfig: aspect ratio must be > 0");
  }
  for (double s : octave_scales) {
    if (!(s > 0.0)) throw std::invalid_argument("AnchorConfig: octave scale must be > 0");
  }
  if (aspect_ratios.empty() || octave_scales.empty()) {
    throw std::invalid_argument("AnchorConfig: need at least one ratio and one scale");
  }
}

int AnchorSet::level_of(std::size_t index) const {
  for (std::size_t li = 0; li + 1 < level_offsets.size(); ++li) {
    if (index < level_offsets[li + 1]) return config.levels[li];
  }
  throw std::out_of_range("AnchorSet::level_of: index out of range");
}

AnchorSet generate_anchors(const AnchorConfig& cfg, int image_width, int image_height) {
  cfg.validate();
  const double coarsest = AnchorConfig::stride_at_level(cfg.levels.back());
  if (image_width < coarsest || image_height < coarsest) {
    throw std::invalid_argument("generate_anchors: image smaller than the coarsest stride");
  }

  AnchorSet out;
  out.config = cfg;
  out.image_width = image_width;
  out.image_height = image_height;
  out.level_offsets.push_back(0);

  for (int level : cfg.levels) {
    const double stride = AnchorConfig::stride_at_level(level);
    const double base_area = AnchorConfig::base_area_at_level(level);
    const int nx = static_cast<int>(std::ceil(image_width / stride));
    const int ny = static_cast<int>(std::ceil(image_height / stride));
    for (int row = 0; row < ny; ++row) {
      for (int col = 0; col < nx; ++col) {
        const double cx = (col + 0.5) * stride;
        const double cy = (row + 0.5) * stride;
        for (double scale : cfg.octave_scales) {
          const double area = base_area * scale * scale;
          for (double ratio : cfg.aspect_ratios) {
            const double w = std::sqrt(area * ratio);
            const double h = std::sqrt(area / ratio);
            out.boxes.push_back(geometry::Box::from_center(cx, cy, w, h));
          }
        }
      }
    }
    out.level_offsets.push_back(out.boxes.size());
  }
  return out;
}

std::size_t MatchAssignment::foreground_count() const {
  std::size_t n = 0;
  for (AnchorLabel l : labels) {
    if (l == AnchorLabel::Foreground) ++n;
  }
  return n;
}

MatchAssignment assign_targets(const AnchorSet& anchor_set, std::span<const GroundTruth> gts) {
  for (const auto& gt : gts) {
    if (gt.class_id < 0) throw std::invalid_argument("assign_targets: negative class id");
    if (gt.box.width() < 0.0 || gt.box.height() < 0.0) {
      throw std::invalid_argument("assign_targets: invalid ground-truth box");
    }
  }

  const std::size_t n = anchor_set.size();
  MatchAssignment out;
  out.labels.assign(n, AnchorLabel::Background);
  out.gt_index.assign(n, -1);
  out.class_id.assign(n, -1);
  out.targets.assign(n, geometry::RegressionTarget{});
  if (gts.empty()) return out;

  const std::int64_t sn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < sn; ++i) {
    const geometry::Box& a = anchor_set.boxes[i];
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = geometry::iou(a, gts[g].box);
      if (v > best) {  // strict: ties keep the lower gt index
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= kForegroundIou) {
      out.labels[i] = AnchorLabel::Foreground;
      out.gt_index[i] = best_gt;
      out.class_id[i] = gts[best_gt].class_id;
      out.targets[i] = geometry::encode(a, gts[best_gt].box);
    } else if (best >= kBackgroundIou) {
      out.labels[i] = AnchorLabel::Ignore;
    }
  }
  return out;
}

}  // namespace densefocus::anchors
