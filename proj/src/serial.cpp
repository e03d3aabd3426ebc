#include "densefocus/serial.hpp"

#include <stdexcept>

namespace densefocus::serial {

double batch_loss(std::span<const double> logits, const anchors::MatchAssignment& assignment,
                  int num_classes, const loss::LossConfig& cfg) {
  cfg.validate();
  const std::size_t n = assignment.size();
  if (num_classes < 1 || logits.size() != n * static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument("serial::batch_loss: logits shape mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (assignment.labels[i] == anchors::AnchorLabel::Ignore) continue;
    const bool fg = assignment.labels[i] == anchors::AnchorLabel::Foreground;
    for (int k = 0; k < num_classes; ++k) {
      const loss::BinaryLabel y = (fg && assignment.class_id[i] == k)
                                      ? loss::BinaryLabel::Positive
                                      : loss::BinaryLabel::Negative;
      total += loss::loss_value(logits[i * num_classes + k], y, cfg);
    }
  }
  const std::size_t fg_count = assignment.foreground_count();
  return total / static_cast<double>(fg_count > 0 ? fg_count : 1);
}

anchors::MatchAssignment assign_targets(const anchors::AnchorSet& anchor_set,
                                        std::span<const anchors::GroundTruth> gts) {
  const std::size_t n = anchor_set.size();
  anchors::MatchAssignment out;
  out.labels.assign(n, anchors::AnchorLabel::Background);
  out.gt_index.assign(n, -1);
  out.class_id.assign(n, -1);
  out.targets.assign(n, geometry::RegressionTarget{});
  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = geometry::iou(anchor_set.boxes[i], gts[g].box);
      if (v > best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best >= anchors::kForegroundIou) {
      out.labels[i] = anchors::AnchorLabel::Foreground;
      out.gt_index[i] = best_gt;
      out.class_id[i] = gts[best_gt].class_id;
      out.targets[i] = geometry::encode(anchor_set.boxes[i], gts[best_gt].box);
    } else if (best >= anchors::kBackgroundIou) {
      out.labels[i] = anchors::AnchorLabel::Ignore;
    }
  }
  return out;
}

}  // namespace densefocus::serial
