#include "densefocus/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "densefocus/reduce.hpp"

namespace densefocus::sampler {

void OhemConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("OhemConfig: batch_size must be >= 1");
  if (nms_threshold && !(*nms_threshold > 0.0 && *nms_threshold <= 1.0)) {
    throw std::invalid_argument("OhemConfig: nms_threshold must lie in (0,1]");
  }
}

std::vector<int> ohem_select(std::span<const double> losses,
                             std::span<const geometry::Box> boxes,
                             std::span<const std::uint8_t> is_positive, const OhemConfig& cfg) {
  cfg.validate();
  const std::size_t n = losses.size();
  if (is_positive.size() != n) throw std::invalid_argument("ohem_select: label size mismatch");
  if (cfg.nms_threshold && boxes.size() != n) {
    throw std::invalid_argument("ohem_select: boxes required when nms_threshold is set");
  }
  for (double l : losses) {
    if (!std::isfinite(l)) throw std::invalid_argument("ohem_select: non-finite loss");
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return losses[a] > losses[b]; });

  // loss-descending candidate list after nms deduplication
  std::vector<int> candidates;
  candidates.reserve(n);
  if (cfg.nms_threshold) {
    // Selection only ever consumes the top batch_size candidates per class of
    // example, so suppression can stop once that many survive: later (softer)
    // candidates could never be picked anyway. Kept boxes are indexed by x1 so
    // a candidate is only tested against boxes whose x-extent can overlap it.
    std::vector<std::pair<double, int>> kept_by_x1;  // (x1, index), sorted
    double max_kept_width = 0.0;
    int pos_kept = 0, neg_kept = 0;
    for (int i : order) {
      const bool full = cfg.enforce_ratio_1to3
                            ? pos_kept >= cfg.batch_size && neg_kept >= cfg.batch_size
                            : static_cast<int>(candidates.size()) >= cfg.batch_size;
      if (full) break;
      const geometry::Box& b = boxes[i];
      bool suppressed = false;
      auto it = std::lower_bound(kept_by_x1.begin(), kept_by_x1.end(),
                                 std::make_pair(b.x1 - max_kept_width, -1));
      for (; it != kept_by_x1.end() && it->first <= b.x2; ++it) {
        if (geometry::iou(b, boxes[it->second]) > *cfg.nms_threshold) {
          suppressed = true;
          break;
        }
      }
      if (!suppressed) {
        candidates.push_back(i);
        kept_by_x1.insert(std::lower_bound(kept_by_x1.begin(), kept_by_x1.end(),
                                           std::make_pair(b.x1, i)),
                          {b.x1, i});
        max_kept_width = std::max(max_kept_width, b.x2 - b.x1);
        (is_positive[i] ? pos_kept : neg_kept) += 1;
      }
    }
  } else {
    candidates = order;
  }

  std::vector<int> selected;
  if (cfg.enforce_ratio_1to3) {
    std::vector<int> pos, neg;
    for (int i : candidates) (is_positive[i] ? pos : neg).push_back(i);
    if (pos.empty()) {
      // no positives: fall back to plain top batch_size negatives
      for (int i : neg) {
        if (static_cast<int>(selected.size()) >= cfg.batch_size) break;
        selected.push_back(i);
      }
    } else {
      for (int i : pos) {
        if (static_cast<int>(selected.size()) >= cfg.batch_size) break;
        selected.push_back(i);
      }
      const int num_pos = static_cast<int>(selected.size());
      const int neg_cap = std::min(3 * num_pos, cfg.batch_size - num_pos);
      int taken = 0;
      for (int i : neg) {
        if (taken >= neg_cap) break;
        selected.push_back(i);
        ++taken;
      }
    }
  } else {
    for (int i : candidates) {
      if (static_cast<int>(selected.size()) >= cfg.batch_size) break;
      selected.push_back(i);
    }
  }
  return selected;
}

double masked_batch_loss(std::span<const double> logits,
                         const anchors::MatchAssignment& assignment,
                         std::span<const int> selected, int num_classes,
                         const loss::LossConfig& cfg) {
  std::vector<double> per_anchor;
  loss::per_anchor_loss(logits, assignment, num_classes, cfg, per_anchor);
  std::vector<double> terms;
  terms.reserve(selected.size());
  for (int i : selected) {
    if (i < 0 || static_cast<std::size_t>(i) >= per_anchor.size()) {
      throw std::invalid_argument("masked_batch_loss: selected index out of range");
    }
    terms.push_back(per_anchor[i]);
  }
  const double total = pairwise_sum(terms);
  const std::size_t fg = assignment.foreground_count();
  return total / static_cast<double>(fg > 0 ? fg : 1);
}

}  // namespace densefocus::sampler
