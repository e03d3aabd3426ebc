#pragma once

#include <optional>
#include <span>
#include <vector>

#include "densefocus/anchors.hpp"
#include "densefocus/loss.hpp"

namespace densefocus::sampler {

// OHEM minibatch construction: score by loss, optionally nms-deduplicate,
// keep the highest-loss examples, optionally enforcing a 1:3
// positive:negative ratio.
struct OhemConfig {
  int batch_size = 256;
  std::optional<double> nms_threshold;  // in (0,1] when present
  bool enforce_ratio_1to3 = false;

  void validate() const;
};

// Returns the selected example indices. `boxes` is required when
// nms_threshold is set (throws otherwise) and may be empty when it is not.
// Ties on equal loss are broken by lower index.
std::vector<int> ohem_select(std::span<const double> losses,
                             std::span<const geometry::Box> boxes,
                             std::span<const std::uint8_t> is_positive, const OhemConfig& cfg);

// batch_loss restricted to the selected anchors; normalization is unchanged
// (foreground count of the full assignment).
double masked_batch_loss(std::span<const double> logits,
                         const anchors::MatchAssignment& assignment,
                         std::span<const int> selected, int num_classes,
                         const loss::LossConfig& cfg);

}  // namespace densefocus::sampler
