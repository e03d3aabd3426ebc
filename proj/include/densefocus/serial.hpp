#pragma once

#include <span>

#include "densefocus/anchors.hpp"
#include "densefocus/loss.hpp"

// Single-threaded reference implementations of the parallel kernels, kept
// for tests and the benchmark target.
namespace densefocus::serial {

double batch_loss(std::span<const double> logits, const anchors::MatchAssignment& assignment,
                  int num_classes, const loss::LossConfig& cfg);

anchors::MatchAssignment assign_targets(const anchors::AnchorSet& anchor_set,
                                        std::span<const anchors::GroundTruth> gts);

}  // namespace densefocus::serial
