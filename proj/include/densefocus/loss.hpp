#pragma once

#include <optional>
#include <span>

#include "densefocus/anchors.hpp"

namespace densefocus::loss {

// Ground-truth class for the binary (one-vs-all) decomposition.
enum class BinaryLabel : int { Positive = +1, Negative = -1 };

inline double sign_of(BinaryLabel y) { return y == BinaryLabel::Positive ? 1.0 : -1.0; }

enum class LossKind { CE, AlphaCE, FL, FLStar, Hinge };

// Which loss to use and its parameters. alpha empty means unbalanced
// (no reweighting of either class).
struct LossConfig {
  LossKind kind = LossKind::FL;
  double gamma = 2.0;
  std::optional<double> alpha;  // in [0,1] when present
  double beta = 0.0;            // FLStar only

  void validate() const;  // throws std::invalid_argument

  static LossConfig ce() { return {LossKind::CE, 0.0, std::nullopt, 0.0}; }
  static LossConfig alpha_ce(double alpha) { return {LossKind::AlphaCE, 0.0, alpha, 0.0}; }
  static LossConfig focal(double gamma, std::optional<double> alpha = std::nullopt) {
    return {LossKind::FL, gamma, alpha, 0.0};
  }
  static LossConfig focal_star(double gamma, double beta) {
    return {LossKind::FLStar, gamma, std::nullopt, beta};
  }
  static LossConfig hinge() { return {LossKind::Hinge, 0.0, std::nullopt, 0.0}; }
};

// log(1 + e^z) without overflow
double softplus(double z);

// 1/(1+e^-x); throws on NaN input
double stable_sigmoid(double x);

// probability of the ground-truth class: p if y=+1, 1-p otherwise
double p_t(double p, BinaryLabel y);

// Pointwise loss on a single logit. Evaluated logit-fused: log(p_t) is
// computed as -softplus(-x_t), never as log(sigmoid(x)).
double loss_value(double x, BinaryLabel y, const LossConfig& cfg);

// d loss / d x (analytic)
double loss_grad(double x, BinaryLabel y, const LossConfig& cfg);

// Dense-detection classification loss: sum of loss_value over every
// (anchor, class) pair except ignored anchors, divided by
// max(1, #foreground anchors). For a foreground anchor the matched class has
// y=+1 and every other class y=-1; background anchors are all-negative.
// The summation order is a fixed pairwise reduction over per-anchor partial
// sums, so the result is bit-identical regardless of thread count.
double batch_loss(std::span<const double> logits, const anchors::MatchAssignment& assignment,
                  int num_classes, const LossConfig& cfg);

// Per-anchor classification loss (sum over the K one-vs-all terms), written
// into `out` (resized to the anchor count). Ignored anchors get 0.
void per_anchor_loss(std::span<const double> logits, const anchors::MatchAssignment& assignment,
                     int num_classes, const LossConfig& cfg, std::vector<double>& out);

}  // namespace densefocus::loss
