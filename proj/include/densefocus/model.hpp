#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "densefocus/anchors.hpp"
#include "densefocus/loss.hpp"

namespace densefocus::model {

enum class Arch { Linear, OneHidden };

// Tiny dense head over per-anchor features: K one-vs-all classification
// logits plus a class-agnostic 4-vector box regression. Classification and
// regression use separate parameters throughout.
struct DenseHead {
  Arch arch = Arch::Linear;
  int feature_dim = 0;
  int num_classes = 1;
  int hidden_width = 0;  // OneHidden only

  // hidden layer (OneHidden only), row-major hidden_width x feature_dim
  std::vector<double> cls_w1, cls_b1;
  std::vector<double> reg_w1, reg_b1;
  // output layer, row-major out x in (in = feature_dim for Linear, hidden_width otherwise)
  std::vector<double> cls_w2, cls_b2;
  std::vector<double> reg_w2, reg_b2;

  int output_input_dim() const { return arch == Arch::Linear ? feature_dim : hidden_width; }
};

struct ForwardResult {
  std::vector<double> logits;  // N x K
  std::vector<double> reg;     // N x 4
};

// All weights N(0, 0.01^2); biases zero except the final classification
// bias, set to -log((1-pi)/pi) so every anchor starts out scored ~pi.
DenseHead init_head(int feature_dim, int num_classes, Arch arch, int hidden_width, double pi,
                    std::uint64_t rng_seed);

ForwardResult forward(const DenseHead& head, std::span<const double> features,
                      std::size_t num_anchors);

struct SamplerConfig {
  enum class Kind { AllAnchors, Ohem, Ohem1to3 };
  Kind kind = Kind::AllAnchors;
  int batch_size = 256;
  std::optional<double> nms_threshold;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int iterations = 500;
  std::vector<double> lr_drop_points = {2.0 / 3.0, 8.0 / 9.0};  // fractions of `iterations`
  std::uint64_t seed = 1;
  double pi = 0.01;
  loss::LossConfig loss;
  SamplerConfig sampler;
  Arch arch = Arch::Linear;
  int hidden_width = 8;

  void validate() const;
};

// One training problem: per-anchor features plus their assignment. Anchor
// boxes are only needed for OHEM with an nms threshold; regression targets
// are used when use_regression is set.
struct TrainingSet {
  int feature_dim = 0;
  int num_classes = 1;
  std::vector<double> features;  // N x feature_dim
  anchors::MatchAssignment assignment;
  std::vector<geometry::Box> anchor_boxes;
  bool use_regression = false;

  std::size_t size() const { return assignment.size(); }
};

// Thrown when a step produces a non-finite loss.
struct DivergenceError : std::runtime_error {
  int iteration;
  explicit DivergenceError(int iter)
      : std::runtime_error("training diverged at iteration " + std::to_string(iter)),
        iteration(iter) {}
};

// Momentum buffers, one per parameter vector of the head.
struct SgdState {
  std::vector<double> cls_w1, cls_b1, reg_w1, reg_b1;
  std::vector<double> cls_w2, cls_b2, reg_w2, reg_b2;
  static SgdState zeros_like(const DenseHead& head);
};

// Forward, loss, manual backprop, one momentum-SGD update
// (v <- mu v + g + lambda w; w <- w - lr v; decay on weights only).
// Returns the pre-update total loss. Throws DivergenceError on NaN/inf loss.
double backward_step(DenseHead& head, const TrainingSet& data, const TrainConfig& cfg, double lr,
                     SgdState& state, int iteration);

struct HistoryRow {
  int iteration;
  double loss;
  double lr;
};

struct TrainResult {
  DenseHead head;
  std::vector<HistoryRow> history;
  bool diverged = false;
  int divergence_iteration = -1;
};

inline constexpr double kDivergenceLossCap = 1e6;

TrainResult train(const TrainConfig& cfg, const TrainingSet& data);

}  // namespace densefocus::model
