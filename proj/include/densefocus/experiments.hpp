#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "densefocus/anchors.hpp"
#include "densefocus/model.hpp"

namespace densefocus::experiments {

// Synthetic substrate for the class-imbalance experiments: either a flat
// binary classification task (two Gaussian clusters, negatives outnumbering
// positives by imbalance_ratio, a fraction of negatives drawn near the
// decision boundary) or a toy detection task (bright rectangles on noise,
// handcrafted per-anchor intensity features).
struct SyntheticTaskConfig {
  enum class Mode { Classification, ToyDetection };
  Mode mode = Mode::Classification;
  double imbalance_ratio = 1000.0;
  int num_positives = 200;
  double feature_noise = 1.0;
  double overlap_hardness = 0.05;  // fraction of hard negatives / distractor rectangles
  // detection mode
  int image_size = 128;
  int num_images = 16;
  int min_objects = 1;
  int max_objects = 3;
  std::uint64_t seed = 1;

  void validate() const;
};

inline constexpr int kClassificationFeatureDim = 3;
inline constexpr int kDetectionFeatureDim = 6;

model::TrainingSet gen_classification(const SyntheticTaskConfig& cfg);

struct ToyDetectionTask {
  model::TrainingSet train;          // all images concatenated
  anchors::AnchorSet anchor_layout;  // per-image anchor grid
  std::vector<std::vector<anchors::GroundTruth>> gts;  // per image
  int num_images = 0;
  int image_size = 0;
};

ToyDetectionTask gen_toy_detection(const SyntheticTaskConfig& cfg);

// ---- metrics ----

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double ap = 0.0;
};

// Area under the precision-recall curve (all-points). Throws if no positive
// labels are present. Ties on equal score keep input order.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

// anchor-level scores at threshold 0.5 plus AP over the ranking
Metrics evaluate_classification(const model::DenseHead& head, const model::TrainingSet& data);

// decode + score-threshold 0.05 + per-image top-1000 + class-wise NMS at 0.5,
// greedy matching to ground truth at IoU >= 0.5
Metrics evaluate_detection(const model::DenseHead& head, const ToyDetectionTask& task);

std::vector<geometry::Detection> run_inference(const model::DenseHead& head,
                                               const ToyDetectionTask& task, int image_index);

// ---- loss CDF analysis ----

struct CdfCurve {
  double gamma = 0.0;
  bool positive_polarity = false;
  std::vector<double> normalized_losses;  // sorted ascending, sums to 1
  std::vector<double> cumulative;
};

// For each polarity and gamma: focal loss of the frozen model's logits,
// normalized to sum 1, sorted ascending. Throws if either polarity is empty.
std::vector<CdfCurve> loss_cdf(const model::DenseHead& head, const model::TrainingSet& data,
                               std::span<const double> gamma_list);

// fraction of the total loss carried by the hardest `fraction` of samples
double top_fraction_share(const CdfCurve& curve, double fraction);

// ---- sweeps ----

struct SweepSetting {
  std::string name;
  loss::LossConfig loss;
  model::SamplerConfig sampler;
};

struct SweepCell {
  std::string setting;
  int trial = 0;
  std::uint64_t seed = 0;
  Metrics metrics;
  bool diverged = false;
  int divergence_iteration = -1;
};

struct SettingSummary {
  std::string setting;
  Metrics mean;
  int diverged_trials = 0;
};

struct ExperimentReport {
  SyntheticTaskConfig task;
  model::TrainConfig base_train;
  int trials = 0;
  std::vector<SweepCell> cells;
  std::vector<SettingSummary> summaries;
};

struct RunOutcome {
  model::TrainResult result;
  Metrics metrics;
};

// Generate the task (seed from `task.seed`), train, evaluate on a freshly
// generated held-out set. A diverged run reports zero metrics.
RunOutcome run_experiment(const SyntheticTaskConfig& task, const model::TrainConfig& tcfg);

// One training run per (setting, trial); the dataset seed depends only on the
// trial, so settings within a trial see identical data. Cells may run in
// parallel; the report ordering is fixed.
ExperimentReport sweep(const SyntheticTaskConfig& task, const model::TrainConfig& base,
                       std::span<const SweepSetting> settings, int trials);

}  // namespace densefocus::experiments
