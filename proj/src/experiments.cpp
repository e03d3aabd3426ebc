#include "densefocus/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "densefocus/reduce.hpp"
#include "densefocus/rng.hpp"

namespace densefocus::experiments {

namespace {

constexpr std::uint64_t kEvalSalt = 0x4556414c;  // held-out evaluation split
constexpr double kScoreThreshold = 0.05;
constexpr int kTopK = 1000;
constexpr double kNmsThreshold = 0.5;
constexpr double kMatchIou = 0.5;

// classification cluster geometry (fixed; feature_noise scales the spread).
// Easy negatives sit at the origin with a tight spread: they carry no
// directional information about the positives, so a background-dominated
// gradient cannot accidentally solve the task, yet they never outrank a
// positive. Hard negatives sit just below the positives in f0 and are only
// cleanly separable through their own cue dimension (f2), which has to be
// learned from their gradient alone — downweight them and the boundary stays
// blurry. The f1 dimension is the opposite trap: the easy bulk sits at -1
// there, so pushing w1 up is rewarded with a lower background loss, but hard
// negatives sit at +1, so that same weight ranks them above positives. A
// loss that keeps fighting the already-classified bulk walks into the trap;
// one that downweights hard examples never sharpens the cue.
constexpr double kPositiveMean = 2.0;
constexpr double kPositiveTrapSpread = 0.25;
constexpr double kPositiveCueSpread = 0.5;
constexpr double kEasyNegativeMean = 0.0;
constexpr double kEasyNegativeSpread = 0.25;
constexpr double kEasyNegativeTrapMean = -1.0;
constexpr double kEasyNegativeTrapSpread = 0.5;
constexpr double kHardNegativeMean = 2.0;
constexpr double kHardNegativeSpread = 0.5;
constexpr double kHardNegativeTrapMean = 1.0;
constexpr double kHardNegativeTrapSpread = 0.25;
constexpr double kHardNegativeCueMean = 1.5;
constexpr double kHardNegativeCueSpread = 0.5;
// A slice of the hard negatives is drawn straight from the positive
// distribution: irreducible examples whose loss never comes down. They cap
// everyone's AP equally, but a sampler that builds batches from the
// highest-loss examples ends up spending most of its budget on them.
constexpr double kOverlapFraction = 0.2;
constexpr double kSampleBoxSide = 2.0;  // feature-space boxes for loss-nms sampling

anchors::AnchorConfig detection_anchor_config() {
  anchors::AnchorConfig cfg;
  cfg.levels = {3, 4};
  return cfg;
}

}  // namespace

void SyntheticTaskConfig::validate() const {
  if (imbalance_ratio < 1.0) throw std::invalid_argument("task: imbalance_ratio must be >= 1");
  if (num_positives < 1) throw std::invalid_argument("task: num_positives must be >= 1");
  if (!(feature_noise > 0.0)) throw std::invalid_argument("task: feature_noise must be > 0");
  if (overlap_hardness < 0.0 || overlap_hardness > 1.0) {
    throw std::invalid_argument("task: overlap_hardness must lie in [0,1]");
  }
  if (mode == Mode::ToyDetection) {
    if (image_size < 16) throw std::invalid_argument("task: image_size must be >= 16");
    if (num_images < 1) throw std::invalid_argument("task: num_images must be >= 1");
    if (min_objects < 0 || max_objects < min_objects) {
      throw std::invalid_argument("task: bad object-count range");
    }
  }
}

model::TrainingSet gen_classification(const SyntheticTaskConfig& cfg) {
  cfg.validate();
  const int n_pos = cfg.num_positives;
  const long n_neg = std::lround(cfg.num_positives * cfg.imbalance_ratio);
  const long n_hard = std::lround(cfg.overlap_hardness * static_cast<double>(n_neg));
  const long total = n_pos + n_neg;

  Rng rng(cfg.seed);
  model::TrainingSet set;
  set.feature_dim = kClassificationFeatureDim;
  set.num_classes = 1;
  set.use_regression = false;
  set.features.resize(static_cast<std::size_t>(total) * kClassificationFeatureDim);
  set.assignment.labels.assign(total, anchors::AnchorLabel::Background);
  set.assignment.gt_index.assign(total, -1);
  set.assignment.class_id.assign(total, -1);
  set.assignment.targets.assign(total, geometry::RegressionTarget{});

  set.anchor_boxes.resize(total);

  const double sigma = cfg.feature_noise;
  for (long i = 0; i < total; ++i) {
    double f0 = 0.0;
    double f1 = 0.0;
    double f2 = 0.0;
    if (i < n_pos) {
      f0 = rng.normal(kPositiveMean, sigma);
      f1 = rng.normal(0.0, kPositiveTrapSpread);
      f2 = rng.normal(0.0, kPositiveCueSpread);
      set.assignment.labels[i] = anchors::AnchorLabel::Foreground;
      set.assignment.class_id[i] = 0;
    } else if (i < n_pos + n_hard) {
      if (i < n_pos + std::lround(kOverlapFraction * static_cast<double>(n_hard))) {
        f0 = rng.normal(kPositiveMean, sigma);
        f1 = rng.normal(0.0, kPositiveTrapSpread);
        f2 = rng.normal(0.0, kPositiveCueSpread);
      } else {
        f0 = rng.normal(kHardNegativeMean, kHardNegativeSpread * sigma);
        f1 = rng.normal(kHardNegativeTrapMean, kHardNegativeTrapSpread);
        f2 = rng.normal(kHardNegativeCueMean, kHardNegativeCueSpread);
      }
    } else {
      f0 = rng.normal(kEasyNegativeMean, kEasyNegativeSpread * sigma);
      f1 = rng.normal(kEasyNegativeTrapMean, kEasyNegativeTrapSpread);
      f2 = rng.normal(0.0, kPositiveCueSpread);
    }
    double* f = set.features.data() + static_cast<std::size_t>(i) * kClassificationFeatureDim;
    f[0] = f0;
    f[1] = f1;
    f[2] = f2;
    // feature-space box so loss-nms sampling can deduplicate clustered examples
    set.anchor_boxes[i] =
        geometry::Box::from_center(f[0], f[1], kSampleBoxSide, kSampleBoxSide);
  }
  return set;
}

namespace {

// per-image integral images for O(1) box intensity statistics
struct IntensityStats {
  int size = 0;
  std::vector<double> sum;    // (size+1)^2
  std::vector<double> sumsq;

  explicit IntensityStats(const std::vector<double>& pixels, int s) : size(s) {
    sum.assign(static_cast<std::size_t>(s + 1) * (s + 1), 0.0);
    sumsq.assign(sum.size(), 0.0);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double v = pixels[static_cast<std::size_t>(y) * s + x];
        const std::size_t i = static_cast<std::size_t>(y + 1) * (s + 1) + (x + 1);
        sum[i] = v + sum[i - 1] + sum[i - (s + 1)] - sum[i - (s + 1) - 1];
        sumsq[i] = v * v + sumsq[i - 1] + sumsq[i - (s + 1)] - sumsq[i - (s + 1) - 1];
      }
    }
  }

  // mean and stddev of pixels in the box clipped to the image
  void box_stats(const geometry::Box& b, double& mean, double& stddev) const {
    const int x1 = std::clamp(static_cast<int>(std::floor(b.x1)), 0, size);
    const int y1 = std::clamp(static_cast<int>(std::floor(b.y1)), 0, size);
    const int x2 = std::clamp(static_cast<int>(std::ceil(b.x2)), 0, size);
    const int y2 = std::clamp(static_cast<int>(std::ceil(b.y2)), 0, size);
    const long area = static_cast<long>(x2 - x1) * (y2 - y1);
    if (area <= 0) {
      mean = 0.0;
      stddev = 0.0;
      return;
    }
    auto rect = [&](const std::vector<double>& ii) {
      return ii[static_cast<std::size_t>(y2) * (size + 1) + x2] -
             ii[static_cast<std::size_t>(y1) * (size + 1) + x2] -
             ii[static_cast<std::size_t>(y2) * (size + 1) + x1] +
             ii[static_cast<std::size_t>(y1) * (size + 1) + x1];
    };
    mean = rect(sum) / static_cast<double>(area);
    const double var = std::max(0.0, rect(sumsq) / static_cast<double>(area) - mean * mean);
    stddev = std::sqrt(var);
  }
};

void anchor_features(const IntensityStats& stats, const geometry::Box& anchor, double* out) {
  double mean_in = 0.0, std_in = 0.0, mean_ctx = 0.0, std_ctx = 0.0;
  stats.box_stats(anchor, mean_in, std_in);
  const geometry::Box ctx =
      geometry::Box::from_center(anchor.cx(), anchor.cy(), 2.0 * anchor.width(),
                                 2.0 * anchor.height());
  stats.box_stats(ctx, mean_ctx, std_ctx);
  // fixed, versioned feature definition: centered and scaled intensity stats
  out[0] = (mean_in - 0.3) * 5.0;
  out[1] = (std_in - 0.1) * 5.0;
  out[2] = (mean_ctx - 0.3) * 5.0;
  out[3] = (std_ctx - 0.1) * 5.0;
  out[4] = (mean_in - mean_ctx) * 5.0;
  out[5] = (std_in - std_ctx) * 5.0;
}

}  // namespace

ToyDetectionTask gen_toy_detection(const SyntheticTaskConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  ToyDetectionTask task;
  task.num_images = cfg.num_images;
  task.image_size = cfg.image_size;
  task.anchor_layout = anchors::generate_anchors(detection_anchor_config(), cfg.image_size,
                                                 cfg.image_size);
  const std::size_t per_image = task.anchor_layout.size();
  const int S = cfg.image_size;
  const double pixel_noise = 0.08 * cfg.feature_noise;

  task.train.feature_dim = kDetectionFeatureDim;
  task.train.num_classes = 1;
  task.train.use_regression = true;
  task.train.features.resize(per_image * cfg.num_images * kDetectionFeatureDim);
  task.train.anchor_boxes.resize(per_image * cfg.num_images);
  task.gts.resize(cfg.num_images);

  std::vector<double> pixels(static_cast<std::size_t>(S) * S);
  for (int m = 0; m < cfg.num_images; ++m) {
    for (double& p : pixels) p = 0.3 + rng.normal(0.0, pixel_noise);

    const int n_rects = rng.uniform_int(cfg.min_objects, cfg.max_objects);
    for (int r = 0; r < n_rects; ++r) {
      // side range chosen so objects land inside the level-3/4 anchor scales
      const double w = rng.uniform(0.25, 0.6) * S;
      const double h = rng.uniform(0.25, 0.6) * S;
      const double x1 = rng.uniform(0.0, S - w);
      const double y1 = rng.uniform(0.0, S - h);
      const bool distractor = rng.uniform01() < cfg.overlap_hardness;
      const double intensity = distractor ? 0.55 : 0.85;
      for (int y = std::max(0, static_cast<int>(y1)); y < std::min(S, static_cast<int>(y1 + h));
           ++y) {
        for (int x = std::max(0, static_cast<int>(x1)); x < std::min(S, static_cast<int>(x1 + w));
             ++x) {
          pixels[static_cast<std::size_t>(y) * S + x] = intensity + rng.normal(0.0, pixel_noise);
        }
      }
      if (!distractor) {
        task.gts[m].push_back({geometry::Box{x1, y1, x1 + w, y1 + h}, 0});
      }
    }

    const IntensityStats stats(pixels, S);
    for (std::size_t i = 0; i < per_image; ++i) {
      const geometry::Box& a = task.anchor_layout.boxes[i];
      anchor_features(stats, a,
                      task.train.features.data() + (m * per_image + i) * kDetectionFeatureDim);
      // shift per image so OHEM nms never suppresses across images
      geometry::Box shifted = a;
      shifted.x1 += m * 2.0 * S;
      shifted.x2 += m * 2.0 * S;
      task.train.anchor_boxes[m * per_image + i] = shifted;
    }

    const anchors::MatchAssignment ma = anchors::assign_targets(task.anchor_layout, task.gts[m]);
    auto& asg = task.train.assignment;
    asg.labels.insert(asg.labels.end(), ma.labels.begin(), ma.labels.end());
    asg.class_id.insert(asg.class_id.end(), ma.class_id.begin(), ma.class_id.end());
    asg.targets.insert(asg.targets.end(), ma.targets.begin(), ma.targets.end());
    // gt indices are per image; offset to keep them unique in the pooled set
    const int base = static_cast<int>(
        std::accumulate(task.gts.begin(), task.gts.begin() + m, std::size_t{0},
                        [](std::size_t acc, const auto& v) { return acc + v.size(); }));
    for (int gi : ma.gt_index) asg.gt_index.push_back(gi < 0 ? -1 : gi + base);
  }
  return task;
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("average_precision: size mismatch");
  std::size_t total_pos = 0;
  for (bool l : labels) total_pos += l ? 1 : 0;
  if (total_pos == 0) throw std::invalid_argument("average_precision: no positive labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]]) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(total_pos);
}

Metrics evaluate_classification(const model::DenseHead& head, const model::TrainingSet& data) {
  const std::size_t n = data.size();
  const model::ForwardResult fwd = model::forward(head, data.features, n);
  std::vector<double> scores(n);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = loss::stable_sigmoid(fwd.logits[i * head.num_classes]);
    labels[i] = data.assignment.labels[i] == anchors::AnchorLabel::Foreground;
  }

  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool predicted = scores[i] >= 0.5;
    if (predicted && labels[i]) ++tp;
    if (predicted && !labels[i]) ++fp;
    if (!predicted && labels[i]) ++fn;
  }
  Metrics m;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  m.ap = average_precision(scores, labels);
  return m;
}

std::vector<geometry::Detection> run_inference(const model::DenseHead& head,
                                               const ToyDetectionTask& task, int image_index) {
  const std::size_t per_image = task.anchor_layout.size();
  const std::span<const double> features(
      task.train.features.data() + image_index * per_image * kDetectionFeatureDim,
      per_image * kDetectionFeatureDim);
  const model::ForwardResult fwd = model::forward(head, features, per_image);

  std::vector<geometry::Detection> cands;
  for (std::size_t i = 0; i < per_image; ++i) {
    for (int k = 0; k < head.num_classes; ++k) {
      const double score = loss::stable_sigmoid(fwd.logits[i * head.num_classes + k]);
      if (score < kScoreThreshold) continue;
      geometry::RegressionTarget t{fwd.reg[i * 4 + 0], fwd.reg[i * 4 + 1], fwd.reg[i * 4 + 2],
                                   fwd.reg[i * 4 + 3]};
      cands.push_back({geometry::decode(task.anchor_layout.boxes[i], t), score, k});
    }
  }
  if (cands.size() > kTopK) {
    std::stable_sort(cands.begin(), cands.end(),
                     [](const auto& a, const auto& b) { return a.score > b.score; });
    cands.resize(kTopK);
  }
  return geometry::nms(cands, kNmsThreshold);
}

Metrics evaluate_detection(const model::DenseHead& head, const ToyDetectionTask& task) {
  std::size_t total_gt = 0;
  for (const auto& g : task.gts) total_gt += g.size();
  if (total_gt == 0) throw std::invalid_argument("evaluate_detection: task has no ground truth");

  struct PooledDet {
    double score;
    int image;
    geometry::Box box;
  };
  std::vector<PooledDet> dets;
  for (int m = 0; m < task.num_images; ++m) {
    for (const auto& d : run_inference(head, task, m)) {
      dets.push_back({d.score, m, d.box});
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> gt_matched(task.num_images);
  for (int m = 0; m < task.num_images; ++m) gt_matched[m].assign(task.gts[m].size(), false);

  double ap = 0.0;
  std::size_t tp = 0;
  std::size_t tp_at_half = 0, det_at_half = 0;
  for (std::size_t rank = 0; rank < dets.size(); ++rank) {
    const PooledDet& d = dets[rank];
    double best = kMatchIou;
    int best_gt = -1;
    for (std::size_t g = 0; g < task.gts[d.image].size(); ++g) {
      if (gt_matched[d.image][g]) continue;
      const double v = geometry::iou(d.box, task.gts[d.image][g].box);
      if (v >= best) {
        best = v;
        best_gt = static_cast<int>(g);
      }
    }
    const bool is_tp = best_gt >= 0;
    if (is_tp) {
      gt_matched[d.image][best_gt] = true;
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
    if (d.score >= 0.5) {
      ++det_at_half;
      if (is_tp) ++tp_at_half;
    }
  }

  Metrics m;
  m.ap = ap / static_cast<double>(total_gt);
  m.precision = det_at_half > 0 ? static_cast<double>(tp_at_half) / det_at_half : 0.0;
  m.recall = static_cast<double>(tp_at_half) / static_cast<double>(total_gt);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  return m;
}

std::vector<CdfCurve> loss_cdf(const model::DenseHead& head, const model::TrainingSet& data,
                               std::span<const double> gamma_list) {
  const std::size_t n = data.size();
  const int K = head.num_classes;
  const model::ForwardResult fwd = model::forward(head, data.features, n);

  std::vector<double> pos_logits, neg_logits;  // signed margins x_t
  for (std::size_t i = 0; i < n; ++i) {
    if (data.assignment.labels[i] == anchors::AnchorLabel::Ignore) continue;
    const bool fg = data.assignment.labels[i] == anchors::AnchorLabel::Foreground;
    for (int k = 0; k < K; ++k) {
      const double x = fwd.logits[i * K + k];
      if (fg && data.assignment.class_id[i] == k) {
        pos_logits.push_back(x);
      } else {
        neg_logits.push_back(-x);
      }
    }
  }
  if (pos_logits.empty() || neg_logits.empty()) {
    throw std::invalid_argument("loss_cdf: need at least one sample of each polarity");
  }

  std::vector<CdfCurve> curves;
  for (double gamma : gamma_list) {
    const loss::LossConfig cfg = loss::LossConfig::focal(gamma);
    for (int polarity = 1; polarity >= 0; --polarity) {
      const std::vector<double>& margins = polarity ? pos_logits : neg_logits;
      CdfCurve c;
      c.gamma = gamma;
      c.positive_polarity = polarity != 0;
      c.normalized_losses.resize(margins.size());
      const std::int64_t sz = static_cast<std::int64_t>(margins.size());
#pragma omp parallel for schedule(static)
      for (std::int64_t j = 0; j < sz; ++j) {
        c.normalized_losses[j] = loss::loss_value(margins[j], loss::BinaryLabel::Positive, cfg);
      }
      const double total = pairwise_sum(c.normalized_losses);
      if (total > 0.0) {
        for (double& v : c.normalized_losses) v /= total;
      }
      std::sort(c.normalized_losses.begin(), c.normalized_losses.end());
      c.cumulative.resize(c.normalized_losses.size());
      double acc = 0.0;
      for (std::size_t j = 0; j < c.normalized_losses.size(); ++j) {
        acc += c.normalized_losses[j];
        c.cumulative[j] = acc;
      }
      curves.push_back(std::move(c));
    }
  }
  return curves;
}

double top_fraction_share(const CdfCurve& curve, double fraction) {
  const std::size_t n = curve.normalized_losses.size();
  if (n == 0) throw std::invalid_argument("top_fraction_share: empty curve");
  const std::size_t k =
      std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(n)));
  double share = 0.0;
  for (std::size_t j = n - std::min(k, n); j < n; ++j) share += curve.normalized_losses[j];
  return share;
}

RunOutcome run_experiment(const SyntheticTaskConfig& task, const model::TrainConfig& tcfg) {
  task.validate();
  RunOutcome out;
  SyntheticTaskConfig eval_cfg = task;
  eval_cfg.seed = mix_seed(task.seed, kEvalSalt);

  if (task.mode == SyntheticTaskConfig::Mode::Classification) {
    const model::TrainingSet train_data = gen_classification(task);
    out.result = model::train(tcfg, train_data);
    if (!out.result.diverged) {
      const model::TrainingSet eval_data = gen_classification(eval_cfg);
      out.metrics = evaluate_classification(out.result.head, eval_data);
    }
  } else {
    const ToyDetectionTask train_task = gen_toy_detection(task);
    out.result = model::train(tcfg, train_task.train);
    if (!out.result.diverged) {
      const ToyDetectionTask eval_task = gen_toy_detection(eval_cfg);
      out.metrics = evaluate_detection(out.result.head, eval_task);
    }
  }
  return out;
}

ExperimentReport sweep(const SyntheticTaskConfig& task, const model::TrainConfig& base,
                       std::span<const SweepSetting> settings, int trials) {
  task.validate();
  if (trials < 1) throw std::invalid_argument("sweep: trials must be >= 1");
  if (settings.empty()) throw std::invalid_argument("sweep: no settings");

  ExperimentReport report;
  report.task = task;
  report.base_train = base;
  report.trials = trials;
  report.cells.resize(settings.size() * static_cast<std::size_t>(trials));

  const std::int64_t n_cells = static_cast<std::int64_t>(report.cells.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t ci = 0; ci < n_cells; ++ci) {
    const std::size_t s = static_cast<std::size_t>(ci) / trials;
    const int t = static_cast<int>(ci % trials);

    SyntheticTaskConfig cell_task = task;
    cell_task.seed = mix_seed(task.seed, static_cast<std::uint64_t>(t) + 1);  // shared per trial

    model::TrainConfig tc = base;
    tc.loss = settings[s].loss;
    tc.sampler = settings[s].sampler;
    tc.seed = mix_seed(base.seed, (s + 1) * 7919 + static_cast<std::uint64_t>(t));

    SweepCell cell;
    cell.setting = settings[s].name;
    cell.trial = t;
    cell.seed = tc.seed;
    const RunOutcome outcome = run_experiment(cell_task, tc);
    cell.diverged = outcome.result.diverged;
    cell.divergence_iteration = outcome.result.divergence_iteration;
    cell.metrics = outcome.metrics;
    report.cells[ci] = std::move(cell);
  }

  for (std::size_t s = 0; s < settings.size(); ++s) {
    SettingSummary sum;
    sum.setting = settings[s].name;
    for (int t = 0; t < trials; ++t) {
      const SweepCell& c = report.cells[s * trials + t];
      sum.mean.precision += c.metrics.precision;
      sum.mean.recall += c.metrics.recall;
      sum.mean.f1 += c.metrics.f1;
      sum.mean.ap += c.metrics.ap;
      if (c.diverged) ++sum.diverged_trials;
    }
    sum.mean.precision /= trials;
    sum.mean.recall /= trials;
    sum.mean.f1 /= trials;
    sum.mean.ap /= trials;
    report.summaries.push_back(std::move(sum));
  }
  return report;
}

}  // namespace densefocus::experiments
