#include "densefocus/model.hpp"

#include <cmath>
#include <stdexcept>

#include "densefocus/reduce.hpp"
#include "densefocus/rng.hpp"
#include "densefocus/sampler.hpp"

namespace densefocus::model {

namespace {

constexpr double kWeightSigma = 0.01;
constexpr int kRegOutputs = 4;

void fill_normal(std::vector<double>& v, std::size_t n, Rng& rng) {
  v.resize(n);
  for (double& x : v) x = rng.normal(0.0, kWeightSigma);
}

// out[n][o] = W[o][i] * in[n][i] + b[o]
void affine(std::span<const double> in, std::size_t n, int in_dim, int out_dim,
            std::span<const double> w, std::span<const double> b, std::vector<double>& out) {
  out.assign(n * out_dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* f = in.data() + i * in_dim;
    double* o = out.data() + i * out_dim;
    for (int k = 0; k < out_dim; ++k) {
      double s = b[k];
      const double* wk = w.data() + static_cast<std::size_t>(k) * in_dim;
      for (int d = 0; d < in_dim; ++d) s += wk[d] * f[d];
      o[k] = s;
    }
  }
}

struct ForwardCache {
  std::vector<double> cls_hidden, reg_hidden;  // post-ReLU, OneHidden only
  ForwardResult out;
};

ForwardCache forward_cached(const DenseHead& head, std::span<const double> features,
                            std::size_t n) {
  if (features.size() != n * static_cast<std::size_t>(head.feature_dim)) {
    throw std::invalid_argument("forward: feature dimension mismatch");
  }
  ForwardCache c;
  if (head.arch == Arch::Linear) {
    affine(features, n, head.feature_dim, head.num_classes, head.cls_w2, head.cls_b2,
           c.out.logits);
    affine(features, n, head.feature_dim, kRegOutputs, head.reg_w2, head.reg_b2, c.out.reg);
  } else {
    affine(features, n, head.feature_dim, head.hidden_width, head.cls_w1, head.cls_b1,
           c.cls_hidden);
    for (double& h : c.cls_hidden) h = std::max(0.0, h);
    affine(c.cls_hidden, n, head.hidden_width, head.num_classes, head.cls_w2, head.cls_b2,
           c.out.logits);

    affine(features, n, head.feature_dim, head.hidden_width, head.reg_w1, head.reg_b1,
           c.reg_hidden);
    for (double& h : c.reg_hidden) h = std::max(0.0, h);
    affine(c.reg_hidden, n, head.hidden_width, kRegOutputs, head.reg_w2, head.reg_b2, c.out.reg);
  }
  return c;
}

// accumulate input-layer gradients for one affine map
void backprop_affine(std::span<const double> in, std::size_t n, int in_dim, int out_dim,
                     std::span<const double> dout, std::vector<double>& gw, std::vector<double>& gb,
                     std::vector<double>* din, std::span<const double> w) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* f = in.data() + i * in_dim;
    const double* g = dout.data() + i * out_dim;
    for (int k = 0; k < out_dim; ++k) {
      const double gk = g[k];
      if (gk == 0.0) continue;
      double* gwk = gw.data() + static_cast<std::size_t>(k) * in_dim;
      for (int d = 0; d < in_dim; ++d) gwk[d] += gk * f[d];
      gb[k] += gk;
      if (din) {
        const double* wk = w.data() + static_cast<std::size_t>(k) * in_dim;
        double* di = din->data() + i * in_dim;
        for (int d = 0; d < in_dim; ++d) di[d] += gk * wk[d];
      }
    }
  }
}

void sgd_update(std::vector<double>& w, std::vector<double>& v, const std::vector<double>& g,
                double lr, double mu, double lambda) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    v[i] = mu * v[i] + g[i] + lambda * w[i];
    w[i] -= lr * v[i];
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (!(pi > 0.0 && pi < 1.0)) throw std::invalid_argument("TrainConfig: pi must lie in (0,1)");
  if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("TrainConfig: bad momentum");
  if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: bad weight_decay");
  if (arch == Arch::OneHidden && hidden_width < 1) {
    throw std::invalid_argument("TrainConfig: hidden_width must be >= 1");
  }
  loss.validate();
}

DenseHead init_head(int feature_dim, int num_classes, Arch arch, int hidden_width, double pi,
                    std::uint64_t rng_seed) {
  if (feature_dim < 1 || num_classes < 1) {
    throw std::invalid_argument("init_head: feature_dim and num_classes must be >= 1");
  }
  if (!(pi > 0.0 && pi < 1.0)) throw std::invalid_argument("init_head: pi must lie in (0,1)");
  if (arch == Arch::OneHidden && hidden_width < 1) {
    throw std::invalid_argument("init_head: hidden_width must be >= 1");
  }

  DenseHead head;
  head.arch = arch;
  head.feature_dim = feature_dim;
  head.num_classes = num_classes;
  head.hidden_width = arch == Arch::OneHidden ? hidden_width : 0;

  Rng rng(rng_seed);
  const int in2 = head.output_input_dim();
  if (arch == Arch::OneHidden) {
    fill_normal(head.cls_w1, static_cast<std::size_t>(hidden_width) * feature_dim, rng);
    head.cls_b1.assign(hidden_width, 0.0);
    fill_normal(head.reg_w1, static_cast<std::size_t>(hidden_width) * feature_dim, rng);
    head.reg_b1.assign(hidden_width, 0.0);
  }
  fill_normal(head.cls_w2, static_cast<std::size_t>(num_classes) * in2, rng);
  head.cls_b2.assign(num_classes, -std::log((1.0 - pi) / pi));
  fill_normal(head.reg_w2, static_cast<std::size_t>(kRegOutputs) * in2, rng);
  head.reg_b2.assign(kRegOutputs, 0.0);
  return head;
}

ForwardResult forward(const DenseHead& head, std::span<const double> features,
                      std::size_t num_anchors) {
  return forward_cached(head, features, num_anchors).out;
}

SgdState SgdState::zeros_like(const DenseHead& head) {
  SgdState s;
  s.cls_w1.assign(head.cls_w1.size(), 0.0);
  s.cls_b1.assign(head.cls_b1.size(), 0.0);
  s.reg_w1.assign(head.reg_w1.size(), 0.0);
  s.reg_b1.assign(head.reg_b1.size(), 0.0);
  s.cls_w2.assign(head.cls_w2.size(), 0.0);
  s.cls_b2.assign(head.cls_b2.size(), 0.0);
  s.reg_w2.assign(head.reg_w2.size(), 0.0);
  s.reg_b2.assign(head.reg_b2.size(), 0.0);
  return s;
}

double backward_step(DenseHead& head, const TrainingSet& data, const TrainConfig& cfg, double lr,
                     SgdState& state, int iteration) {
  cfg.validate();
  const std::size_t n = data.size();
  const int K = head.num_classes;
  if (data.feature_dim != head.feature_dim || data.num_classes != K) {
    throw std::invalid_argument("backward_step: dataset/head shape mismatch");
  }

  ForwardCache cache = forward_cached(head, data.features, n);
  const std::vector<double>& logits = cache.out.logits;

  std::vector<double> per_anchor;
  loss::per_anchor_loss(logits, data.assignment, K, cfg.loss, per_anchor);

  const std::size_t fg = data.assignment.foreground_count();
  const double norm = static_cast<double>(fg > 0 ? fg : 1);

  // anchor selection mask (OHEM samplers restrict the classification loss)
  std::vector<bool> selected(n, true);
  if (cfg.sampler.kind != SamplerConfig::Kind::AllAnchors) {
    std::vector<int> pool;  // non-ignored anchors only
    pool.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (data.assignment.labels[i] != anchors::AnchorLabel::Ignore) {
        pool.push_back(static_cast<int>(i));
      }
    }
    std::vector<double> pool_losses(pool.size());
    std::vector<std::uint8_t> pool_pos(pool.size());
    std::vector<geometry::Box> pool_boxes;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      pool_losses[j] = per_anchor[pool[j]];
      pool_pos[j] = data.assignment.labels[pool[j]] == anchors::AnchorLabel::Foreground;
    }
    sampler::OhemConfig ocfg;
    ocfg.batch_size = cfg.sampler.batch_size;
    ocfg.nms_threshold = cfg.sampler.nms_threshold;
    ocfg.enforce_ratio_1to3 = cfg.sampler.kind == SamplerConfig::Kind::Ohem1to3;
    if (ocfg.nms_threshold) {
      if (data.anchor_boxes.size() != n) {
        throw std::invalid_argument("backward_step: OHEM nms requires anchor boxes");
      }
      pool_boxes.resize(pool.size());
      for (std::size_t j = 0; j < pool.size(); ++j) pool_boxes[j] = data.anchor_boxes[pool[j]];
    }
    const std::vector<int> picked =
        sampler::ohem_select(pool_losses, pool_boxes, pool_pos, ocfg);
    selected.assign(n, false);
    for (int j : picked) selected[pool[j]] = true;
  }

  std::vector<double> cls_terms;
  cls_terms.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (selected[i]) cls_terms.push_back(per_anchor[i]);
  }
  const double cls_loss = pairwise_sum(cls_terms) / norm;

  // classification gradient w.r.t. logits
  std::vector<double> dlogits(n * K, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!selected[i] || data.assignment.labels[i] == anchors::AnchorLabel::Ignore) continue;
    const bool is_fg = data.assignment.labels[i] == anchors::AnchorLabel::Foreground;
    for (int k = 0; k < K; ++k) {
      const loss::BinaryLabel y = (is_fg && data.assignment.class_id[i] == k)
                                      ? loss::BinaryLabel::Positive
                                      : loss::BinaryLabel::Negative;
      dlogits[i * K + k] = loss::loss_grad(logits[i * K + k], y, cfg.loss) / norm;
    }
  }

  // box regression loss and gradient (foreground anchors only)
  double reg_loss = 0.0;
  std::vector<double> dreg(n * kRegOutputs, 0.0);
  if (data.use_regression) {
    std::vector<double> reg_terms;
    for (std::size_t i = 0; i < n; ++i) {
      if (data.assignment.labels[i] != anchors::AnchorLabel::Foreground) continue;
      const geometry::RegressionTarget& t = data.assignment.targets[i];
      const double target[kRegOutputs] = {t.tx, t.ty, t.tw, t.th};
      double s = 0.0;
      for (int j = 0; j < kRegOutputs; ++j) {
        const double d = cache.out.reg[i * kRegOutputs + j] - target[j];
        s += geometry::smooth_l1(d);
        dreg[i * kRegOutputs + j] = geometry::smooth_l1_grad(d) / norm;
      }
      reg_terms.push_back(s);
    }
    reg_loss = pairwise_sum(reg_terms) / norm;
  }

  const double total = cls_loss + reg_loss;
  if (!std::isfinite(total)) throw DivergenceError(iteration);

  // backprop through the affine stacks
  std::vector<double> g_cls_w2(head.cls_w2.size(), 0.0), g_cls_b2(head.cls_b2.size(), 0.0);
  std::vector<double> g_reg_w2(head.reg_w2.size(), 0.0), g_reg_b2(head.reg_b2.size(), 0.0);
  std::vector<double> g_cls_w1(head.cls_w1.size(), 0.0), g_cls_b1(head.cls_b1.size(), 0.0);
  std::vector<double> g_reg_w1(head.reg_w1.size(), 0.0), g_reg_b1(head.reg_b1.size(), 0.0);

  if (head.arch == Arch::Linear) {
    backprop_affine(data.features, n, head.feature_dim, K, dlogits, g_cls_w2, g_cls_b2, nullptr,
                    head.cls_w2);
    if (data.use_regression) {
      backprop_affine(data.features, n, head.feature_dim, kRegOutputs, dreg, g_reg_w2, g_reg_b2,
                      nullptr, head.reg_w2);
    }
  } else {
    const int H = head.hidden_width;
    std::vector<double> dh(n * H, 0.0);
    backprop_affine(cache.cls_hidden, n, H, K, dlogits, g_cls_w2, g_cls_b2, &dh, head.cls_w2);
    for (std::size_t i = 0; i < dh.size(); ++i) {
      if (cache.cls_hidden[i] <= 0.0) dh[i] = 0.0;  // ReLU gate
    }
    backprop_affine(data.features, n, head.feature_dim, H, dh, g_cls_w1, g_cls_b1, nullptr,
                    head.cls_w1);

    if (data.use_regression) {
      std::vector<double> dhr(n * H, 0.0);
      backprop_affine(cache.reg_hidden, n, H, kRegOutputs, dreg, g_reg_w2, g_reg_b2, &dhr,
                      head.reg_w2);
      for (std::size_t i = 0; i < dhr.size(); ++i) {
        if (cache.reg_hidden[i] <= 0.0) dhr[i] = 0.0;
      }
      backprop_affine(data.features, n, head.feature_dim, H, dhr, g_reg_w1, g_reg_b1, nullptr,
                      head.reg_w1);
    }
  }

  const double mu = cfg.momentum;
  const double wd = cfg.weight_decay;
  if (head.arch == Arch::OneHidden) {
    sgd_update(head.cls_w1, state.cls_w1, g_cls_w1, lr, mu, wd);
    sgd_update(head.cls_b1, state.cls_b1, g_cls_b1, lr, mu, 0.0);
    if (data.use_regression) {
      sgd_update(head.reg_w1, state.reg_w1, g_reg_w1, lr, mu, wd);
      sgd_update(head.reg_b1, state.reg_b1, g_reg_b1, lr, mu, 0.0);
    }
  }
  sgd_update(head.cls_w2, state.cls_w2, g_cls_w2, lr, mu, wd);
  sgd_update(head.cls_b2, state.cls_b2, g_cls_b2, lr, mu, 0.0);
  if (data.use_regression) {
    sgd_update(head.reg_w2, state.reg_w2, g_reg_w2, lr, mu, wd);
    sgd_update(head.reg_b2, state.reg_b2, g_reg_b2, lr, mu, 0.0);
  }
  return total;
}

TrainResult train(const TrainConfig& cfg, const TrainingSet& data) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");

  TrainResult r;
  r.head = init_head(data.feature_dim, data.num_classes, cfg.arch, cfg.hidden_width, cfg.pi,
                     cfg.seed);
  SgdState state = SgdState::zeros_like(r.head);
  r.history.reserve(cfg.iterations);

  for (int it = 0; it < cfg.iterations; ++it) {
    double lr = cfg.learning_rate;
    for (double frac : cfg.lr_drop_points) {
      if (it >= static_cast<int>(frac * cfg.iterations)) lr /= 10.0;
    }
    double loss_value = 0.0;
    try {
      loss_value = backward_step(r.head, data, cfg, lr, state, it);
    } catch (const DivergenceError& e) {
      r.diverged = true;
      r.divergence_iteration = e.iteration;
      return r;
    }
    r.history.push_back({it, loss_value, lr});
    if (loss_value > kDivergenceLossCap) {
      r.diverged = true;
      r.divergence_iteration = it;
      return r;
    }
  }
  return r;
}

}  // namespace densefocus::model
