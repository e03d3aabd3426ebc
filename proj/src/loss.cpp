#include "densefocus/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "densefocus/reduce.hpp"

namespace densefocus::loss {

namespace {

constexpr double kEps = 1e-12;  // clamp inside the (1-p_t)^gamma * log(p_t) product

double alpha_t(const LossConfig& cfg, BinaryLabel y) {
  if (!cfg.alpha) return 1.0;
  return y == BinaryLabel::Positive ? *cfg.alpha : 1.0 - *cfg.alpha;
}

}  // namespace

void LossConfig::validate() const {
  if (std::isnan(gamma) || gamma < 0.0) {
    throw std::invalid_argument("LossConfig: gamma must be >= 0");
  }
  if (alpha && (std::isnan(*alpha) || *alpha < 0.0 || *alpha > 1.0)) {
    throw std::invalid_argument("LossConfig: alpha must lie in [0,1]");
  }
  if (!std::isfinite(beta)) throw std::invalid_argument("LossConfig: beta must be finite");
  if (kind == LossKind::FLStar && gamma <= 0.0) {
    throw std::invalid_argument("LossConfig: FL* requires gamma > 0");
  }
}

double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

double stable_sigmoid(double x) {
  if (std::isnan(x)) throw std::invalid_argument("stable_sigmoid: NaN input");
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double p_t(double p, BinaryLabel y) {
  if (p < 0.0 || p > 1.0) throw std::invalid_argument("p_t: p outside [0,1]");
  return y == BinaryLabel::Positive ? p : 1.0 - p;
}

double loss_value(double x, BinaryLabel y, const LossConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(x)) throw std::invalid_argument("loss_value: non-finite logit");
  const double xt = sign_of(y) * x;
  const double log_pt = -softplus(-xt);  // log p_t, fused

  switch (cfg.kind) {
    case LossKind::CE:
      return -log_pt;
    case LossKind::AlphaCE:
      return -alpha_t(cfg, y) * log_pt;
    case LossKind::FL: {
      const double one_minus_pt = stable_sigmoid(-xt);
      const double mod = cfg.gamma == 0.0 ? 1.0 : std::pow(one_minus_pt, cfg.gamma);
      return -alpha_t(cfg, y) * mod * log_pt;
    }
    case LossKind::FLStar: {
      const double z = cfg.gamma * xt + cfg.beta;
      return alpha_t(cfg, y) * softplus(-z) / cfg.gamma;
    }
    case LossKind::Hinge: {
      // max(0, 1 - m) with margin m = 2 p_t - 1, i.e. 2 (1 - p_t)
      const double one_minus_pt = stable_sigmoid(-xt);
      return alpha_t(cfg, y) * std::max(0.0, 2.0 * one_minus_pt);
    }
  }
  throw std::logic_error("loss_value: unreachable");
}

double loss_grad(double x, BinaryLabel y, const LossConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(x)) throw std::invalid_argument("loss_grad: non-finite logit");
  const double ys = sign_of(y);
  const double xt = ys * x;
  const double pt = stable_sigmoid(xt);
  const double one_minus_pt = stable_sigmoid(-xt);

  switch (cfg.kind) {
    case LossKind::CE:
      return ys * (pt - 1.0);
    case LossKind::AlphaCE:
      return alpha_t(cfg, y) * ys * (pt - 1.0);
    case LossKind::FL: {
      const double log_pt = -softplus(-xt);
      const double mod = cfg.gamma == 0.0 ? 1.0 : std::pow(one_minus_pt, cfg.gamma);
      // clamp kills the 0 * (-inf) indeterminate at saturated pt
      const double pt_c = std::min(std::max(pt, kEps), 1.0 - kEps);
      return alpha_t(cfg, y) * ys * mod * (cfg.gamma * pt_c * log_pt + pt - 1.0);
    }
    case LossKind::FLStar: {
      const double pt_star = stable_sigmoid(cfg.gamma * xt + cfg.beta);
      return alpha_t(cfg, y) * ys * (pt_star - 1.0);
    }
    case LossKind::Hinge:
      // 2(1 - p_t) is smooth in x; the kink sits at p_t = 1 where the
      // subgradient 0 coincides with the limit
      return alpha_t(cfg, y) * ys * (-2.0 * pt * one_minus_pt);
  }
  throw std::logic_error("loss_grad: unreachable");
}

void per_anchor_loss(std::span<const double> logits, const anchors::MatchAssignment& assignment,
                     int num_classes, const LossConfig& cfg, std::vector<double>& out) {
  cfg.validate();
  const std::size_t n = assignment.size();
  if (num_classes < 1 || logits.size() != n * static_cast<std::size_t>(num_classes)) {
    throw std::invalid_argument("per_anchor_loss: logits shape mismatch");
  }
  out.assign(n, 0.0);
  const std::int64_t sn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < sn; ++i) {
    if (assignment.labels[i] == anchors::AnchorLabel::Ignore) continue;
    const bool fg = assignment.labels[i] == anchors::AnchorLabel::Foreground;
    double s = 0.0;
    for (int k = 0; k < num_classes; ++k) {
      const BinaryLabel y = (fg && assignment.class_id[i] == k) ? BinaryLabel::Positive
                                                                : BinaryLabel::Negative;
      s += loss_value(logits[i * num_classes + k], y, cfg);
    }
    out[i] = s;
  }
}

double batch_loss(std::span<const double> logits, const anchors::MatchAssignment& assignment,
                  int num_classes, const LossConfig& cfg) {
  std::vector<double> per_anchor;
  per_anchor_loss(logits, assignment, num_classes, cfg, per_anchor);
  const double total = pairwise_sum(per_anchor);
  const std::size_t fg = assignment.foreground_count();
  return total / static_cast<double>(fg > 0 ? fg : 1);
}

}  // namespace densefocus::loss
