#include "densefocus/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace densefocus::geometry {

double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

RegressionTarget encode(const Box& anchor, const Box& gt) {
  const double wa = anchor.width();
  const double ha = anchor.height();
  if (wa <= 0.0 || ha <= 0.0) {
    throw std::invalid_argument("encode: anchor must have positive width and height");
  }
  RegressionTarget t;
  t.tx = (gt.cx() - anchor.cx()) / wa;
  t.ty = (gt.cy() - anchor.cy()) / ha;
  t.tw = std::log(gt.width() / wa);
  t.th = std::log(gt.height() / ha);
  return t;
}

Box decode(const Box& anchor, const RegressionTarget& t) {
  constexpr double kMaxScale = 1e4;  // guards against divergent regressors
  const double wa = anchor.width();
  const double ha = anchor.height();
  const double cx = anchor.cx() + t.tx * wa;
  const double cy = anchor.cy() + t.ty * ha;
  const double w = std::min(std::exp(t.tw), kMaxScale) * wa;
  const double h = std::min(std::exp(t.th), kMaxScale) * ha;
  return Box::from_center(cx, cy, w, h);
}

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_grad(double d) {
  if (std::abs(d) < 1.0) return d;
  return d > 0.0 ? 1.0 : -1.0;
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return dets[i].score > dets[j].score;
  });

  std::vector<Detection> kept;
  kept.reserve(dets.size());
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j] || dets[j].class_id != dets[i].class_id) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;
}

}  // namespace densefocus::geometry
