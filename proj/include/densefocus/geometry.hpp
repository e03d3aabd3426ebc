#pragma once

#include <span>
#include <vector>

namespace densefocus::geometry {

// Axis-aligned rectangle, half-open pixel coordinates. area = (x2-x1)*(y2-y1).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  static Box from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
};

// R-CNN box parameterization: center offsets scaled by anchor size, log size ratios.
struct RegressionTarget {
  double tx = 0.0;
  double ty = 0.0;
  double tw = 0.0;
  double th = 0.0;
};

struct Detection {
  Box box;
  double score = 0.0;
  int class_id = 0;
};

double iou(const Box& a, const Box& b);

// throws std::invalid_argument if the anchor has zero width or height
RegressionTarget encode(const Box& anchor, const Box& gt);

// exact inverse of encode; exp(tw), exp(th) clamped at 1e4
Box decode(const Box& anchor, const RegressionTarget& t);

double smooth_l1(double d);
double smooth_l1_grad(double d);

// Greedy class-wise NMS. Output sorted by descending score; ties broken by
// lower original index.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold);

}  // namespace densefocus::geometry
