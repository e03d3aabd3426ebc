#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "densefocus/anchors.hpp"
#include "densefocus/rng.hpp"
#include "densefocus/serial.hpp"

using namespace densefocus;
using anchors::AnchorConfig;
using anchors::AnchorLabel;
using anchors::GroundTruth;

namespace {

std::size_t expected_count(const AnchorConfig& cfg, int w, int h) {
  std::size_t n = 0;
  for (int l : cfg.levels) {
    const double s = AnchorConfig::stride_at_level(l);
    n += static_cast<std::size_t>(std::ceil(w / s)) * static_cast<std::size_t>(std::ceil(h / s)) *
         cfg.anchors_per_location();
  }
  return n;
}

}  // namespace

TEST_CASE("default 640x640 grid has 76725 anchors") {
  const auto set = anchors::generate_anchors(AnchorConfig{}, 640, 640);
  CHECK(set.size() == 76725);  // (80^2+40^2+20^2+10^2+5^2) * 9
  CHECK(set.level_offsets.front() == 0);
  CHECK(set.level_offsets.back() == set.size());
}

TEST_CASE("count formula holds for random image sizes") {
  Rng rng(3);
  const AnchorConfig cfg;
  for (int i = 0; i < 20; ++i) {
    const int w = rng.uniform_int(128, 900);
    const int h = rng.uniform_int(128, 900);
    const auto set = anchors::generate_anchors(cfg, w, h);
    CHECK(set.size() == expected_count(cfg, w, h));
  }
}

TEST_CASE("minimal single-level grid") {
  AnchorConfig cfg;
  cfg.levels = {3};
  cfg.aspect_ratios = {1.0};
  cfg.octave_scales = {1.0};
  const auto set = anchors::generate_anchors(cfg, 8, 8);
  REQUIRE(set.size() == 1);
  CHECK(set.boxes[0].cx() == doctest::Approx(4.0));
  CHECK(set.boxes[0].cy() == doctest::Approx(4.0));
  CHECK(set.boxes[0].width() == doctest::Approx(32.0));  // level-3 base area 32^2
}

TEST_CASE("anchor scale range covers 32 to ~813 pixels") {
  const auto set = anchors::generate_anchors(AnchorConfig{}, 640, 640);
  double min_scale = 1e9, max_scale = 0.0;
  for (const auto& b : set.boxes) {
    const double scale = std::sqrt(b.width() * b.height());
    min_scale = std::min(min_scale, scale);
    max_scale = std::max(max_scale, scale);
  }
  CHECK(min_scale == doctest::Approx(32.0).epsilon(1e-9));
  CHECK(max_scale >= 812.0);
  CHECK(max_scale <= 813.0);
}

TEST_CASE("aspect ratio convention: w/h = r, area preserved") {
  AnchorConfig cfg;
  cfg.levels = {3};
  cfg.octave_scales = {1.0};
  const auto set = anchors::generate_anchors(cfg, 8, 8);
  REQUIRE(set.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& b = set.boxes[i];
    CHECK(b.width() / b.height() == doctest::Approx(cfg.aspect_ratios[i]).epsilon(1e-12));
    CHECK(b.area() == doctest::Approx(1024.0).epsilon(1e-9));
  }
}

TEST_CASE("generation is deterministic and rejects tiny images") {
  const AnchorConfig cfg;
  const auto a = anchors::generate_anchors(cfg, 333, 200);
  const auto b = anchors::generate_anchors(cfg, 333, 200);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.boxes[i].x1 == b.boxes[i].x1);
    CHECK(a.boxes[i].y2 == b.boxes[i].y2);
  }
  CHECK_THROWS_AS(anchors::generate_anchors(cfg, 64, 64), std::invalid_argument);
}

TEST_CASE("assignment basics") {
  AnchorConfig cfg;
  cfg.levels = {3};
  cfg.aspect_ratios = {1.0};
  cfg.octave_scales = {1.0};
  const auto set = anchors::generate_anchors(cfg, 64, 64);  // 8x8 grid of 32x32 anchors

  SUBCASE("no ground truth: everything background") {
    const auto asg = anchors::assign_targets(set, {});
    for (auto l : asg.labels) CHECK(l == AnchorLabel::Background);
  }

  SUBCASE("gt equal to an anchor is foreground with IoU 1") {
    const std::vector<GroundTruth> gts = {{set.boxes[0], 0}};
    const auto asg = anchors::assign_targets(set, gts);
    CHECK(asg.labels[0] == AnchorLabel::Foreground);
    CHECK(asg.gt_index[0] == 0);
    CHECK(asg.class_id[0] == 0);
    CHECK(asg.targets[0].tx == doctest::Approx(0.0));
  }

  SUBCASE("IoU bands: constructed ignore case") {
    // shift a copy of anchor 0 so that IoU lands in [0.4, 0.5)
    geometry::Box b = set.boxes[0];
    const double shift = 10.0;  // IoU = (32-10)*32 / (2*32*32 - (32-10)*32) = 22/42 ~ 0.5238
    b.x1 += shift;
    b.x2 += shift;
    // use a narrower overlap: shift 14 -> 18/46 ~ 0.391 (background); shift 12 -> 20/44 ~ 0.4545
    geometry::Box ignore_gt = set.boxes[0];
    ignore_gt.x1 += 12.0;
    ignore_gt.x2 += 12.0;
    const std::vector<GroundTruth> ig_gts = {{ignore_gt, 0}};
    const auto asg = anchors::assign_targets(set, ig_gts);
    CHECK(geometry::iou(set.boxes[0], ignore_gt) == doctest::Approx(20.0 / 44.0));
    CHECK(asg.labels[0] == AnchorLabel::Ignore);

    geometry::Box bg_gt = set.boxes[0];
    bg_gt.x1 += 14.0;
    bg_gt.x2 += 14.0;
    const std::vector<GroundTruth> bg_gts = {{bg_gt, 0}};
    const auto asg2 = anchors::assign_targets(set, bg_gts);
    CHECK(geometry::iou(set.boxes[0], bg_gt) < 0.4);
    CHECK(asg2.labels[0] == AnchorLabel::Background);
  }
}

TEST_CASE("assignment equals brute-force oracle on random instances") {
  Rng rng(17);
  AnchorConfig cfg;
  cfg.levels = {3, 4};
  for (int trial = 0; trial < 50; ++trial) {
    const int size = rng.uniform_int(32, 64);
    const auto set = anchors::generate_anchors(cfg, size, size);
    std::vector<GroundTruth> gts;
    const int ng = rng.uniform_int(0, 10);
    for (int g = 0; g < ng; ++g) {
      const double w = rng.uniform(8.0, 48.0);
      const double h = rng.uniform(8.0, 48.0);
      const double x = rng.uniform(-8.0, size - w / 2);
      const double y = rng.uniform(-8.0, size - h / 2);
      gts.push_back({{x, y, x + w, y + h}, rng.uniform_int(0, 2)});
    }
    const auto par = anchors::assign_targets(set, gts);
    const auto ref = serial::assign_targets(set, gts);
    REQUIRE(par.size() == ref.size());
    std::size_t fg = 0, bg = 0, ig = 0;
    for (std::size_t i = 0; i < par.size(); ++i) {
      CHECK(par.labels[i] == ref.labels[i]);
      CHECK(par.gt_index[i] == ref.gt_index[i]);
      switch (par.labels[i]) {
        case AnchorLabel::Foreground: ++fg; break;
        case AnchorLabel::Background: ++bg; break;
        case AnchorLabel::Ignore: ++ig; break;
      }
      // band invariants against a direct IoU recomputation
      double best = 0.0;
      for (const auto& gt : gts) best = std::max(best, geometry::iou(set.boxes[i], gt.box));
      if (par.labels[i] == AnchorLabel::Foreground) CHECK(best >= 0.5);
      if (par.labels[i] == AnchorLabel::Background) CHECK(best < 0.4);
      if (par.labels[i] == AnchorLabel::Ignore) {
        CHECK(best >= 0.4);
        CHECK(best < 0.5);
      }
    }
    CHECK(fg + bg + ig == par.size());  // exact partition
  }
}
