// Parallel kernels vs their serial reference implementations.

#include <benchmark/benchmark.h>

#include <vector>

#include "densefocus/anchors.hpp"
#include "densefocus/loss.hpp"
#include "densefocus/rng.hpp"
#include "densefocus/serial.hpp"

using namespace densefocus;

namespace {

struct LossFixture {
  std::vector<double> logits;
  anchors::MatchAssignment assignment;
  int num_classes = 1;

  explicit LossFixture(std::size_t n) {
    Rng rng(1);
    logits.resize(n);
    assignment.labels.assign(n, anchors::AnchorLabel::Background);
    assignment.gt_index.assign(n, -1);
    assignment.class_id.assign(n, -1);
    assignment.targets.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      logits[i] = rng.normal(0.0, 3.0);
      const double u = rng.uniform01();
      if (u < 0.002) {
        assignment.labels[i] = anchors::AnchorLabel::Foreground;
        assignment.class_id[i] = 0;
        assignment.gt_index[i] = 0;
      } else if (u < 0.01) {
        assignment.labels[i] = anchors::AnchorLabel::Ignore;
      }
    }
  }
};

void BM_BatchLossParallel(benchmark::State& state) {
  const LossFixture fx(static_cast<std::size_t>(state.range(0)));
  const auto cfg = loss::LossConfig::focal(2.0, 0.25);
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss::batch_loss(fx.logits, fx.assignment, fx.num_classes, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_BatchLossSerial(benchmark::State& state) {
  const LossFixture fx(static_cast<std::size_t>(state.range(0)));
  const auto cfg = loss::LossConfig::focal(2.0, 0.25);
  for (auto _ : state) {
    benchmark::DoNotOptimize(serial::batch_loss(fx.logits, fx.assignment, fx.num_classes, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

struct AssignFixture {
  anchors::AnchorSet set;
  std::vector<anchors::GroundTruth> gts;

  explicit AssignFixture(int image_size) {
    anchors::AnchorConfig cfg;
    cfg.levels = {3, 4, 5};
    set = anchors::generate_anchors(cfg, image_size, image_size);
    Rng rng(2);
    for (int g = 0; g < 30; ++g) {
      const double w = rng.uniform(16.0, 96.0);
      const double h = rng.uniform(16.0, 96.0);
      const double x = rng.uniform(0.0, image_size - 96.0);
      const double y = rng.uniform(0.0, image_size - 96.0);
      gts.push_back({{x, y, x + w, y + h}, 0});
    }
  }
};

void BM_AssignTargetsParallel(benchmark::State& state) {
  const AssignFixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(anchors::assign_targets(fx.set, fx.gts));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(fx.set.size()));
}

void BM_AssignTargetsSerial(benchmark::State& state) {
  const AssignFixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(serial::assign_targets(fx.set, fx.gts));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(fx.set.size()));
}

}  // namespace

BENCHMARK(BM_BatchLossParallel)->Arg(10000)->Arg(100000)->Arg(1000000);
BENCHMARK(BM_BatchLossSerial)->Arg(10000)->Arg(100000)->Arg(1000000);
BENCHMARK(BM_AssignTargetsParallel)->Arg(256)->Arg(512);
BENCHMARK(BM_AssignTargetsSerial)->Arg(256)->Arg(512);

BENCHMARK_MAIN();
