#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <omp.h>

#include "densefocus/loss.hpp"
#include "densefocus/serial.hpp"

using namespace densefocus;
using loss::BinaryLabel;
using loss::LossConfig;
using loss::LossKind;

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

// independent central-difference oracle on loss_value
double fd_grad(double x, BinaryLabel y, const LossConfig& cfg, double h = 1e-5) {
  return (loss::loss_value(x + h, y, cfg) - loss::loss_value(x - h, y, cfg)) / (2.0 * h);
}

std::vector<LossConfig> all_kinds() {
  return {
      LossConfig::ce(),
      LossConfig::alpha_ce(0.25),
      LossConfig::focal(0.5),
      LossConfig::focal(1.0),
      LossConfig::focal(2.0, 0.25),
      LossConfig::focal(5.0),
      LossConfig::focal_star(2.0, 1.0),
      LossConfig::focal_star(4.0, 0.0),
      LossConfig::hinge(),
  };
}

anchors::MatchAssignment three_anchor_assignment() {
  anchors::MatchAssignment a;
  a.labels = {anchors::AnchorLabel::Foreground, anchors::AnchorLabel::Background,
              anchors::AnchorLabel::Ignore};
  a.gt_index = {0, -1, -1};
  a.class_id = {0, -1, -1};
  a.targets.resize(3);
  return a;
}

}  // namespace

TEST_CASE("stable_sigmoid basics") {
  CHECK(loss::stable_sigmoid(0.0) == 0.5);
  CHECK(loss::stable_sigmoid(2.0) == doctest::Approx(0.8807970779778823).epsilon(1e-15));
  // saturation: within 1e-17 of 1 (rounds to exactly 1.0 in doubles), no overflow
  CHECK(loss::stable_sigmoid(40.0) >= 1.0 - 1e-16);
  CHECK(loss::stable_sigmoid(40.0) <= 1.0);
  CHECK(loss::stable_sigmoid(-1000.0) >= 0.0);
  CHECK(loss::stable_sigmoid(1000.0) <= 1.0);
  CHECK_THROWS_AS(loss::stable_sigmoid(std::nan("")), std::invalid_argument);
  // monotone on a coarse grid
  double prev = -1.0;
  for (double x = -30.0; x <= 30.0; x += 0.25) {
    const double v = loss::stable_sigmoid(x);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("p_t definition") {
  CHECK(loss::p_t(0.9, BinaryLabel::Positive) == 0.9);
  CHECK(loss::p_t(0.9, BinaryLabel::Negative) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(loss::p_t(0.5, BinaryLabel::Positive) == 0.5);
  CHECK(loss::p_t(0.5, BinaryLabel::Negative) == 0.5);
  CHECK_THROWS_AS(loss::p_t(1.5, BinaryLabel::Positive), std::invalid_argument);
}

TEST_CASE("loss_value point examples") {
  // CE at p_t = 0.5
  CHECK(loss::loss_value(0.0, BinaryLabel::Positive, LossConfig::ce()) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-15));

  // FL at gamma=2, p_t=0.9 is exactly 100x smaller than CE there
  const double x9 = logit(0.9);
  const double ce = loss::loss_value(x9, BinaryLabel::Positive, LossConfig::ce());
  const double fl = loss::loss_value(x9, BinaryLabel::Positive, LossConfig::focal(2.0));
  CHECK(fl * 100.0 == doctest::Approx(ce).epsilon(1e-9));

  // FL* gamma=2 beta=1 at x_t=0: -ln(sigmoid(1))/2
  CHECK(loss::loss_value(0.0, BinaryLabel::Positive, LossConfig::focal_star(2.0, 1.0)) ==
        doctest::Approx(0.15663084375911141).epsilon(1e-12));

  // hinge vanishes only in the p_t -> 1 limit and equals 2(1-p_t)
  CHECK(loss::loss_value(0.0, BinaryLabel::Positive, LossConfig::hinge()) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK(loss::loss_value(50.0, BinaryLabel::Positive, LossConfig::hinge()) ==
        doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("FL with gamma=0 equals CE pointwise") {
  const LossConfig fl0 = LossConfig::focal(0.0);
  const LossConfig ce = LossConfig::ce();
  for (double x = -20.0; x <= 20.0; x += 0.01) {
    for (BinaryLabel y : {BinaryLabel::Positive, BinaryLabel::Negative}) {
      const double a = loss::loss_value(x, y, fl0);
      const double b = loss::loss_value(x, y, ce);
      CHECK(std::abs(a - b) <= 1e-12 * std::max(1e-300, std::abs(b)));
    }
  }
}

TEST_CASE("FL never exceeds CE and the modulating factor lies in [0,1]") {
  for (double gamma : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    const LossConfig fl = LossConfig::focal(gamma);
    for (double x = -20.0; x <= 20.0; x += 0.05) {
      for (BinaryLabel y : {BinaryLabel::Positive, BinaryLabel::Negative}) {
        const double a = loss::loss_value(x, y, fl);
        const double b = loss::loss_value(x, y, LossConfig::ce());
        CHECK(a <= b * (1.0 + 1e-12));
        if (b > 0.0) {
          const double mod = a / b;
          CHECK(mod >= 0.0);
          CHECK(mod <= 1.0 + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("ratio identity FL/CE = (1-p_t)^gamma") {
  for (double pt : {0.9, 0.968, 0.3, 0.5, 0.99}) {
    const double x = logit(pt);
    for (double gamma : {0.5, 1.0, 2.0, 5.0}) {
      const double fl = loss::loss_value(x, BinaryLabel::Positive, LossConfig::focal(gamma));
      const double ce = loss::loss_value(x, BinaryLabel::Positive, LossConfig::ce());
      const double expected = std::pow(1.0 - loss::stable_sigmoid(x), gamma);
      CHECK(fl / ce == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  // the headline claims: 100x at p_t=0.9, >= 976x at p_t=0.968
  const double r09 = std::pow(1.0 - 0.9, 2.0);
  CHECK(1.0 / r09 == doctest::Approx(100.0).epsilon(1e-12));
  const double x968 = logit(0.968);
  const double fl = loss::loss_value(x968, BinaryLabel::Positive, LossConfig::focal(2.0));
  const double ce = loss::loss_value(x968, BinaryLabel::Positive, LossConfig::ce());
  CHECK(ce / fl >= 976.0);
}

TEST_CASE("losses are non-increasing in p_t") {
  for (const LossConfig& cfg :
       {LossConfig::ce(), LossConfig::focal(2.0), LossConfig::focal_star(2.0, 1.0)}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double x = -15.0; x <= 15.0; x += 0.1) {  // p_t increasing with x at y=+1
      const double v = loss::loss_value(x, BinaryLabel::Positive, cfg);
      CHECK(v <= prev + 1e-15);
      prev = v;
    }
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  for (const LossConfig& cfg : all_kinds()) {
    for (double x = -10.0; x <= 10.0; x += 0.25) {
      for (BinaryLabel y : {BinaryLabel::Positive, BinaryLabel::Negative}) {
        const double g = loss::loss_grad(x, y, cfg);
        const double fd = fd_grad(x, y, cfg);
        const double scale = std::max(std::abs(fd), 1e-8);
        CHECK(std::abs(g - fd) / scale <= 1e-6);
      }
    }
  }
}

TEST_CASE("gradient closed forms from the derivative table") {
  // CE at x=0, y=+1: y(p_t-1) = -0.5
  CHECK(loss::loss_grad(0.0, BinaryLabel::Positive, LossConfig::ce()) == doctest::Approx(-0.5));
  // FL* gradient is y(p_t* - 1) at any setting
  for (double x : {-3.0, -0.7, 0.0, 1.2, 4.0}) {
    for (BinaryLabel y : {BinaryLabel::Positive, BinaryLabel::Negative}) {
      const LossConfig cfg = LossConfig::focal_star(2.0, 1.0);
      const double xt = loss::sign_of(y) * x;
      const double pts = loss::stable_sigmoid(2.0 * xt + 1.0);
      CHECK(loss::loss_grad(x, y, cfg) ==
            doctest::Approx(loss::sign_of(y) * (pts - 1.0)).epsilon(1e-12));
    }
  }
}

TEST_CASE("FL and FL* derivatives are small for correctly classified examples") {
  for (const LossConfig& cfg : {LossConfig::focal(2.0), LossConfig::focal_star(2.0, 1.0)}) {
    for (double xt = 0.05; xt <= 10.0; xt += 0.05) {
      const double g = std::abs(loss::loss_grad(xt, BinaryLabel::Positive, cfg));
      const double gce = std::abs(loss::loss_grad(xt, BinaryLabel::Positive, LossConfig::ce()));
      CHECK(g <= gce + 1e-15);
    }
  }
}

TEST_CASE("logit-fused evaluation stays finite and matches asymptotics at |x| = 30") {
  const double x = 30.0;
  // CE(y=-1) at x=30: softplus(x) ~ x
  const double ce = loss::loss_value(x, BinaryLabel::Negative, LossConfig::ce());
  CHECK(std::isfinite(ce));
  CHECK(std::abs(ce - loss::softplus(x)) <= 1e-9);
  CHECK(std::abs(ce - 30.0) <= 1e-9);
  // FL at a hopeless example approaches CE (modulating factor -> 1)
  const double fl = loss::loss_value(x, BinaryLabel::Negative, LossConfig::focal(2.0));
  CHECK(std::isfinite(fl));
  CHECK(std::abs(fl - ce) <= 1e-9);
  // well classified side: tiny but finite
  const double easy = loss::loss_value(x, BinaryLabel::Positive, LossConfig::focal(2.0));
  CHECK(std::isfinite(easy));
  CHECK(easy >= 0.0);
  CHECK(easy <= 1e-9);
}

TEST_CASE("config validation") {
  LossConfig bad = LossConfig::focal(-1.0);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  LossConfig bad_alpha = LossConfig::alpha_ce(1.5);
  CHECK_THROWS_AS(bad_alpha.validate(), std::invalid_argument);
  LossConfig star0 = LossConfig::focal_star(0.0, 1.0);
  star0.gamma = 0.0;
  CHECK_THROWS_AS(star0.validate(), std::invalid_argument);
  CHECK_THROWS_AS(loss::loss_value(std::numeric_limits<double>::infinity(),
                                   BinaryLabel::Positive, LossConfig::ce()),
                  std::invalid_argument);
}

TEST_CASE("batch_loss hand-computed examples") {
  const LossConfig ce = LossConfig::ce();
  anchors::MatchAssignment a = three_anchor_assignment();
  const std::vector<double> logits = {1.0, -2.0, 5.0};

  // fg + bg contribute, ignore does not; one foreground => divide by 1
  const double expected = loss::loss_value(1.0, BinaryLabel::Positive, ce) +
                          loss::loss_value(-2.0, BinaryLabel::Negative, ce);
  CHECK(loss::batch_loss(logits, a, 1, ce) == doctest::Approx(expected).epsilon(1e-14));

  // single foreground anchor equals the single pairwise loss
  anchors::MatchAssignment one;
  one.labels = {anchors::AnchorLabel::Foreground};
  one.gt_index = {0};
  one.class_id = {0};
  one.targets.resize(1);
  const std::vector<double> lone = {0.7};
  CHECK(loss::batch_loss(lone, one, 1, ce) ==
        doctest::Approx(loss::loss_value(0.7, BinaryLabel::Positive, ce)));

  // all background: divisor clamps to 1, value finite and small at the prior bias
  anchors::MatchAssignment bg;
  bg.labels.assign(10, anchors::AnchorLabel::Background);
  bg.gt_index.assign(10, -1);
  bg.class_id.assign(10, -1);
  bg.targets.resize(10);
  const double prior_logit = -std::log(99.0);  // pi = 0.01
  const std::vector<double> bg_logits(10, prior_logit);
  const double v = loss::batch_loss(bg_logits, bg, 1, ce);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(10.0 * -std::log(0.99)).epsilon(1e-12));

  CHECK_THROWS_AS(loss::batch_loss(std::vector<double>{1.0, 2.0}, one, 1, ce),
                  std::invalid_argument);
}

TEST_CASE("batch_loss: multi-class foreground decomposition") {
  anchors::MatchAssignment a;
  a.labels = {anchors::AnchorLabel::Foreground};
  a.gt_index = {0};
  a.class_id = {1};
  a.targets.resize(1);
  const std::vector<double> logits = {0.3, 0.8, -0.2};
  const LossConfig cfg = LossConfig::focal(2.0, 0.25);
  const double expected = loss::loss_value(0.3, BinaryLabel::Negative, cfg) +
                          loss::loss_value(0.8, BinaryLabel::Positive, cfg) +
                          loss::loss_value(-0.2, BinaryLabel::Negative, cfg);
  CHECK(loss::batch_loss(logits, a, 3, cfg) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("batch_loss matches the serial reference and is thread-count invariant") {
  // synthetic assignment over many anchors
  const std::size_t n = 5000;
  anchors::MatchAssignment a;
  a.labels.resize(n);
  a.gt_index.assign(n, -1);
  a.class_id.assign(n, -1);
  a.targets.resize(n);
  std::vector<double> logits(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    if (i % 97 == 0) {
      a.labels[i] = anchors::AnchorLabel::Foreground;
      a.class_id[i] = static_cast<int>(i % 2);
      a.gt_index[i] = 0;
    } else if (i % 31 == 0) {
      a.labels[i] = anchors::AnchorLabel::Ignore;
    } else {
      a.labels[i] = anchors::AnchorLabel::Background;
    }
    logits[i * 2] = std::sin(0.1 * static_cast<double>(i)) * 6.0;
    logits[i * 2 + 1] = std::cos(0.07 * static_cast<double>(i)) * 6.0;
  }
  const LossConfig cfg = LossConfig::focal(2.0, 0.25);

  const double serial_value = serial::batch_loss(logits, a, 2, cfg);

  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const double v1 = loss::batch_loss(logits, a, 2, cfg);
  omp_set_num_threads(4);
  const double v4 = loss::batch_loss(logits, a, 2, cfg);
  omp_set_num_threads(saved);

  CHECK(v1 == v4);  // bit-identical regardless of parallelism
  CHECK(v1 == doctest::Approx(serial_value).epsilon(1e-12));
}
