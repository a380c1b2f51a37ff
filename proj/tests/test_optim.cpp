#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "ecgf/error.hpp"
#include "ecgf/optim.hpp"
#include "ecgf/rng.hpp"

using namespace ecgf;
using namespace ecgf::train;

namespace {

nn::ParamStore<double> scalar_store(double v) {
  nn::ParamStore<double> s;
  s.add("theta", 1, v);
  return s;
}

// Scalar AdamW recurrence written out longhand.
struct ReferenceAdamW {
  double m = 0, v = 0, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd;
  int t = 0;
  double step(double theta, double g, double lr) {
    ++t;
    theta -= lr * wd * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    return theta - lr * mh / (std::sqrt(vh) + eps);
  }
};

}  // namespace

TEST(AdamW, FirstStepByHand) {
  auto p = scalar_store(1.0);
  auto g = scalar_store(0.1);
  auto st = make_optimizer(p, AdamWConfig{});
  adamw_step(p, g, st, 1e-3);
  EXPECT_NEAR(p["theta"][0], 0.9989, 1e-6);
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, ZeroGradientZeroDecayIsIdentity) {
  auto p = scalar_store(0.37);
  auto g = scalar_store(0.0);
  AdamWConfig c;
  c.weight_decay = 0;
  auto st = make_optimizer(p, c);
  for (int i = 0; i < 5; ++i) adamw_step(p, g, st, 1e-3);
  EXPECT_EQ(p["theta"][0], 0.37);
}

TEST(AdamW, DecoupledDecayOnly) {
  auto p = scalar_store(2.0);
  auto g = scalar_store(0.0);
  auto st = make_optimizer(p, AdamWConfig{});
  adamw_step(p, g, st, 1e-3);
  EXPECT_NEAR(p["theta"][0], 1.9998, 1e-15);
}

TEST(AdamW, MatchesLonghandRecurrence) {
  Rng rng(4);
  ReferenceAdamW ref;
  ref.wd = 0.05;
  AdamWConfig c;
  c.weight_decay = 0.05;
  auto p = scalar_store(0.8);
  auto st = make_optimizer(p, c);
  double theta = 0.8;
  for (int i = 0; i < 50; ++i) {
    const double gv = uniform01(rng) - 0.5, lr = 1e-2 * (1 + uniform01(rng));
    adamw_step(p, scalar_store(gv), st, lr);
    theta = ref.step(theta, gv, lr);
    EXPECT_NEAR(p["theta"][0], theta, 1e-14) << i;
  }
}

TEST(AdamW, DecreasesConvexQuadratic) {
  AdamWConfig c;
  c.weight_decay = 0;
  for (double start : {-3.0, -0.2, 0.5, 4.0}) {
    auto p = scalar_store(start);
    auto st = make_optimizer(p, c);
    double f = start * start;
    for (int i = 0; i < 20; ++i) {
      adamw_step(p, scalar_store(2 * p["theta"][0]), st, 1e-2);
      const double next = p["theta"][0] * p["theta"][0];
      EXPECT_LT(next, f);
      f = next;
    }
  }
}

TEST(AdamW, NonFiniteGradientLeavesStateUntouched) {
  nn::ParamStore<double> p;
  p.add("a", 3, 1.0);
  p.add("b", 2, 1.0);
  auto g = p.zeros_like();
  g["b"][1] = std::nan("");
  auto st = make_optimizer(p, AdamWConfig{});
  const auto before = p;
  try {
    adamw_step(p, g, st, 1e-3);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(std::string(e.what()).rfind("diverged", 0), 0u) << e.what();
  }
  EXPECT_TRUE(p == before);
  EXPECT_EQ(st.step, 0u);
}

TEST(AdamW, FrozenArraysUntouched) {
  nn::ParamStore<double> p;
  p.add("frozen", 4, 1.0);
  p.add("live", 4, 1.0);
  auto g = p.zeros_like();
  for (auto& v : g["frozen"]) v = 1;
  for (auto& v : g["live"]) v = 1;
  auto st = make_optimizer(p, AdamWConfig{});
  const std::vector<std::uint8_t> mask{0, 1};
  adamw_step(p, g, st, 1e-2, mask);
  EXPECT_EQ(p["frozen"], std::vector<double>(4, 1.0));
  EXPECT_NE(p["live"], std::vector<double>(4, 1.0));
}

TEST(AdamW, ShapeMismatchRejected) {
  auto p = scalar_store(1);
  nn::ParamStore<double> g;
  g.add("theta", 2);
  auto st = make_optimizer(p, AdamWConfig{});
  EXPECT_THROW(adamw_step(p, g, st, 1e-3), Error);
}

TEST(Schedule, StepDecay) {
  const ScheduleConfig s;
  for (std::size_t e = 0; e < 5; ++e) EXPECT_DOUBLE_EQ(schedule_lr(s, 1e-3, 1e-9, e), 1e-3);
  EXPECT_NEAR(schedule_lr(s, 1e-3, 1e-9, 5), 1e-4, 1e-18);
  EXPECT_NEAR(schedule_lr(s, 1e-3, 1e-9, 10), 1e-5, 1e-18);
  EXPECT_DOUBLE_EQ(schedule_lr(s, 1e-3, 1e-5, 40), 1e-5);
}

TEST(Schedule, PlateauNeverFiresOnImprovement) {
  ScheduleConfig s;
  s.kind = ScheduleKind::plateau;
  std::vector<double> h;
  for (int e = 0; e < 40; ++e) {
    EXPECT_DOUBLE_EQ(schedule_lr(s, 1e-3, 1e-6, h.size(), h), 1e-3);
    h.push_back(0.5 + 0.01 * e);
  }
}

TEST(Schedule, PlateauFiresAfterPatience) {
  ScheduleConfig s;
  s.kind = ScheduleKind::plateau;
  s.patience_epochs = 2;
  const std::vector<double> h{0.7, 0.7, 0.7};
  EXPECT_DOUBLE_EQ(schedule_lr(s, 1e-3, 1e-6, 2, h), 1e-3);
  EXPECT_NEAR(schedule_lr(s, 1e-3, 1e-6, 3, h), 1e-4, 1e-18);
}

TEST(Schedule, JsonRoundTrip) {
  ScheduleConfig s;
  s.kind = ScheduleKind::plateau;
  s.patience_epochs = 3;
  EXPECT_EQ(nlohmann::json(s).get<ScheduleConfig>(), s);
}

TEST(EarlyStop, RisingLossHaltsAfterPatience) {
  EarlyStopping es(3);
  const std::vector<double> losses{1.0, 0.9, 0.8, 0.85, 0.9, 0.95, 1.0};
  std::size_t stopped = losses.size();
  for (std::size_t e = 0; e < losses.size(); ++e)
    if (es.update(losses[e])) {
      stopped = e;
      break;
    }
  EXPECT_EQ(stopped, 5u);
  EXPECT_DOUBLE_EQ(es.best(), 0.8);
}

TEST(EarlyStop, ZeroPatienceDisables) {
  EarlyStopping es(0);
  for (int e = 0; e < 100; ++e) EXPECT_FALSE(es.update(double(e)));
}
