#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "binrep/activation.hpp"
#include "binrep/error.hpp"
#include "binrep/presets.hpp"
#include "binrep/schedule.hpp"
#include "binrep/transform.hpp"
#include "support/gradcheck.hpp"

using namespace binrep;
using binrep::testing::random_tensor;

namespace {

BoundedRectifierLayer layer(std::vector<double> k, ActivationMode m = ActivationMode::Linear) {
  return BoundedRectifierLayer{std::move(k), m, 1};
}

Tensor one(double y) { return Tensor(Shape{1, 1}, std::vector<double>{y}); }

}  // namespace

TEST(BoundedForward, Examples) {
  EXPECT_EQ(bounded_forward(one(0.0), layer({3.7}))[0], 0.5);
  EXPECT_EQ(bounded_forward(one(0.0), layer({-2.0}))[0], 0.5);
  EXPECT_EQ(bounded_forward(one(1.0), layer({2.0}))[0], 1.0);
  EXPECT_NEAR(bounded_forward(one(0.2), layer({1.0}))[0], 0.7, 1e-15);
}

TEST(BoundedForward, ChannelMismatch) {
  EXPECT_THROW(bounded_forward(Tensor(Shape{2, 3}), layer({1.0, 1.0})), DimensionError);
  EXPECT_THROW(bounded_forward(Tensor(Shape{2, 3, 4, 4}), layer({1.0})), DimensionError);
}

TEST(BoundedForward, RangeAndMonotonicity) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const double k = u(rng);
    const Tensor y = random_tensor(rng, {1, 64}, -3, 3);
    const auto out = bounded_forward(y, layer(std::vector<double>(64, k)));
    for (double v : out.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    const double a = u(rng), b = a + std::abs(u(rng));
    const double fa = bounded_value(k, a), fb = bounded_value(k, b);
    if (k > 0) EXPECT_LE(fa, fb);
    if (k < 0) EXPECT_GE(fa, fb);
  }
}

TEST(BoundedForward, ConvergesToStep) {
  for (double y : {-0.3, -1e-3, 2e-3, 0.8}) {
    for (double k : {20.0, 1e3, 1e5}) {
      if (k * std::abs(y) <= 10) continue;
      EXPECT_LT(std::abs(bounded_value(k, y) - (step_fires(k, y) ? 1.0 : 0.0)), 1e-9);
    }
  }
}

TEST(BoundedBackward, Examples) {
  BoundedRectifier r(layer({1.0}));
  r.forward(one(0.2));
  auto g = r.backward(one(1.0));
  EXPECT_EQ(g.grad_input[0], 1.0);
  EXPECT_NEAR(g.grad_slopes[0], 0.2, 1e-15);

  BoundedRectifier sat(layer({2.0}));
  sat.forward(one(1.0));
  g = sat.backward(one(1.0));
  EXPECT_EQ(g.grad_input[0], 0.0);
  EXPECT_EQ(g.grad_slopes[0], 0.0);
}

TEST(BoundedBackward, BoundaryIsZero) {
  // k*y + 0.5 == 1 exactly: strict indicator, no gradient.
  BoundedRectifier r(layer({1.0}));
  r.forward(one(0.5));
  EXPECT_EQ(r.backward(one(1.0)).grad_input[0], 0.0);
}

TEST(BoundedBackward, WithoutForward) {
  BoundedRectifier r(layer({1.0}));
  EXPECT_THROW(r.backward(one(1.0)), StateError);
}

TEST(BoundedBackward, SlopeGradientSumsOverChannel) {
  BoundedRectifier r(layer({1.0, 0.5}));
  const Tensor y(Shape{1, 2, 1, 2}, {0.1, 0.2, 0.3, 4.0});
  r.forward(y);
  const auto g = r.backward(Tensor(Shape{1, 2, 1, 2}, 1.0));
  EXPECT_NEAR(g.grad_slopes[0], 0.3, 1e-15);
  EXPECT_NEAR(g.grad_slopes[1], 0.3, 1e-15);  // 4.0 saturates
}

TEST(BoundedBackward, FiniteDifferences) {
  std::mt19937_64 rng(22);
  for (int c = 0; c < 20; ++c) {
    Parameter y("y", random_tensor(rng, {2, 3, 2, 2}, -0.4, 0.4));
    Parameter k("k", random_tensor(rng, {3}, 0.3, 1.0));
    const Tensor proj = random_tensor(rng, {2, 3, 2, 2});
    EXPECT_LT(binrep::testing::max_gradient_error(
                  {&y, &k},
                  [&](Tape& t, auto& id) {
                    return t.dot(t.bounded(id[0], id[1], ActivationMode::Linear), proj);
                  }),
              1e-4);
  }
}

TEST(StepForward, Examples) {
  EXPECT_EQ(step_forward(one(5), layer({1.0}, ActivationMode::Step))[0], 1.0);
  EXPECT_EQ(step_forward(one(5), layer({-1.0}, ActivationMode::Step))[0], 0.0);
  EXPECT_EQ(step_forward(one(-5), layer({-1.0}, ActivationMode::Step))[0], 1.0);
  EXPECT_EQ(step_forward(one(0.0), layer({1.0}, ActivationMode::Step))[0], 0.0);
  EXPECT_EQ(step_forward(one(3.0), layer({0.0}, ActivationMode::Step))[0], 0.0);
}

TEST(StepForward, AgreesOnSaturatedUnits) {
  std::mt19937_64 rng(23);
  const std::vector<double> k{8.0, -6.0, 12.0};
  const Tensor y = random_tensor(rng, {50, 3, 4, 4}, -1, 1);
  const Tensor b = bounded_forward(y, layer(k));
  const Tensor s = step_forward(y, layer(k, ActivationMode::Step));
  std::size_t saturated = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i] == 0.0 || b[i] == 1.0) {
      ++saturated;
      EXPECT_EQ(s[i], b[i]);
    }
    EXPECT_TRUE(s[i] == 0.0 || s[i] == 1.0);
  }
  EXPECT_GT(saturated, b.size() * 8 / 10);
}

namespace {

Network three_layer(std::mt19937_64& rng) {
  std::vector<Layer> ls;
  ls.emplace_back(FcLayer{Parameter("fc1.weight", random_tensor(rng, {6, 5})),
                          Parameter("fc1.bias", random_tensor(rng, {6}))});
  ls.emplace_back(BoundedLayer{Parameter("act1.slope", random_tensor(rng, {6}, -3, 3))});
  ls.emplace_back(FcLayer{Parameter("fc2.weight", random_tensor(rng, {4, 6})),
                          Parameter("fc2.bias", random_tensor(rng, {4}))});
  ls.emplace_back(BoundedLayer{Parameter("act2.slope", random_tensor(rng, {4}, 0.2, 4))});
  ls.emplace_back(FcLayer{Parameter("fc3.weight", random_tensor(rng, {3, 4})),
                          Parameter("fc3.bias", random_tensor(rng, {3}))});
  return Network(Shape{5}, std::move(ls));
}

}  // namespace

TEST(Absorb, UnitSlopesUnchanged) {
  std::mt19937_64 rng(24);
  Network net = three_layer(rng);
  for (auto& l : net.layers())
    if (auto* b = std::get_if<BoundedLayer>(&l)) b->slopes.value.fill(1.0);
  const Network out = absorb_slopes(net);
  for (std::size_t i = 0; i < net.parameters().size(); ++i)
    EXPECT_EQ(net.parameters()[i]->value, out.parameters()[i]->value);
}

TEST(Absorb, ScalarExample) {
  std::vector<Layer> ls;
  ls.emplace_back(FcLayer{Parameter("fc1.weight", Tensor(Shape{1, 1}, 1.0)),
                          Parameter("fc1.bias", Tensor(Shape{1}, 0.1))});
  ls.emplace_back(BoundedLayer{Parameter("act1.slope", Tensor(Shape{1}, 3.0))});
  ls.emplace_back(FcLayer{Parameter("fc2.weight", Tensor(Shape{1, 1}, 1.0)),
                          Parameter("fc2.bias", Tensor(Shape{1}))});
  const Network net(Shape{1}, std::move(ls));
  const Network out = absorb_slopes(net);
  const auto& fc = std::get<FcLayer>(out.layers()[0]);
  EXPECT_EQ(fc.weight.value[0], 3.0);
  EXPECT_NEAR(fc.bias.value[0], 0.3, 1e-15);
  EXPECT_EQ(std::get<BoundedLayer>(out.layers()[1]).slopes.value[0], 1.0);
  std::mt19937_64 rng(25);
  const Tensor x = random_tensor(rng, {50, 1}, -1, 1);
  const Tensor a = net.infer(x), b = out.infer(x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Absorb, PreservesFunctionBothModes) {
  std::mt19937_64 rng(26);
  const Network net = three_layer(rng);
  const Network out = absorb_slopes(net);
  const Tensor x = random_tensor(rng, {100, 5}, -2, 2);
  for (auto mode : {ActivationMode::Linear, ActivationMode::Step}) {
    const Tensor a = net.infer(x, mode), b = out.infer(x, mode);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(Absorb, ConvNetPreservesLogits) {
  Network net = build_preset("lenet-small", {0.5, "all"});
  init_network(net, 3);
  std::mt19937_64 rng(27);
  for (auto& l : net.layers())
    if (auto* b = std::get_if<BoundedLayer>(&l))
      for (double& k : b->slopes.value.values()) k = std::uniform_real_distribution<double>(0.5, 4)(rng);
  const Tensor x = random_tensor(rng, {20, 1, 28, 28}, 0, 1);
  const Tensor a = net.infer(x), b = absorb_slopes(net).infer(x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(Absorb, RequiresAffinePredecessor) {
  std::vector<Layer> ls;
  ls.emplace_back(BoundedLayer{Parameter("act1.slope", Tensor(Shape{3}, 1.0))});
  ls.emplace_back(FcLayer{Parameter("fc.weight", Tensor(Shape{2, 3})),
                          Parameter("fc.bias", Tensor(Shape{2}))});
  const Network net(Shape{3}, std::move(ls));
  EXPECT_THROW(absorb_slopes(net), TransformError);
}

namespace {

Network relu_net(std::mt19937_64& rng, std::size_t in, std::size_t hidden, std::size_t out) {
  std::vector<Layer> ls;
  ls.emplace_back(FcLayer{Parameter("fc1.weight", random_tensor(rng, {hidden, in})),
                          Parameter("fc1.bias", random_tensor(rng, {hidden}))});
  ls.emplace_back(ReluLayer{});
  ls.emplace_back(FcLayer{Parameter("fc2.weight", random_tensor(rng, {out, hidden})),
                          Parameter("fc2.bias", random_tensor(rng, {out}))});
  return Network(Shape{in}, std::move(ls));
}

}  // namespace

TEST(CastRelu, MatchesOnCalibration) {
  std::mt19937_64 rng(28);
  const Network src = relu_net(rng, 4, 16, 3);
  const Tensor calib = random_tensor(rng, {1000, 4}, -1, 1);
  const Network cast = cast_relu_net(src, calib);
  EXPECT_EQ(cast.rectifier_indices().size(), 1u);
  const Tensor a = src.infer(calib), b = cast.infer(calib);
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  EXPECT_LT(worst, 1e-6);
}

TEST(CastRelu, NoReluIsIdentity) {
  std::mt19937_64 rng(29);
  std::vector<Layer> ls;
  ls.emplace_back(FcLayer{Parameter("fc.weight", random_tensor(rng, {2, 3})),
                          Parameter("fc.bias", random_tensor(rng, {2}))});
  const Network src(Shape{3}, std::move(ls));
  const Tensor x = random_tensor(rng, {10, 3});
  EXPECT_EQ(src.infer(x), cast_relu_net(src, x).infer(x));
}

TEST(CastRelu, DegenerateLayer) {
  std::mt19937_64 rng(30);
  Network src = relu_net(rng, 3, 4, 2);
  auto& fc = std::get<FcLayer>(src.layers()[0]);
  fc.weight.value.fill(0.0);
  fc.bias.value.fill(0.0);
  EXPECT_THROW(cast_relu_net(src, random_tensor(rng, {10, 3})), DegenerateLayerError);
}
