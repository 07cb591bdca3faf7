#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "binrep/error.hpp"
#include "binrep/presets.hpp"
#include "binrep/schedule.hpp"
#include "support/gradcheck.hpp"

using namespace binrep;

namespace {

// Tiny separable 2-class problem on 1x4x4 images: the class decides which
// half of the image is bright.
DatasetPair toy_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.3);
  auto make = [&](std::size_t count) {
    Dataset ds;
    ds.images = Tensor(Shape{count, 1, 4, 4});
    ds.labels.resize(count);
    ds.num_classes = 2;
    for (std::size_t i = 0; i < count; ++i) {
      const int c = static_cast<int>(i % 2);
      ds.labels[i] = c;
      for (std::size_t p = 0; p < 16; ++p) {
        const bool bright = (p < 8) == (c == 0);
        ds.images[i * 16 + p] = (bright ? 0.7 : 0.0) + noise(rng);
      }
    }
    return ds;
  };
  return {make(n), make(n / 2)};
}

Network toy_net() {
  std::vector<Layer> ls;
  ls.emplace_back(FlattenLayer{});
  ls.emplace_back(FcLayer{Parameter("fc1.weight", Tensor(Shape{8, 16})),
                          Parameter("fc1.bias", Tensor(Shape{8}), false)});
  ls.emplace_back(BoundedLayer{Parameter("act1.slope", Tensor(Shape{8}, 1.0), false)});
  ls.emplace_back(FcLayer{Parameter("fc2.weight", Tensor(Shape{2, 8})),
                          Parameter("fc2.bias", Tensor(Shape{2}), false)});
  return Network(Shape{1, 4, 4}, std::move(ls));
}

std::vector<double> snapshot(const Network& net) {
  std::vector<double> v;
  for (const Parameter* p : net.parameters())
    v.insert(v.end(), p->value.values().begin(), p->value.values().end());
  return v;
}

}  // namespace

TEST(GrowthLoss, Examples) {
  EXPECT_EQ(growth_loss(std::vector<double>{1, 1, 1}), 0.0);
  EXPECT_NEAR(growth_loss(std::vector<double>{std::exp(1.0)}), -1.0, 1e-15);
  EXPECT_NEAR(growth_loss(std::vector<double>{2, -2}), -1.386294, 1e-6);
  EXPECT_THROW(growth_loss(std::vector<double>{1, 0}), SingularityError);
}

TEST(GrowthUpdate, Examples) {
  std::vector<double> k{1.0, -3.0};
  growth_update(k, 0.0, 0.5);
  EXPECT_EQ(k, (std::vector<double>{1.0, -3.0}));

  k = {1.0};
  growth_update(k, 0.01, 0.5);
  EXPECT_DOUBLE_EQ(k[0], 1.01);

  k = {0.01};
  growth_update(k, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(k[0], 0.015);
}

TEST(GrowthUpdate, GrowsMagnitudeKeepsSign) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-5, 5), lam(1e-6, 10);
  for (int i = 0; i < 10000; ++i) {
    double k0 = u(rng);
    if (k0 == 0.0) continue;
    std::vector<double> k{k0};
    growth_update(k, lam(rng), 0.5);
    EXPECT_GT(std::abs(k[0]), std::abs(k0));
    EXPECT_EQ(std::signbit(k[0]), std::signbit(k0));
  }
}

TEST(Init, SlopesBiasesAndDeterminism) {
  Network a = build_preset("lenet-small"), b = build_preset("lenet-small");
  init_network(a, 5);
  init_network(b, 5);
  EXPECT_EQ(snapshot(a), snapshot(b));
  for (const auto& l : a.layers()) {
    if (const auto* r = std::get_if<BoundedLayer>(&l))
      for (double k : r->slopes.value.values()) EXPECT_EQ(k, 1.0);
    if (const auto* f = std::get_if<FcLayer>(&l))
      for (double v : f->bias.value.values()) EXPECT_EQ(v, 0.0);
  }
  Network c = build_preset("lenet-small");
  init_network(c, 6);
  EXPECT_NE(snapshot(a), snapshot(c));
}

TEST(Init, XavierVariance) {
  std::vector<Layer> ls;
  ls.emplace_back(FcLayer{Parameter("w", Tensor(Shape{1000, 1000})), Parameter("b", Tensor(Shape{1000}))});
  Network net(Shape{1000}, std::move(ls));
  init_network(net, 1);
  const auto& w = std::get<FcLayer>(net.layers()[0]).weight.value;
  const double mean = std::accumulate(w.values().begin(), w.values().end(), 0.0) / w.size();
  double var = 0;
  for (double v : w.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  const double expected = 2.0 / 2000.0;
  EXPECT_LT(std::abs(var - expected) / expected, 0.1);
  const double bound = std::sqrt(6.0 / 2000.0);
  for (double v : w.values()) EXPECT_LE(std::abs(v), bound);
}

TEST(GrowthConfig, Validation) {
  GrowthConfig g;
  EXPECT_NO_THROW(g.validate());
  g.phase2_lambda = g.phase1_lambda / 2;
  EXPECT_THROW(g.validate(), ConfigError);
  g = GrowthConfig{};
  g.growth_cap = 0;
  EXPECT_THROW(g.validate(), ConfigError);
  g = GrowthConfig{};
  g.phase1_lambda = -1;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(TrainTwoPhase, LearnsToyProblemAndBinarizes) {
  auto data = toy_data(400, 7);
  Network net = toy_net();
  init_network(net, 7);
  TrainOptions opt;
  opt.growth.phase1_epochs = 3;
  opt.growth.phase2_epochs = 6;
  opt.growth.phase2_lambda = 0.2;
  opt.solver.batch_size = 20;
  opt.solver.learning_rate = 0.05;
  int calls = 0;
  opt.on_epoch = [&](const EpochRecord&) { ++calls; };
  const TrainState st = train_two_phase(net, data.train, data.test, opt);
  EXPECT_EQ(calls, 9);
  ASSERT_EQ(st.history.size(), 9u);
  EXPECT_EQ(st.phase, Phase::Frozen);
  EXPECT_EQ(st.history.front().phase, Phase::One);
  EXPECT_EQ(st.history.back().phase, Phase::Two);
  EXPECT_EQ(st.growth_updates, 6u * 20u);
  EXPECT_GE(st.history.back().accuracy_step, 0.95);
  EXPECT_EQ(st.history.back().binarization.layers.size(), 1u);
  // Mean |k| never decreases during phase 2.
  for (std::size_t e = 4; e < st.history.size(); ++e)
    EXPECT_GE(st.history[e].mean_abs_slope, st.history[e - 1].mean_abs_slope);
}

TEST(TrainTwoPhase, DeterministicUnderSeed) {
  auto data = toy_data(200, 8);
  auto run = [&] {
    Network net = toy_net();
    init_network(net, 8);
    TrainOptions opt;
    opt.growth.phase1_epochs = 1;
    opt.growth.phase2_epochs = 1;
    opt.solver.batch_size = 16;
    train_two_phase(net, data.train, data.test, opt);
    return snapshot(net);
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainTwoPhase, NoGrowthKeepsSlopesNearBaseline) {
  auto data = toy_data(200, 9);
  Network net = toy_net();
  init_network(net, 9);
  TrainOptions opt;
  opt.growth.phase1_lambda = 0;
  opt.growth.phase2_lambda = 0;
  opt.growth.phase1_epochs = 2;
  opt.growth.phase2_epochs = 2;
  opt.solver.batch_size = 16;
  const auto st = train_two_phase(net, data.train, data.test, opt);
  EXPECT_EQ(st.growth_updates, 0u);
  EXPECT_LT(net.mean_abs_slope(), 10.0);
}

TEST(TrainTwoPhase, DecouplingIgnoresLearningRate) {
  // With everything but the slopes frozen, a phase-2 epoch moves the slopes
  // only through growth_update, whatever the learning rate.
  auto data = toy_data(64, 10);
  auto run = [&](double lr) {
    Network net = toy_net();
    init_network(net, 10);
    for (Parameter* p : net.parameters()) p->trainable = p->name == "act1.slope";
    TrainOptions opt;
    opt.growth.phase1_epochs = 0;
    opt.growth.phase2_epochs = 1;
    opt.solver.batch_size = 64;
    opt.solver.learning_rate = lr;
    opt.solver.momentum = 0;
    // Zero task gradient on the slopes: push every unit into saturation.
    auto& fc = std::get<FcLayer>(net.layers()[1]);
    fc.weight.value.fill(0.0);
    fc.bias.value.fill(5.0);
    train_two_phase(net, data.train, data.test, opt);
    return std::get<BoundedLayer>(net.layers()[2]).slopes.value[0];
  };
  EXPECT_DOUBLE_EQ(run(0.1), run(0.05));
  EXPECT_DOUBLE_EQ(run(0.1), 1.01);
}

TEST(TrainTwoPhase, NanLossAborts) {
  auto data = toy_data(40, 11);
  data.train.images[0] = std::numeric_limits<double>::quiet_NaN();
  Network net = toy_net();
  init_network(net, 11);
  TrainOptions opt;
  opt.solver.batch_size = 40;
  try {
    train_two_phase(net, data.train, data.test, opt);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("fc1.weight"), std::string::npos);
  }
}

TEST(FinetuneHead, OnlyHeadChanges) {
  auto data = toy_data(100, 12);
  Network net = toy_net();
  init_network(net, 12);
  const auto before = net.parameters();
  std::vector<Tensor> values;
  for (const Parameter* p : before) values.push_back(p->value);
  SolverConfig s;
  s.batch_size = 10;
  finetune_head(net, data.train, s, 2, 1);
  const auto after = net.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    const bool head = after[i]->name.rfind("fc2.", 0) == 0;
    if (head) {
      EXPECT_NE(after[i]->value, values[i]) << after[i]->name;
    } else {
      EXPECT_EQ(after[i]->value, values[i]) << after[i]->name;
    }
    EXPECT_TRUE(after[i]->trainable);
  }
  for (const auto& l : net.layers())
    if (const auto* b = std::get_if<BoundedLayer>(&l)) EXPECT_EQ(b->mode, ActivationMode::Step);
}

TEST(Ternarize, SignRuleAndFirstLayer) {
  Network net = toy_net();
  init_network(net, 13);
  auto& fc2 = std::get<FcLayer>(net.layers()[3]);
  for (std::size_t i = 0; i < fc2.weight.value.size(); ++i) fc2.weight.value[i] = 0.0;
  fc2.weight.value[0] = 0.3;
  fc2.weight.value[1] = -0.7;
  const Tensor first = std::get<FcLayer>(net.layers()[1]).weight.value;
  ternarize_weights(net);
  EXPECT_EQ(fc2.weight.value[0], 1.0);
  EXPECT_EQ(fc2.weight.value[1], -1.0);
  EXPECT_EQ(fc2.weight.value[2], 1.0);
  EXPECT_FALSE(fc2.weight.trainable);
  EXPECT_EQ(std::get<FcLayer>(net.layers()[1]).weight.value, first);
}

TEST(Ternarize, FinetuneKeepsWeightsBinary) {
  auto data = toy_data(200, 14);
  std::vector<Layer> ls;
  ls.emplace_back(FlattenLayer{});
  ls.emplace_back(FcLayer{Parameter("fc1.weight", Tensor(Shape{8, 16})), Parameter("fc1.bias", Tensor(Shape{8}), false)});
  ls.emplace_back(BoundedLayer{Parameter("act1.slope", Tensor(Shape{8}, 1.0), false)});
  ls.emplace_back(FcLayer{Parameter("fc2.weight", Tensor(Shape{8, 8})), Parameter("fc2.bias", Tensor(Shape{8}), false)});
  ls.emplace_back(BoundedLayer{Parameter("act2.slope", Tensor(Shape{8}, 1.0), false)});
  ls.emplace_back(FcLayer{Parameter("fc3.weight", Tensor(Shape{2, 8})), Parameter("fc3.bias", Tensor(Shape{2}), false)});
  Network net(Shape{1, 4, 4}, std::move(ls));
  init_network(net, 14);
  TrainOptions opt;
  opt.solver.batch_size = 20;
  const Tensor first = std::get<FcLayer>(net.layers()[1]).weight.value;
  ternarize_and_finetune(net, data.train, opt, 2);
  for (std::size_t i : {3u, 5u}) {
    for (double w : std::get<FcLayer>(net.layers()[i]).weight.value.values())
      EXPECT_TRUE(w == 1.0 || w == -1.0);
  }
  EXPECT_EQ(std::get<FcLayer>(net.layers()[1]).weight.value, first);
  for (const auto& l : net.layers())
    if (const auto* b = std::get_if<BoundedLayer>(&l)) EXPECT_EQ(b->mode, ActivationMode::Step);
}
