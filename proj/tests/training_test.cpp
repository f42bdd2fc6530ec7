#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

#include "mrcn/training.hpp"

using namespace mrcn;

namespace {

ArchSpec tiny_spec() {
  ArchSpec s;
  s.variant = Variant::fusenet_low;
  s.patch_size = 4;
  s.bottleneck_hw = 1;
  s.num_classes = 4;
  return s;
}

std::vector<Scene> tiny_data() {
  SyntheticConfig c;
  c.tile_size = 64;
  c.num_classes = 4;
  c.label_fraction = 0.2;
  c.train_tiles = 1;
  c.validation_tiles = 1;
  c.test_tiles = 0;
  auto sc = synth_dataset(c, 2);
  const auto st = band_stats(sc);
  for (auto& s : sc) normalize_scene(s, st);
  return sc;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.batch_size = 8;
  t.max_epochs = 4;
  t.train_patches = 16;
  t.validation_patches = 16;
  t.lr_step_epochs = {2};
  t.seed = 3;
  return t;
}

FitResult fit_once(const std::vector<Scene>& sc, const TrainConfig& t) {
  Network<float> net(tiny_spec());
  Rng rng(5);
  glorot_init(net.params(), rng);
  return fit(net, sc, t);
}

}  // namespace

TEST(Schedule, StepDecay) {
  TrainConfig t;
  t.learning_rate = 0.01;
  t.lr_step_epochs = {60, 180};
  t.lr_factor = 0.1;
  EXPECT_DOUBLE_EQ(lr_at_epoch(t, 0), 0.01);
  EXPECT_DOUBLE_EQ(lr_at_epoch(t, 59), 0.01);
  EXPECT_NEAR(lr_at_epoch(t, 60), 0.001, 1e-15);
  EXPECT_NEAR(lr_at_epoch(t, 179), 0.001, 1e-15);
  EXPECT_NEAR(lr_at_epoch(t, 180), 0.0001, 1e-15);
}

TEST(Sgd, MomentumAndDecayOnKernelsOnly) {
  ParamStore<double> ps;
  ps.declare("w", Dims{1, 1, 1, 1}, ParamRole::conv_weight).value[0] = 1;
  ps.declare("b", Dims{1, 1, 1, 1}, ParamRole::bias).value[0] = 1;
  ps.declare("m", Dims{1, 1, 1, 1}, ParamRole::bn_running_mean).value[0] = 1;
  auto& fz = ps.declare("f", Dims{1, 1, 1, 1}, ParamRole::conv_weight);
  fz.value[0] = 1;
  fz.frozen = true;
  TrainConfig cfg;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.001;
  for (int step = 0; step < 2; ++step) {
    for (auto& [k, p] : ps) p.grad[0] = 0.5;
    sgd_momentum_step(ps, 0.1, cfg);
  }
  // step 1: g = 0.5 + 0.002, v = -0.0502; step 2: g = 0.5 + 0.002 * 0.9498, v = 0.9 v - 0.1 g
  EXPECT_NEAR(ps.at("w").value[0], 0.9498 - (0.9 * 0.0502 + 0.1 * (0.5 + 0.002 * 0.9498)), 1e-12);
  EXPECT_NEAR(ps.at("b").value[0], 1 - 0.05 - (0.045 + 0.05), 1e-12);
  EXPECT_EQ(ps.at("m").value[0], 1.0);
  EXPECT_EQ(ps.at("f").value[0], 1.0);
  for (auto& [k, p] : ps) EXPECT_EQ(p.grad[0], 0.0) << k;
  EXPECT_THROW(sgd_momentum_step(ps, 0.0, cfg), NumericError);
}

TEST(Fit, DeterministicAndRecordsHistory) {
  const auto sc = tiny_data();
  const auto t = tiny_train();
  const auto a = fit_once(sc, t);
  const auto b = fit_once(sc, t);
  ASSERT_EQ(a.history.size(), 4u);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  ASSERT_EQ(a.checkpoint.tensors.size(), b.checkpoint.tensors.size());
  for (std::size_t i = 0; i < a.checkpoint.tensors.size(); ++i) {
    EXPECT_EQ(a.checkpoint.tensors[i].second.values(), b.checkpoint.tensors[i].second.values());
  }
  EXPECT_DOUBLE_EQ(a.history[1].lr, 0.01);
  EXPECT_NEAR(a.history[2].lr, 0.001, 1e-15);
  for (const auto& r : a.history) EXPECT_TRUE(std::isfinite(r.train_loss));
  const auto csv = history_csv(a.history);
  EXPECT_EQ(csv.rfind("epoch,lr,train_loss,train_oa,val_oa\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
}

TEST(Fit, EarlyStoppingKeepsLatestBestEpoch) {
  const auto sc = tiny_data();
  auto t = tiny_train();
  t.max_epochs = 5;
  const auto r = fit_once(sc, t);
  double best = -1;
  std::size_t want = 0;
  for (const auto& h : r.history) {
    if (h.val_oa >= best) {
      best = h.val_oa;
      want = h.epoch;
    }
  }
  EXPECT_EQ(r.checkpoint.epoch, want);
  EXPECT_FLOAT_EQ(r.checkpoint.best_val_oa, static_cast<float>(best));

  t.early_stopping = false;
  EXPECT_EQ(fit_once(sc, t).checkpoint.epoch, 5u);
}

TEST(Fit, SeedChangesRun) {
  const auto sc = tiny_data();
  auto t = tiny_train();
  t.max_epochs = 1;
  const auto a = fit_once(sc, t);
  t.seed = 4;
  const auto b = fit_once(sc, t);
  EXPECT_NE(a.history[0].train_loss, b.history[0].train_loss);
}

TEST(Fit, NonFiniteLossStops) {
  const auto sc = tiny_data();
  Network<float> net(tiny_spec());
  Rng rng(5);
  glorot_init(net.params(), rng);
  net.params().at("head.w").value.fill(std::numeric_limits<float>::quiet_NaN());
  EXPECT_THROW(fit(net, sc, tiny_train()), NumericError);
}

TEST(Fit, NeedsValidationForEarlyStopping) {
  auto sc = tiny_data();
  sc.pop_back();
  EXPECT_THROW(fit_once(sc, tiny_train()), DataError);
}
