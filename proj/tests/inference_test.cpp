#include <gtest/gtest.h>

#include "mrcn/inference.hpp"
#include "mrcn/metrics.hpp"

using namespace mrcn;

namespace {

ArchSpec small_spec(Variant v = Variant::fusenet_low) {
  ArchSpec s;
  s.variant = v;
  s.patch_size = 8;
  s.bottleneck_hw = 2;
  return s;
}

// Random weights plus non-trivial running statistics.
void randomize(Network<float>& net, std::uint64_t seed) {
  Rng rng(seed);
  glorot_init(net.params(), rng);
  for (auto& [name, p] : net.params()) {
    if (p.role == ParamRole::bn_running_mean)
      for (auto& v : p.value.values()) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    if (p.role == ParamRole::bn_running_var)
      for (auto& v : p.value.values()) v = static_cast<float>(rng.uniform(0.5, 1.5));
  }
}

Scene test_scene(std::size_t size, std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.tile_size = size;
  Rng rng(seed);
  Scene s = synth_scene(cfg, make_appearance(cfg, seed), rng);
  BandStats st;
  st.min.fill(-0.5f);
  st.max.fill(1.5f);
  normalize_scene(s, st);
  return s;
}

}  // namespace

TEST(PlanAxis, WindowsCoverAndRespectOverlap) {
  const auto p = detail::plan_axis(400, 160, 48);
  ASSERT_GE(p.start.size(), 2u);
  EXPECT_EQ(p.own_begin.front(), 0u);
  EXPECT_EQ(p.own_end.back(), 400u);
  EXPECT_EQ(p.start.back() + 160, 400u);
  for (std::size_t i = 0; i < p.start.size(); ++i) {
    EXPECT_LT(p.own_begin[i], p.own_end[i]);
    if (i > 0) {
      EXPECT_GE(p.own_begin[i], p.start[i] + 48);
      EXPECT_EQ(p.own_begin[i], p.own_end[i - 1]);
    }
    if (i + 1 < p.start.size()) {
      EXPECT_LE(p.own_end[i], p.start[i] + 160 - 48);
    }
  }
}

TEST(PredictTile, SingleWindowEqualsSinglePass) {
  Network<float> net(small_spec());
  randomize(net, 1);
  const Scene s = test_scene(128, 2);
  const auto tiled = predict_tile(net, s.pan, s.ms);
  EXPECT_EQ(tiled.windows, 1u);
  EXPECT_EQ(tiled.scores.values(), predict_single_pass(net, s.pan, s.ms).values());
  EXPECT_EQ(tiled.labels.dims(), (Dims{1, 1, 128, 128}));
}

TEST(PredictTile, TiledEqualsSinglePassBitExact) {
  for (Variant v : {Variant::fusenet_low, Variant::fusenet_skip, Variant::net_bilinear, Variant::fusenet_high}) {
    Network<float> net(small_spec(v));
    randomize(net, 3);
    const Scene s = test_scene(192, 4);
    TileOptions opt;
    opt.window = 160;
    opt.batch = 3;
    const auto tiled = predict_tile(net, s.pan, s.ms, opt);
    ASSERT_GT(tiled.windows, 1u);
    const auto whole = predict_single_pass(net, s.pan, s.ms);
    // Every pixel is owned by a window where it has full context, so the
    // whole raster matches, not just the interior.
    EXPECT_EQ(tiled.scores.values(), whole.values()) << to_string(v);
  }
}

TEST(PredictTile, NonMultipleTileIsPadded) {
  Network<float> net(small_spec());
  randomize(net, 5);
  const Scene s = test_scene(200, 6);
  TileOptions opt;
  opt.window = 160;
  const auto tiled = predict_tile(net, s.pan, s.ms, opt);
  EXPECT_EQ(tiled.scores.dims(), (Dims{1, 6, 200, 200}));
  EXPECT_EQ(tiled.scores.values(), predict_single_pass(net, s.pan, s.ms).values());
}

TEST(PredictTile, TranslationByOneMsPixel) {
  Network<float> net(small_spec());
  randomize(net, 7);
  const Scene s = test_scene(192, 8);
  const auto base = predict_single_pass(net, s.pan, s.ms);
  // Drop the first 16 PAN rows (4 MS rows); the divisor is 16 so the
  // pooling grid stays aligned.
  const std::size_t shift = 16, H = 192, W = 192;
  Tensor<float> pan(Dims{1, 1, H - shift, W}), ms(Dims{1, 4, (H - shift) / 4, W / 4});
  std::copy_n(s.pan.data() + shift * W, pan.size(), pan.data());
  for (std::size_t b = 0; b < 4; ++b)
    std::copy_n(s.ms.plane(0, b) + (shift / 4) * (W / 4), ms.dims().plane(), ms.plane(0, b));
  const auto moved = predict_single_pass(net, pan, ms);
  const auto r = static_cast<std::size_t>(receptive_field(net.spec()));
  std::size_t compared = 0;
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t i = r + shift; i + r < H; ++i)
      for (std::size_t j = r; j + r < W; ++j) {
        ASSERT_EQ(moved.at(0, c, i - shift, j), base.at(0, c, i, j));
        ++compared;
      }
  EXPECT_GT(compared, 0u);
}

TEST(PredictTile, RejectsSmallWindow) {
  Network<float> net(small_spec());
  const Scene s = test_scene(256, 9);
  TileOptions opt;
  opt.window = 64;
  EXPECT_THROW(predict_tile(net, s.pan, s.ms, opt), ConfigError);
  opt.window = 100;
  EXPECT_THROW(predict_tile(net, s.pan, s.ms, opt), ConfigError);
}

TEST(PredictTile, DoesNotTouchParameters) {
  Network<float> net(small_spec());
  randomize(net, 10);
  const auto before = snapshot_params(net.params());
  const Scene s = test_scene(128, 11);
  predict_tile(net, s.pan, s.ms);
  const auto after = snapshot_params(net.params());
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].second.values(), after[i].second.values());
}

TEST(PerInstance, ReuseNetInstancesStitched) {
  ReuseNetConfig rc;
  rc.instances = 2;
  Network<float> net(small_spec(), rc);
  randomize(net, 12);
  const Scene s = test_scene(256, 13);
  TileOptions opt;
  opt.per_instance = true;
  opt.window = 256;
  const auto tp = predict_tile(net, s.pan, s.ms, opt);
  ASSERT_EQ(tp.instances.size(), 2u);
  EXPECT_EQ(tp.instances.back().values(), tp.scores.values());
  for (const auto& inst : tp.instances) {
    for (std::size_t i = 0; i < 256 * 256; i += 97) {
      double sum = 0;
      for (std::size_t c = 0; c < 6; ++c) sum += inst[c * 256 * 256 + i];
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(PerInstance, SingleInstanceAndNonRecurrent) {
  ReuseNetConfig rc;
  rc.instances = 1;
  Network<float> net(small_spec(), rc);
  randomize(net, 14);
  Rng rng(15);
  const auto pan = rng_uniform<float>(rng, 0, 1, Dims{1, 1, 32, 32});
  const auto ms = rng_uniform<float>(rng, 0, 1, Dims{1, 4, 8, 8});
  const auto per = per_instance_scores(net, pan, ms);
  ASSERT_EQ(per.size(), 1u);
  EXPECT_EQ(per[0].values(), net.scores(pan, ms).values());
  Network<float> plain(small_spec());
  EXPECT_THROW(per_instance_scores(plain, pan, ms), ConfigError);
}
