#include <gtest/gtest.h>

#include <cmath>

#include "mrcn/ops.hpp"

using namespace mrcn;

namespace {

// Runs a single op on bound inputs; returns the graph so values/grads can be read.
struct OneOp {
  Graph<double> g;
  NodeId out = 0;
  std::vector<NodeId> ins;

  OneOp(std::unique_ptr<Op<double>> op, const std::vector<Tensor<double>>& xs) {
    std::map<std::string, Tensor<double>> feed;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const std::string name = "x" + std::to_string(i);
      ins.push_back(g.input(name));
      feed[name] = xs[i];
    }
    out = g.add(std::move(op), ins);
    feed_ = feed;
  }
  const Tensor<double>& run(bool training = false) {
    g.forward(feed_, training);
    return g.value(out);
  }

 private:
  std::map<std::string, Tensor<double>> feed_;
};

Tensor<double> t4(Dims d, std::vector<double> v) { return Tensor<double>(d, std::move(v)); }

}  // namespace

TEST(Upsample, NearestRepeats) {
  OneOp o(std::make_unique<UpsampleOp<double>>(2, UpsampleMode::nearest), {t4({1, 1, 2, 2}, {1, 2, 3, 4})});
  const auto& y = o.run();
  EXPECT_EQ(y.dims(), (Dims{1, 1, 4, 4}));
  EXPECT_EQ(y.values(), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Upsample, BilinearHalfPixelCenters) {
  OneOp o(std::make_unique<UpsampleOp<double>>(2, UpsampleMode::bilinear), {t4({1, 1, 1, 2}, {0, 4})});
  // rows collapse to one source row; cols: src = -0.25 -> 0, 0.25, 0.75, 1.25 -> 1
  const auto& y = o.run();
  EXPECT_EQ(y.dims(), (Dims{1, 1, 2, 4}));
  const std::vector<double> row{0, 1, 3, 4};
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(y.at(0, 0, i, j), row[j]);
}

TEST(Upsample, RejectsFactorOne) {
  EXPECT_THROW(UpsampleOp<double>(1, UpsampleMode::nearest), ConfigError);
}

TEST(MaxPool, ValuesAndFirstIndexOnTies) {
  OneOp o(std::make_unique<MaxPool2Op<double>>(), {t4({1, 1, 2, 4}, {5, 5, 1, 2, 5, 5, 3, 0})});
  const auto& y = o.run();
  EXPECT_EQ(y.values(), (std::vector<double>{5, 3}));
  // gradient of sum(y * c) goes to the first maximum only
  Graph<double> h;
  h.params().declare("x", Dims{1, 1, 2, 4}, ParamRole::variable).value = t4({1, 1, 2, 4}, {5, 5, 1, 2, 5, 5, 3, 0});
  const auto xv = h.add(std::make_unique<VariableOp<double>>("x"), {});
  const auto p = h.add(std::make_unique<MaxPool2Op<double>>(), {xv});
  const auto ci = h.input("c");
  const auto s = h.add(std::make_unique<WeightedSumOp<double>>(), {p, ci});
  h.forward({{"c", t4({1, 1, 1, 2}, {10, 20})}}, true);
  h.params().zero_grad();
  h.backward(s);
  EXPECT_EQ(h.params().at("x").grad.values(), (std::vector<double>{10, 0, 0, 0, 0, 0, 20, 0}));
}

TEST(MaxPool, OddSizeIsShapeError) {
  OneOp o(std::make_unique<MaxPool2Op<double>>(), {Tensor<double>(Dims{1, 1, 3, 4})});
  EXPECT_THROW(o.run(), ShapeError);
}

TEST(BatchNorm, InferenceUsesRunningStats) {
  Graph<double> g;
  auto& ps = g.params();
  ps.declare("g", Dims{1, 2, 1, 1}, ParamRole::bn_scale).value = t4({1, 2, 1, 1}, {2, 1});
  ps.declare("b", Dims{1, 2, 1, 1}, ParamRole::bn_shift).value = t4({1, 2, 1, 1}, {1, 0});
  ps.declare("m", Dims{1, 2, 1, 1}, ParamRole::bn_running_mean).value = t4({1, 2, 1, 1}, {1, -1});
  ps.declare("v", Dims{1, 2, 1, 1}, ParamRole::bn_running_var).value = t4({1, 2, 1, 1}, {4, 1});
  const auto x = g.input("x");
  const auto y = g.add(std::make_unique<BatchNormOp<double>>("g", "b", "m", "v", BatchNormConfig{1e-12, 0.1}), {x});
  g.forward({{"x", t4({1, 2, 1, 2}, {3, 5, 0, 1})}}, false);
  const auto& v = g.value(y);
  EXPECT_NEAR(v[0], 2 * (3 - 1) / 2.0 + 1, 1e-9);
  EXPECT_NEAR(v[1], 2 * (5 - 1) / 2.0 + 1, 1e-9);
  EXPECT_NEAR(v[2], 1, 1e-9);
  EXPECT_NEAR(v[3], 2, 1e-9);
  EXPECT_EQ(ps.at("m").value[0], 1.0);
}

TEST(BatchNorm, TrainingNormalizesAndUpdatesRunningStats) {
  Graph<double> g;
  auto& ps = g.params();
  ps.declare("g", Dims{1, 1, 1, 1}, ParamRole::bn_scale);
  ps.declare("b", Dims{1, 1, 1, 1}, ParamRole::bn_shift);
  ps.declare("m", Dims{1, 1, 1, 1}, ParamRole::bn_running_mean);
  ps.declare("v", Dims{1, 1, 1, 1}, ParamRole::bn_running_var);
  const auto x = g.input("x");
  const auto y = g.add(std::make_unique<BatchNormOp<double>>("g", "b", "m", "v", BatchNormConfig{1e-5, 0.1}), {x});
  // batch of 2 samples, 2 pixels each: values 1,2,3,4 -> mean 2.5, biased var 1.25
  g.forward({{"x", t4({2, 1, 1, 2}, {1, 2, 3, 4})}}, true);
  const auto& v = g.value(y);
  double s = 0, ss = 0;
  for (double e : v.values()) {
    s += e;
    ss += e * e;
  }
  EXPECT_NEAR(s / 4, 0, 1e-12);
  EXPECT_NEAR(ss / 4, 1.25 / (1.25 + 1e-5), 1e-12);
  EXPECT_NEAR(ps.at("m").value[0], 0.1 * 2.5, 1e-12);
  EXPECT_NEAR(ps.at("v").value[0], 0.9 + 0.1 * (5.0 / 3.0), 1e-12);
}

TEST(BatchNorm, SingleValuePerChannelFailsInTraining) {
  Graph<double> g;
  auto& ps = g.params();
  ps.declare("g", Dims{1, 1, 1, 1}, ParamRole::bn_scale);
  ps.declare("b", Dims{1, 1, 1, 1}, ParamRole::bn_shift);
  ps.declare("m", Dims{1, 1, 1, 1}, ParamRole::bn_running_mean);
  ps.declare("v", Dims{1, 1, 1, 1}, ParamRole::bn_running_var);
  const auto x = g.input("x");
  g.add(std::make_unique<BatchNormOp<double>>("g", "b", "m", "v"), {x});
  EXPECT_THROW(g.forward({{"x", t4({1, 1, 1, 1}, {1})}}, true), ShapeError);
  EXPECT_NO_THROW(g.forward({{"x", t4({1, 1, 1, 1}, {1})}}, false));
}

TEST(Activations, EluAndRectifier) {
  const auto x = t4({1, 1, 1, 4}, {-2, -0.5, 0, 3});
  OneOp e(std::make_unique<EluOp<double>>(), {x});
  const auto& ye = e.run();
  EXPECT_DOUBLE_EQ(ye[0], std::expm1(-2.0));
  EXPECT_DOUBLE_EQ(ye[1], std::expm1(-0.5));
  EXPECT_DOUBLE_EQ(ye[2], 0);
  EXPECT_DOUBLE_EQ(ye[3], 3);
  OneOp r(std::make_unique<RectifierOp<double>>(), {x});
  EXPECT_EQ(r.run().values(), (std::vector<double>{0, 0, 0, 3}));
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  const auto x = t4({1, 3, 1, 2}, {1, 1000, 2, 1001, 3, 1002});
  OneOp o(std::make_unique<SoftmaxOp<double>>(), {x});
  const auto& y = o.run();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(y.at(0, 0, 0, i), std::exp(1.0) / z, 1e-12);
    EXPECT_NEAR(y.at(0, 1, 0, i), std::exp(2.0) / z, 1e-12);
    EXPECT_NEAR(y.at(0, 2, 0, i), std::exp(3.0) / z, 1e-12);
  }
}

TEST(MaskedCrossEntropy, HandValue) {
  // two pixels, one unlabeled
  const auto y = t4({1, 2, 1, 2}, {0.25, 0.5, 0.75, 0.5});
  const auto t = t4({1, 2, 1, 2}, {0, 1, 1, 0});
  const auto m = t4({1, 1, 1, 2}, {1, 0});
  OneOp o(std::make_unique<MaskedCrossEntropyOp<double>>(), {y, t, m});
  EXPECT_NEAR(o.run()[0], -std::log(0.75), 1e-12);
}

TEST(MaskedCrossEntropy, ClampsAndEmptyMask) {
  const auto y = t4({1, 2, 1, 1}, {1, 0});
  const auto t = t4({1, 2, 1, 1}, {0, 1});
  OneOp o(std::make_unique<MaskedCrossEntropyOp<double>>(), {y, t, t4({1, 1, 1, 1}, {1})});
  EXPECT_NEAR(o.run()[0], -std::log(kLogClamp), 1e-9);
  OneOp e(std::make_unique<MaskedCrossEntropyOp<double>>(), {y, t, t4({1, 1, 1, 1}, {0})});
  EXPECT_EQ(e.run()[0], 0.0);
}

TEST(MaskedCrossEntropy, MaskShapeChecked) {
  const auto y = Tensor<double>(Dims{1, 2, 2, 2});
  OneOp o(std::make_unique<MaskedCrossEntropyOp<double>>(), {y, y, Tensor<double>(Dims{1, 1, 2, 1})});
  EXPECT_THROW(o.run(), ShapeError);
}

TEST(Argmax, LowestIndexWinsTies) {
  // pixels: (1,1,0) (5,5,1) (2,9,9)
  const auto s = t4({1, 3, 1, 3}, {1, 5, 2, 1, 5, 9, 0, 1, 9});
  EXPECT_EQ(argmax_map(s).values(), (std::vector<std::uint8_t>{0, 0, 1}));
}

TEST(Structural, ConcatAddMean) {
  const auto a = t4({1, 1, 1, 2}, {1, 2});
  const auto b = t4({1, 1, 1, 2}, {3, 5});
  OneOp c(std::make_unique<ConcatOp<double>>(), {a, b});
  EXPECT_EQ(c.run().values(), (std::vector<double>{1, 2, 3, 5}));
  OneOp s(std::make_unique<AddOp<double>>(), {a, b});
  EXPECT_EQ(s.run().values(), (std::vector<double>{4, 7}));
  OneOp m(std::make_unique<MeanOp<double>>(), {a, b});
  EXPECT_EQ(m.run().values(), (std::vector<double>{2, 3.5}));
  OneOp bad(std::make_unique<AddOp<double>>(), {a, t4({1, 2, 1, 1}, {0, 0})});
  EXPECT_THROW(bad.run(), ShapeError);
}

TEST(ConvGeometry, TransposedExtentAndOutDims) {
  EXPECT_EQ(transposed_out_extent(4, 8, 2, 4), 16u);
  const auto o = conv_out_dims(7, 9, 3, 1, 2);
  EXPECT_EQ(o.h, 4u);
  EXPECT_EQ(o.w, 5u);
}
