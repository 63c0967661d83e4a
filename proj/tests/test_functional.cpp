#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dscsim/functional.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dscsim;
using testutil::random_qarray;
using testutil::random_qtensor;
using testutil::uniform_int;

namespace {

LayerSpec spec(LayerKind kind, int k, int s, int p = 0) {
  LayerSpec l;
  l.kind = kind;
  l.kernel = k;
  l.stride = s;
  l.out_channels = p;
  return l;
}

QTensor from_acc(const oracle::Acc& a, QParams out) {
  QTensor q(a.shape, out);
  for (std::size_t i = 0; i < a.v.size(); ++i) q.data[i] = oracle::post(a.v[i], a.frac, nullptr, 0, out.frac_bits);
  return q;
}

std::vector<std::int64_t> to_i64(const oracle::Acc& a) {
  return {a.v.begin(), a.v.end()};
}

QArray ones(std::vector<int> dims, int frac = 0) {
  QArray a;
  a.data.assign(product(dims), static_cast<q16>(1 << frac));
  a.dims = std::move(dims);
  a.params = {frac};
  return a;
}

double max_rel(const Tensor& a, const Tensor& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / std::max(1.0, std::fabs(b.data[i])));
  return worst;
}

}  // namespace

// ---------------------------------------------------------------------------
// Standard convolution

TEST(ConvStandard, OneByOneIdentity) {
  QTensor in({1, 1, 1}, {8});
  in.data = {123};
  const QArray w = ones({1, 1, 1, 1}, 8);
  EXPECT_EQ(conv_standard(in, w, nullptr, 1, {8}).data, std::vector<q16>{123});
}

TEST(ConvStandard, CenterImpulseSumsChannels) {
  std::mt19937_64 g(1);
  const QTensor in = random_qtensor(g, {6, 6, 3}, 8, 5000);
  QArray w{{1, 3, 3, 3}, std::vector<q16>(27, 0), {0}};
  for (int n = 0; n < 3; ++n) w.data[std::size_t(n) * 9 + 4] = 1;
  const QTensor out = conv_standard(in, w, nullptr, 1, {8});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(out.at(0, y, x), in.at(0, y, x) + in.at(1, y, x) + in.at(2, y, x));
}

TEST(ConvStandard, FiveByFiveMatchesOracle) {
  std::mt19937_64 g(2);
  const QTensor in = random_qtensor(g, {5, 5, 3}, 10);
  const QArray w = random_qarray(g, {4, 3, 3, 3}, 12);
  const QArray b = random_qarray(g, {4}, 9);
  const auto ref = oracle::conv(spec(LayerKind::StandardConv, 3, 1, 4), in, w, &b);
  EXPECT_EQ(conv_standard_acc(in, w, &b, 1).data, to_i64(ref));
  EXPECT_EQ(conv_standard(in, w, &b, 1, {7}), from_acc(ref, {7}));

  const Tensor rin = dequantize(in);
  const auto rw = dequantize(w), rb = dequantize(b);
  Tensor ref_real = oracle::conv_real(spec(LayerKind::StandardConv, 3, 1, 4), rin, rw);
  for (int p = 0; p < 4; ++p)
    for (int i = 0; i < 25; ++i) ref_real.data[std::size_t(p) * 25 + i] += rb[std::size_t(p)];
  EXPECT_LE(max_rel(conv_standard(rin, rw, rb, 3, 1, 4), ref_real), 1e-6);
}

TEST(ConvStandard, RandomInstancesMatchOracle) {
  std::mt19937_64 g(3);
  for (int t = 0; t < 250; ++t) {
    const int m = uniform_int(g, 1, 12), n = uniform_int(g, 1, 6), p = uniform_int(g, 1, 8);
    const int k = uniform_int(g, 0, 1) ? 3 : uniform_int(g, 0, 1) ? 1 : 5;
    const int s = uniform_int(g, 1, 2);
    const QTensor in = random_qtensor(g, {m, m, n}, uniform_int(g, 0, 15));
    const QArray w = random_qarray(g, {p, n, k, k}, uniform_int(g, 0, 15));
    const QArray b = random_qarray(g, {p}, uniform_int(g, -8, 15));
    const bool with_bias = t % 3 != 0;
    const auto ref = oracle::conv(spec(LayerKind::StandardConv, k, s, p), in, w, with_bias ? &b : nullptr);
    ASSERT_EQ(conv_standard_acc(in, w, with_bias ? &b : nullptr, s).data, to_i64(ref)) << "instance " << t;
    const QParams out{uniform_int(g, 0, 15)};
    ASSERT_EQ(conv_standard(in, w, with_bias ? &b : nullptr, s, out), from_acc(ref, out));
  }
}

TEST(ConvStandard, ShapeErrors) {
  std::mt19937_64 g(4);
  const QTensor in = random_qtensor(g, {4, 4, 3}, 8);
  EXPECT_THROW(conv_standard(in, random_qarray(g, {2, 4, 3, 3}, 8), nullptr, 1, {8}), ShapeError);
  EXPECT_THROW(conv_standard(in, random_qarray(g, {2, 3, 3, 3}, 8), nullptr, 3, {8}), ShapeError);
  const QArray short_bias = random_qarray(g, {1}, 8);
  EXPECT_THROW(conv_standard(in, random_qarray(g, {2, 3, 3, 3}, 8), &short_bias, 1, {8}), ShapeError);
}

// ---------------------------------------------------------------------------
// Depthwise convolution

TEST(ConvDepthwise, AllOnesInteriorIsLocalSum) {
  std::mt19937_64 g(5);
  const QTensor in = random_qtensor(g, {5, 5, 2}, 4, 1000);
  const QTensor out = conv_depthwise(in, ones({2, 1, 3, 3}), nullptr, 1, {4});
  for (int c = 0; c < 2; ++c) {
    int sum = 0;
    for (int y = 1; y <= 3; ++y)
      for (int x = 1; x <= 3; ++x) sum += in.at(c, y, x);
    EXPECT_EQ(out.at(c, 2, 2), sum);
  }
}

TEST(ConvDepthwise, ZeroChannelGivesBias) {
  std::mt19937_64 g(6);
  QTensor in = random_qtensor(g, {6, 6, 2}, 8);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) in.at(1, y, x) = 0;
  const QArray w = random_qarray(g, {2, 1, 3, 3}, 10);
  const QArray b{{2}, {100, -77}, {8}};
  const QTensor out = conv_depthwise(in, w, &b, 1, {8});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) EXPECT_EQ(out.at(1, y, x), -77);
}

TEST(ConvDepthwise, StrideTwoMatchesOracle) {
  std::mt19937_64 g(7);
  const QTensor in = random_qtensor(g, {8, 8, 8}, 9);
  const QArray w = random_qarray(g, {8, 1, 3, 3}, 13);
  const auto ref = oracle::conv(spec(LayerKind::DepthwiseConv, 3, 2), in, w, nullptr);
  EXPECT_EQ(ref.shape, (TensorShape{4, 4, 8}));
  EXPECT_EQ(conv_depthwise_acc(in, w, nullptr, 2).data, to_i64(ref));
}

TEST(ConvDepthwise, RandomInstancesMatchOracle) {
  std::mt19937_64 g(8);
  for (int t = 0; t < 250; ++t) {
    const int m = uniform_int(g, 1, 14), n = uniform_int(g, 1, 12);
    const int k = uniform_int(g, 0, 3) ? 3 : 5;
    const int s = uniform_int(g, 1, 2);
    const QTensor in = random_qtensor(g, {m, m, n}, uniform_int(g, 0, 15));
    const QArray w = random_qarray(g, {n, 1, k, k}, uniform_int(g, 0, 15));
    const QArray b = random_qarray(g, {n}, uniform_int(g, -8, 15));
    const auto ref = oracle::conv(spec(LayerKind::DepthwiseConv, k, s), in, w, &b);
    ASSERT_EQ(conv_depthwise_acc(in, w, &b, s).data, to_i64(ref)) << "instance " << t;
    const Tensor rin = dequantize(in);
    const Tensor got = conv_depthwise(rin, dequantize(w), {}, k, s);
    ASSERT_LE(max_rel(got, oracle::conv_real(spec(LayerKind::DepthwiseConv, k, s), rin, dequantize(w))), 1e-6);
  }
}

TEST(ConvDepthwise, ChannelIsolation) {
  std::mt19937_64 g(9);
  for (int t = 0; t < 50; ++t) {
    const int n = uniform_int(g, 2, 8);
    QTensor in = random_qtensor(g, {7, 7, n}, 8);
    const QArray w = random_qarray(g, {n, 1, 3, 3}, 10);
    const QTensor base = conv_depthwise(in, w, nullptr, 1, {6});
    const int c = uniform_int(g, 0, n - 1);
    in.at(c, uniform_int(g, 0, 6), uniform_int(g, 0, 6)) ^= 0x1234;
    const QTensor pert = conv_depthwise(in, w, nullptr, 1, {6});
    const std::size_t plane = 49;
    for (int o = 0; o < n; ++o) {
      if (o == c) continue;
      for (std::size_t i = 0; i < plane; ++i) ASSERT_EQ(pert.data[o * plane + i], base.data[o * plane + i]);
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise convolution

TEST(ConvPointwise, SingleChannelDoubles) {
  std::mt19937_64 g(10);
  const QTensor in = random_qtensor(g, {4, 4, 1}, 8, 10000);
  const QArray w{{1, 1, 1, 1}, {2}, {0}};
  const QTensor out = conv_pointwise_direct(in, w, nullptr, {8});
  for (std::size_t i = 0; i < in.data.size(); ++i) EXPECT_EQ(out.data[i], 2 * in.data[i]);
}

TEST(ConvPointwise, IdentityCopies) {
  std::mt19937_64 g(11);
  const QTensor in = random_qtensor(g, {5, 5, 6}, 8);
  QArray w{{6, 6, 1, 1}, std::vector<q16>(36, 0), {0}};
  for (int i = 0; i < 6; ++i) w.data[std::size_t(i) * 6 + i] = 1;
  EXPECT_EQ(conv_pointwise_direct(in, w, nullptr, {8}), in);
}

TEST(ConvPointwise, WideInputMatchesOracle) {
  std::mt19937_64 g(12);
  const QTensor in = random_qtensor(g, {7, 7, 320}, 10);
  const QArray w = random_qarray(g, {8, 320, 1, 1}, 14);
  const QArray b = random_qarray(g, {8}, 12);
  const auto ref = oracle::conv(spec(LayerKind::PointwiseConv, 1, 1, 8), in, w, &b);
  EXPECT_EQ(conv_pointwise_acc(in, w, &b).data, to_i64(ref));
  EXPECT_EQ(conv_pointwise_direct(in, w, &b, {5}), from_acc(ref, {5}));
}

TEST(ConvPointwise, RandomInstancesMatchOracle) {
  std::mt19937_64 g(13);
  for (int t = 0; t < 250; ++t) {
    const int m = uniform_int(g, 1, 14), n = uniform_int(g, 1, 96), p = uniform_int(g, 1, 32);
    const QTensor in = random_qtensor(g, {m, m, n}, uniform_int(g, 0, 15));
    const QArray w = random_qarray(g, {p, n, 1, 1}, uniform_int(g, 0, 15));
    const QArray b = random_qarray(g, {p}, uniform_int(g, -8, 15));
    const auto ref = oracle::conv(spec(LayerKind::PointwiseConv, 1, 1, p), in, w, &b);
    ASSERT_EQ(conv_pointwise_acc(in, w, &b).data, to_i64(ref)) << "instance " << t;
  }
}

// ---------------------------------------------------------------------------
// Tiled pointwise

TEST(TiledPointwise, SingleTileIsDirect) {
  std::mt19937_64 g(14);
  const QTensor in = random_qtensor(g, {6, 6, 32}, 9);
  const QArray w = random_qarray(g, {9, 32, 1, 1}, 12);
  const TilePlan plan = make_tile_plan(32, 9);
  EXPECT_EQ(plan.order.size(), 1u);
  EXPECT_EQ(conv_pointwise_tiled(in, w, nullptr, plan, {8}), conv_pointwise_direct(in, w, nullptr, {8}));
}

TEST(TiledPointwise, TwoInputTilesPartialsSumToDirect) {
  std::mt19937_64 g(15);
  const QTensor in = random_qtensor(g, {7, 7, 64}, 9);
  const QArray w = random_qarray(g, {9, 64, 1, 1}, 12);
  const TilePlan plan = make_tile_plan(64, 9);
  ASSERT_EQ(plan.input_tiles.size(), 2u);
  const TiledAccResult r = conv_pointwise_tiled_acc(in, w, nullptr, plan);
  ASSERT_EQ(r.partials.size(), 2u);
  const AccTensor direct = conv_pointwise_acc(in, w, nullptr);
  for (std::size_t i = 0; i < direct.data.size(); ++i)
    EXPECT_EQ(r.partials[0].data[i] + r.partials[1].data[i], direct.data[i]);
  EXPECT_EQ(r.result.data, direct.data);
}

TEST(TiledPointwise, LastLayerTileGrid) {
  const TilePlan plan = make_tile_plan(320, 1280);
  EXPECT_EQ(plan.input_tiles.size(), 10u);
  EXPECT_EQ(plan.output_tiles.size(), 143u);  // 142 full tiles of 9 and one of 2
  EXPECT_EQ(plan.output_tiles.back(), (ChannelTile{1278, 2}));
  EXPECT_EQ(plan.order.size(), 1430u);
  EXPECT_NO_THROW(validate_plan(plan, 320, 1280));
}

TEST(TiledPointwise, ThirtySixOutputsSplitIntoFourTiles) {
  // the MxMx36 example: four output groups of nine
  const TilePlan plan = make_tile_plan(64, 36);
  EXPECT_EQ(plan.output_tiles.size(), 4u);
  for (const auto& t : plan.output_tiles) EXPECT_EQ(t.size, 9);
  std::mt19937_64 g(16);
  const QTensor in = random_qtensor(g, {5, 5, 64}, 8);
  const QArray w = random_qarray(g, {36, 64, 1, 1}, 11);
  EXPECT_EQ(conv_pointwise_tiled(in, w, nullptr, plan, {3}), conv_pointwise_direct(in, w, nullptr, {3}));
}

TEST(TiledPointwise, RandomEqualsDirect) {
  std::mt19937_64 g(17);
  for (int t = 0; t < 250; ++t) {
    const int m = uniform_int(g, 1, 14), n = uniform_int(g, 1, 96), p = uniform_int(g, 1, 32);
    const QTensor in = random_qtensor(g, {m, m, n}, uniform_int(g, 0, 15));
    const QArray w = random_qarray(g, {p, n, 1, 1}, uniform_int(g, 0, 15));
    const QArray b = random_qarray(g, {p}, uniform_int(g, -8, 15));
    const TilePlan plan = make_tile_plan(n, p, uniform_int(g, 1, 32), uniform_int(g, 1, 9));
    const QParams out{uniform_int(g, -2, 15)};
    ASSERT_EQ(conv_pointwise_tiled(in, w, &b, plan, out), conv_pointwise_direct(in, w, &b, out)) << "instance " << t;

    const Tensor rin = dequantize(in);
    const auto rw = dequantize(w), rb = dequantize(b);
    ASSERT_LE(max_rel(conv_pointwise_tiled(rin, rw, rb, p, plan), conv_pointwise_direct(rin, rw, rb, p)), 1e-6);
  }
}

TEST(TiledPointwise, RejectsNonPartition) {
  TilePlan plan = make_tile_plan(64, 18);
  EXPECT_NO_THROW(validate_plan(plan, 64, 18));
  TilePlan dup = plan;
  dup.order.push_back(dup.order.front());
  EXPECT_THROW(validate_plan(dup, 64, 18), ShapeError);
  TilePlan gap = plan;
  gap.input_tiles[1].begin = 33;
  gap.input_tiles[1].size = 31;
  EXPECT_THROW(validate_plan(gap, 64, 18), ShapeError);
  TilePlan wide = make_tile_plan(64, 18, 64, 9);
  EXPECT_THROW(validate_plan(wide, 64, 18), ShapeError);
}

// ---------------------------------------------------------------------------
// ReLU and pooling

TEST(Relu, TensorModes) {
  QTensor q({1, 1, 3}, {8});
  q.data = {-5, 1600, 100};
  EXPECT_EQ(relu(q, Activation::Relu6).data, (std::vector<q16>{0, 1536, 100}));
  EXPECT_EQ(relu(q, Activation::Relu).data, (std::vector<q16>{0, 1600, 100}));
  EXPECT_EQ(relu(q, Activation::None).data, q.data);
}

TEST(Pool, ConstantAverageIsConstant) {
  for (int w : {2, 3, 7}) {
    QTensor q({7, 7, 2}, {8});
    std::fill(q.data.begin(), q.data.end(), q16{-333});
    for (q16 v : pool(q, LayerKind::AvgPool, w, 1).data) EXPECT_EQ(v, -333);
  }
}

TEST(Pool, GlobalAverageOfOneHot) {
  QTensor q({7, 7, 1}, {8});
  q.at(0, 3, 4) = 49 * 256;
  EXPECT_EQ(pool(q, LayerKind::AvgPool, 7, 1).data, std::vector<q16>{256});
  Tensor r({7, 7, 1});
  r.at(0, 0, 0) = 49.0;
  EXPECT_NEAR(pool(r, LayerKind::AvgPool, 7, 1).data[0], 1.0, 1e-12);
}

TEST(Pool, MaxOfRampIsBottomRight) {
  QTensor q({6, 6, 1}, {0});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) q.at(0, y, x) = static_cast<q16>(y * 6 + x);
  const QTensor out = pool(q, LayerKind::MaxPool, 2, 2);
  for (int oy = 0; oy < 3; ++oy)
    for (int ox = 0; ox < 3; ++ox) EXPECT_EQ(out.at(0, oy, ox), (2 * oy + 1) * 6 + 2 * ox + 1);
}

TEST(Pool, RandomMatchesOracle) {
  std::mt19937_64 g(18);
  for (int t = 0; t < 200; ++t) {
    const int m = uniform_int(g, 2, 12), w = uniform_int(g, 1, m), s = uniform_int(g, 1, 3);
    const LayerKind kind = t % 2 ? LayerKind::AvgPool : LayerKind::MaxPool;
    const QTensor in = random_qtensor(g, {m, m, uniform_int(g, 1, 5)}, 8);
    ASSERT_EQ(pool(in, kind, w, s), oracle::pool(spec(kind, w, s), in));
  }
}

TEST(Pool, WindowLargerThanInput) {
  QTensor q({3, 3, 1}, {0});
  EXPECT_THROW(pool(q, LayerKind::AvgPool, 4, 1), ShapeError);
}

// ---------------------------------------------------------------------------
// Whole network

TEST(RunNetwork, IdentityMicroNet) {
  const NetworkSpec net = testutil::parse("input 4x4x5\n4x4x5 pointwise - 5 1 1 bn=no relu=none\n");
  NetworkWeights w;
  LayerWeights lw;
  lw.weights = QArray{{5, 5, 1, 1}, std::vector<q16>(25, 0), {0}};
  for (int i = 0; i < 5; ++i) lw.weights->data[std::size_t(i) * 5 + i] = 1;
  lw.output = {9};
  w.layers.push_back(lw);
  std::mt19937_64 g(19);
  const QTensor x = random_qtensor(g, {4, 4, 5}, 9);
  EXPECT_EQ(run_network(net, w, x).output, x);
}

TEST(RunNetwork, ToyMatchesInterpreter) {
  const NetworkSpec net = testutil::toy_net();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const NetworkWeights w = testutil::seeded_weights(net, seed);
    const QTensor x = testutil::seeded_input(net, seed * 13);
    const QuantizedRun r = run_network(net, w, x);
    EXPECT_EQ(r.output, oracle::run(net, w, x));
    ASSERT_EQ(r.activations.size(), net.layers.size());
    EXPECT_EQ(r.macs.macs, network_cost(net).total_macs);
  }
}

TEST(RunNetwork, PooledResidualNetMatchesInterpreter) {
  const NetworkSpec net = testutil::parse(
      "input 9x9x3\n"
      "9x9x3 conv3x3 - 16 1 1\n"
      "9x9x16 bottleneck 2 16 2 1\n"
      "9x9x16 maxpool3x3 - - 1 2\n"
      "4x4x16 pointwise - 7 1 1 bn=no relu=relu\n"
      "4x4x7 avgpool2x2 - - 1 1\n");
  const NetworkWeights w = testutil::seeded_weights(net, 21);
  const QTensor x = testutil::seeded_input(net, 22);
  EXPECT_EQ(run_network(net, w, x).output, oracle::run(net, w, x));
}

TEST(RunNetwork, SeparableMacCount) {
  const NetworkSpec net =
      testutil::parse("input 12x12x20\n12x12x20 depthwise3x3 - - 1 1\n12x12x20 pointwise - 30 1 1\n");
  const NetworkWeights w = testutil::seeded_weights(net, 3);
  const QuantizedRun r = run_network(net, w, testutil::seeded_input(net, 4));
  EXPECT_EQ(r.macs.macs, ops_dsc(12, 3, 20, 30));
}

TEST(RunNetwork, Deterministic) {
  const NetworkSpec net = testutil::toy_net();
  const NetworkWeights w = testutil::seeded_weights(net, 9);
  const QTensor x = testutil::seeded_input(net, 10);
  EXPECT_EQ(run_network(net, w, x).activations, run_network(net, w, x).activations);
  const Tensor xr = dequantize(x);
  EXPECT_EQ(run_network(net, w, xr).output.data, run_network(net, w, xr).output.data);
}

TEST(RunNetwork, ShapeAndWeightErrors) {
  const NetworkSpec net = testutil::toy_net();
  NetworkWeights w = testutil::seeded_weights(net, 1);
  std::mt19937_64 g(20);
  EXPECT_THROW(run_network(net, w, random_qtensor(g, {8, 8, 24}, 8)), ShapeError);
  w.layers.pop_back();
  EXPECT_THROW(run_network(net, w, testutil::seeded_input(net, 2)), Error);
}

TEST(RunNetwork, MobileNetV2EndToEnd) {
  const NetworkSpec net = build_mobilenet_v2();
  const NetworkWeights w = testutil::seeded_weights(net, 42);
  const QuantizedRun r = run_network(net, w, testutil::seeded_input(net, 7), false);
  EXPECT_EQ(r.output.shape, (TensorShape{1, 1, 1000}));
  Count conv_macs = 0;
  for (const auto& l : net.layers)
    if (is_conv(l.kind)) conv_macs += layer_cost(l).macs;
  EXPECT_EQ(r.macs.macs, conv_macs);  // the counter sees multiplier work only
  EXPECT_TRUE(r.activations.empty());
}
