#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "unseg/segnet.hpp"
#include "unseg/synthetic.hpp"

using namespace unseg;
using unseg::testing::random_array;

namespace {

HyperParams tiny(std::uint64_t seed = 0) {
  HyperParams hp;
  hp.layers = 2;
  hp.feature_dim = 6;
  hp.max_clusters = 7;
  hp.seed = seed;
  return hp;
}

}  // namespace

TEST(InitParams, ShapesFollowLayersAndDims) {
  HyperParams hp;
  const auto net = init_params(hp);
  ASSERT_EQ(net.layers(), 3u);
  EXPECT_EQ(net.weights.conv_kernels[0].shape(), (Shape{100, 3, 3, 3}));
  EXPECT_EQ(net.weights.conv_kernels[2].shape(), (Shape{100, 100, 3, 3}));
  EXPECT_EQ(net.weights.bn_gamma.size(), 4u);
  EXPECT_EQ(net.weights.bn_gamma[3].shape(), (Shape{100}));
  EXPECT_EQ(net.weights.classifier.shape(), (Shape{100, 100}));
  net.momentum.for_each([](const std::string&, const DenseArray<float>& a) {
    for (float v : a.values()) EXPECT_EQ(v, 0.0f);
  });
}

TEST(InitParams, XavierBoundsAndConstants) {
  HyperParams hp;
  const auto net = init_params(hp);
  const double b1 = std::sqrt(6.0 / 927.0);
  EXPECT_NEAR(b1, 0.0804, 1e-4);
  double max_abs = 0.0;
  for (float v : net.weights.conv_kernels[0].values()) max_abs = std::max(max_abs, std::abs(double(v)));
  EXPECT_LE(max_abs, b1);
  EXPECT_GT(max_abs, 0.9 * b1);  // draws actually span the range
  const double b2 = std::sqrt(6.0 / 1800.0);
  for (float v : net.weights.conv_kernels[1].values()) EXPECT_LE(std::abs(v), b2);
  const double bc = std::sqrt(6.0 / 200.0);
  for (float v : net.weights.classifier.values()) EXPECT_LE(std::abs(v), bc);
  for (const auto& b : net.weights.conv_biases)
    for (float v : b.values()) EXPECT_EQ(v, 0.0f);
  for (const auto& g : net.weights.bn_gamma)
    for (float v : g.values()) EXPECT_EQ(v, 1.0f);
  for (const auto& b : net.weights.bn_beta)
    for (float v : b.values()) EXPECT_EQ(v, 0.0f);
}

TEST(InitParams, SeedDeterminesParameters) {
  EXPECT_EQ(init_params(tiny(4)).weights, init_params(tiny(4)).weights);
  EXPECT_GT(max_param_distance(init_params(tiny(4)).weights, init_params(tiny(5)).weights), 0.0);
  // Float and double draws agree up to rounding.
  EXPECT_LT(max_param_distance(init_params<double>(tiny(4)).weights,
                               init_params<float>(tiny(4)).weights.cast<double>()),
            1e-7);
}

TEST(Forward, ResponseShape) {
  std::mt19937_64 rng(1);
  const auto hp = tiny();
  const auto img = random_array<float>({3, 5, 9}, rng, 0.0, 1.0);
  const auto r = forward(img, init_params(hp), hp);
  EXPECT_EQ(r.response.values.shape(), (Shape{7, 5, 9}));
  EXPECT_EQ(r.features.shape(), (Shape{6, 5, 9}));
  EXPECT_TRUE(r.response.normalized);
}

TEST(Forward, RejectsBadInput) {
  const auto hp = tiny();
  const auto net = init_params(hp);
  EXPECT_THROW(forward(DenseArray<float>({1, 4, 4}), net, hp), InvalidArgument);
  EXPECT_THROW(forward(DenseArray<float>({3, 0, 4}), net, hp), InvalidArgument);
  auto other = hp;
  other.max_clusters = 8;
  EXPECT_THROW(forward(DenseArray<float>({3, 4, 4}), net, other), InvalidArgument);
}

TEST(Forward, ConstantImageGivesSpatiallyUniformResponse) {
  const auto hp = tiny(2);
  const auto img = synthetic::constant_image(6, 5, {0.3f, 0.6f, 0.1f});
  const auto r = forward(img, init_params(hp), hp);
  for (std::size_t c = 0; c < 7; ++c)
    for (float v : r.response.values.channel(c)) EXPECT_EQ(v, r.response.values.channel(c)[0]);
}

TEST(Forward, EqualsExplicitComposition) {
  std::mt19937_64 rng(3);
  const auto hp = tiny(3);
  const auto net = init_params<double>(hp);
  const auto img = random_array<double>({3, 8, 8}, rng, 0.0, 1.0);
  const auto& w = net.weights;
  DenseArray<double> x = img;
  for (std::size_t m = 0; m < 2; ++m)
    x = batch_norm_channels(relu(conv2d(x, w.conv_kernels[m], w.conv_biases[m], kNetworkPadding)), w.bn_gamma[m],
                            w.bn_beta[m], hp.eps)
            .output;
  const auto want = batch_norm_channels(linear_channels(x, w.classifier), w.bn_gamma[2], w.bn_beta[2], hp.eps).output;
  const auto got = forward(img, net, hp).response.values;
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
}

TEST(AssignLabels, ArgmaxWithLowestIndexTies) {
  ResponseMap<double> r{DenseArray<double>({3, 1, 2}, std::vector<double>{0.2, 0.5, 0.9, 0.5, 0.1, 0.5}), true};
  const auto l = assign_labels(r);
  EXPECT_EQ(l.data, (std::vector<std::int32_t>{1, 0}));
  r.normalized = false;
  EXPECT_THROW(assign_labels(r), InvalidArgument);
}

TEST(AssignLabels, MatchesPerPixelScan) {
  std::mt19937_64 rng(4);
  ResponseMap<float> r{random_array<float>({7, 6, 5}, rng), true};
  // Force some exact ties.
  for (std::size_t n = 0; n < 30; n += 4) r.values.channel(3)[n] = r.values.channel(5)[n] = 9.0f;
  const auto l = assign_labels(r);
  for (std::size_t n = 0; n < 30; ++n) {
    std::int32_t best = 0;
    for (std::int32_t i = 1; i < 7; ++i)
      if (r.values.channel(static_cast<std::size_t>(i))[n] > r.values.channel(static_cast<std::size_t>(best))[n])
        best = i;
    EXPECT_EQ(l.data[n], best);
  }
}

TEST(AssignLabels, InvariantToPerChannelShiftOfRawResponse) {
  std::mt19937_64 rng(5);
  const auto raw = random_array<double>({7, 6, 6}, rng, -2.0, 2.0);
  auto shifted = raw;
  const auto shift = random_array<double>({7}, rng, -10.0, 10.0);
  for (std::size_t c = 0; c < 7; ++c)
    for (auto& v : shifted.channel(c)) v += shift[c];
  const DenseArray<double> g({7}, 1.0), b({7});
  const ResponseMap<double> a{batch_norm_channels(raw, g, b).output, true};
  const ResponseMap<double> s{batch_norm_channels(shifted, g, b).output, true};
  EXPECT_EQ(assign_labels(a), assign_labels(s));
}

TEST(AssignLabels, LabelCountWithinOneToQ) {
  std::mt19937_64 rng(6);
  const auto hp = tiny(6);
  const auto img = random_array<float>({3, 10, 10}, rng, 0.0, 1.0);
  const auto n = assign_labels(forward(img, init_params(hp), hp).response).unique_count();
  EXPECT_GE(n, 1u);
  EXPECT_LE(n, 7u);
}

TEST(Backward, ZeroCotangentGivesZeroGradients) {
  std::mt19937_64 rng(7);
  const auto hp = tiny(7);
  const auto net = init_params<double>(hp);
  const auto img = random_array<double>({3, 6, 6}, rng, 0.0, 1.0);
  const auto f = forward(img, net, hp);
  const auto g = backward(img, net, f.cache, DenseArray<double>({7, 6, 6}));
  g.for_each([](const std::string&, const DenseArray<double>& a) {
    for (double v : a.values()) EXPECT_EQ(v, 0.0);
  });
}

TEST(Backward, LinearInCotangent) {
  std::mt19937_64 rng(8);
  const auto hp = tiny(8);
  const auto net = init_params<double>(hp);
  const auto img = random_array<double>({3, 6, 6}, rng, 0.0, 1.0);
  const auto f = forward(img, net, hp);
  const auto u = random_array<double>({7, 6, 6}, rng);
  auto u2 = u;
  for (auto& v : u2.values()) v *= 2.0;
  const auto g1 = unseg::testing::flatten(backward(img, net, f.cache, u));
  const auto g2 = unseg::testing::flatten(backward(img, net, f.cache, u2));
  for (std::size_t k = 0; k < g1.size(); ++k)
    for (std::size_t i = 0; i < g1[k].size(); ++i) EXPECT_NEAR(g2[k][i], 2.0 * g1[k][i], 1e-12 + 1e-12 * std::abs(g1[k][i]));
}

TEST(Backward, FullNetworkGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed);
    const auto hp = unseg::testing::small_hp(seed);
    const auto point = unseg::testing::flatten(init_params<double>(hp).weights);
    const auto img = unseg::testing::kink_free_image(rng, 8, 8, point, hp, 1e-4);
    const auto f = unseg::testing::network_as_function(img, hp);
    const auto coarse = gradient_check(f, point, 1e-4, seed);
    const auto fine = gradient_check(f, point, 1e-5, seed);
    EXPECT_LT(fine.max_rel_error, 1e-6) << "seed " << seed << " input " << fine.input_index << " coord "
                                        << fine.coordinate << " analytic " << fine.analytic << " numeric "
                                        << fine.numeric;
    // Central-difference error of a correct gradient shrinks as step².
    EXPECT_LT(fine.max_rel_error, coarse.max_rel_error / 20 + 1e-9) << "seed " << seed;
    EXPECT_LT(transpose_check(f, point, 1e-5, seed + 10), 1e-6);
  }
}

TEST(Backward, StaleCacheIsRejected) {
  std::mt19937_64 rng(10);
  const auto hp = tiny(10);
  auto net = init_params<double>(hp);
  const auto img = random_array<double>({3, 5, 5}, rng, 0.0, 1.0);
  const auto f = forward(img, net, hp);
  const DenseArray<double> u({7, 5, 5});
  sgd_momentum_step(net, net.weights.zeros_like(), 0.1, 0.9);
  EXPECT_THROW(backward(img, net, f.cache, u), InvalidState);
  const auto f2 = forward(img, net, hp);
  EXPECT_THROW(backward(random_array<double>({3, 5, 6}, rng), net, f2.cache, u), InvalidState);
}

TEST(Sgd, FirstStepAndUnrolledSecondStep) {
  const auto hp = tiny(11);
  auto net = init_params<double>(hp);
  const auto theta0 = net.weights;
  ParamGrads<double> g = net.weights.zeros_like();
  std::mt19937_64 rng(11);
  g.for_each([&](const std::string&, DenseArray<double>& a) { a = random_array<double>(a.shape(), rng); });
  const double lr = 0.1, mom = 0.9;
  sgd_momentum_step(net, g, lr, mom);
  auto t = unseg::testing::flatten(net.weights);
  auto t0 = unseg::testing::flatten(theta0);
  auto gf = unseg::testing::flatten(g);
  for (std::size_t k = 0; k < t.size(); ++k)
    for (std::size_t i = 0; i < t[k].size(); ++i) EXPECT_NEAR(t[k][i], t0[k][i] - lr * gf[k][i], 1e-15);
  sgd_momentum_step(net, g, lr, mom);
  t = unseg::testing::flatten(net.weights);
  for (std::size_t k = 0; k < t.size(); ++k)
    for (std::size_t i = 0; i < t[k].size(); ++i)
      EXPECT_NEAR(t[k][i], t0[k][i] - lr * gf[k][i] - lr * (mom * gf[k][i] + gf[k][i]), 1e-14);
  EXPECT_EQ(net.generation, 2u);
}

TEST(Sgd, ZeroGradientLeavesParametersUnchanged) {
  const auto hp = tiny(12);
  auto net = init_params(hp);
  const auto before = net.weights;
  sgd_momentum_step(net, net.weights.zeros_like(), 0.1, 0.9);
  EXPECT_EQ(net.weights, before);
}

TEST(Sgd, NonFiniteGradientNamesParameterAndChangesNothing) {
  const auto hp = tiny(13);
  auto net = init_params(hp);
  const auto before = net.weights;
  auto g = net.weights.zeros_like();
  g.conv_kernels[0][0] = 1.0f;
  g.bn_beta[1][2] = std::nanf("");
  try {
    sgd_momentum_step(net, g, 0.1, 0.9);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bn_beta[1]"), std::string::npos) << e.what();
  }
  EXPECT_EQ(net.weights, before);
  EXPECT_EQ(net.generation, 0u);
}
