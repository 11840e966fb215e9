#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "unseg/pipeline.hpp"
#include "unseg/synthetic.hpp"

using namespace unseg;
using unseg::testing::random_array;

namespace {

HyperParams small(std::uint64_t seed = 0) {
  HyperParams hp;
  hp.layers = 2;
  hp.feature_dim = 8;
  hp.max_clusters = 8;
  hp.seed = seed;
  hp.max_iters = 20;
  hp.min_labels = 1;
  return hp;
}

LabelMap random_labels(std::size_t h, std::size_t w, int q, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, q - 1);
  LabelMap l(h, w);
  for (auto& v : l.data) v = d(rng);
  return l;
}

bool four_connected(const Mask& m) {
  Mask seen(m.height, m.width);
  std::size_t start = 0;
  while (start < m.size() && !m.data[start]) ++start;
  if (start == m.size()) return false;
  std::vector<std::size_t> stack{start};
  seen.data[start] = 1;
  std::size_t reached = 0;
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    ++reached;
    const std::size_t y = n / m.width, x = n % m.width;
    auto visit = [&](std::size_t k) {
      if (m.data[k] && !seen.data[k]) {
        seen.data[k] = 1;
        stack.push_back(k);
      }
    };
    if (x > 0) visit(n - 1);
    if (x + 1 < m.width) visit(n + 1);
    if (y > 0) visit(n - m.width);
    if (y + 1 < m.height) visit(n + m.width);
  }
  return reached == m.count();
}

}  // namespace

TEST(Segment, ConstantImageCollapsesAtFirstIteration) {
  for (auto rgb : {std::array<float, 3>{0.5f, 0.5f, 0.5f}, std::array<float, 3>{0.1f, 0.9f, 0.3f}}) {
    HyperParams hp = small(3);
    hp.min_labels = 1;
    const auto r = segment(synthetic::constant_image(12, 10, rgb), hp);
    EXPECT_EQ(r.unique_label_count, 1u);
    EXPECT_EQ(r.iterations_run, 1);
    EXPECT_EQ(r.loss_history.size(), 1u);
    EXPECT_EQ(r.labels.unique_count(), 1u);
  }
}

TEST(Segment, MinLabelsEqualToQStopsAfterOneIteration) {
  HyperParams hp = small(1);
  hp.min_labels = hp.max_clusters;
  const auto r = segment(synthetic::two_region(16, 1), hp);
  EXPECT_EQ(r.iterations_run, 1);
}

TEST(Segment, ResultInvariants) {
  HyperParams hp = small(2);
  hp.min_labels = 2;
  const auto r = segment(synthetic::two_region(16, 2), hp);
  EXPECT_GE(r.unique_label_count, 1u);
  EXPECT_LE(r.unique_label_count, 8u);
  EXPECT_EQ(r.unique_label_count, r.labels.unique_count());
  EXPECT_LE(r.iterations_run, hp.max_iters);
  EXPECT_EQ(r.loss_history.size(), static_cast<std::size_t>(r.iterations_run));
  if (r.iterations_run < hp.max_iters) EXPECT_LE(r.unique_label_count, 2u);
  for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
    const auto& h = r.loss_history[i];
    EXPECT_EQ(h.iteration, static_cast<int>(i + 1));
    EXPECT_NEAR(h.total, h.sim + hp.mu * h.con, 1e-9);
  }
}

TEST(Segment, Reproducible) {
  const auto hp = small(5);
  const auto img = synthetic::two_region(16, 5);
  const auto a = segment(img, hp), b = segment(img, hp);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.params.weights, b.params.weights);
  ASSERT_EQ(a.loss_history.size(), b.loss_history.size());
  for (std::size_t i = 0; i < a.loss_history.size(); ++i) EXPECT_EQ(a.loss_history[i].total, b.loss_history[i].total);
}

TEST(Segment, ScribbleShapeAndLabelChecks) {
  const auto hp = small();
  const auto img = synthetic::two_region(16);
  EXPECT_THROW(segment(img, hp, Scribbles{Mask(8, 8), LabelMap(8, 8)}), InvalidArgument);
  Scribbles s{Mask(16, 16), LabelMap(16, 16)};
  s.mask.set(3, 3);
  s.labels(3, 3) = 8;
  EXPECT_THROW(segment(img, hp, s), InvalidArgument);
}

TEST(Segment, ScribbleTermIsRecorded) {
  auto hp = small(4);
  hp.max_iters = 3;
  const auto r = segment(synthetic::two_region(16), hp, synthetic::two_region_scribbles(16));
  for (const auto& h : r.loss_history) EXPECT_NEAR(h.total, h.sim + hp.mu * h.con + hp.nu * h.scr, 1e-9);
}

TEST(TrainReference, EqualsSingleImageLoop) {
  auto hp = small(6);
  const auto img = synthetic::two_region(16, 6);
  for (int k : {1, 3}) {
    hp.max_iters = k;
    const auto ref = train_reference(std::vector<Image>(static_cast<std::size_t>(k), img), hp);
    const auto seg = segment(img, hp);
    ASSERT_EQ(seg.iterations_run, k);
    EXPECT_LT(max_param_distance(ref.weights, seg.params.weights), 1e-7);
  }
}

TEST(TrainReference, DeterministicAndValidated) {
  const auto hp = small(7);
  const std::vector<Image> imgs{synthetic::two_region(12, 1), synthetic::two_region(10, 2)};
  EXPECT_EQ(train_reference(imgs, hp).weights, train_reference(imgs, hp).weights);
  EXPECT_THROW(train_reference(std::vector<Image>{}, hp), InvalidArgument);
  EXPECT_THROW(train_reference(imgs, hp, 0), InvalidArgument);
  // Two epochs are two more updates.
  EXPECT_EQ(train_reference(imgs, hp, 2).generation, 4u);
}

TEST(TrainReference, ConstantImageThenApply) {
  const auto hp = small(8);
  const auto img = synthetic::constant_image(8, 8, {0.2f, 0.4f, 0.6f});
  const auto net = train_reference(std::vector<Image>{img}, hp);
  EXPECT_EQ(apply_fixed(net, img, hp).unique_count(), 1u);
}

TEST(ApplyFixed, PureAndEqualToComposition) {
  std::mt19937_64 rng(9);
  const auto hp = small(9);
  const auto net = init_params(hp);
  const auto img = random_array<float>({3, 9, 11}, rng, 0.0, 1.0);
  const auto before = net.weights;
  const auto a = apply_fixed(net, img, hp);
  EXPECT_EQ(a, apply_fixed(net, img, hp));
  EXPECT_EQ(a, assign_labels(forward(img, net, hp).response));
  EXPECT_EQ(net.weights, before);
  auto wrong = hp;
  wrong.feature_dim = 9;
  EXPECT_THROW(apply_fixed(net, img, wrong), InvalidArgument);
}

TEST(ExtractSegments, ConstantAndCheckerboard) {
  const auto one = extract_segments(LabelMap(4, 5, 3));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one.masks[0].count(), 20u);
  EXPECT_EQ(one.source_labels[0], 3);

  LabelMap cb(2, 2);
  cb.data = {0, 1, 1, 0};
  const auto four = extract_segments(cb);
  ASSERT_EQ(four.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(four.masks[k].count(), 1u);
    EXPECT_EQ(four.masks[k].data[k], 1);  // scanline order
  }
}

TEST(ExtractSegments, MatchesFloodFillOracle) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 20; ++t) {
    const auto l = random_labels(16, 16, 3, rng);
    EXPECT_EQ(connected_components(l), unseg::testing::flood_fill_components(l));
  }
}

TEST(ExtractSegments, UShapedComponentMergesInSecondPass) {
  // A U shape whose arms meet only at the bottom row.
  LabelMap l(3, 3, 1);
  l(0, 1) = 0;
  l(1, 1) = 0;
  EXPECT_EQ(connected_components(l), unseg::testing::flood_fill_components(l));
  EXPECT_EQ(extract_segments(l).size(), 2u);
}

TEST(ExtractSegments, DisjointExhaustiveConnected) {
  std::mt19937_64 rng(11);
  const auto l = random_labels(12, 9, 4, rng);
  const auto s = extract_segments(l);
  std::vector<int> cover(l.size(), 0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    EXPECT_TRUE(four_connected(s.masks[k])) << "segment " << k;
    for (std::size_t n = 0; n < l.size(); ++n)
      if (s.masks[k].data[n]) {
        ++cover[n];
        EXPECT_EQ(l.data[n], s.source_labels[k]);
      }
  }
  for (int c : cover) EXPECT_EQ(c, 1);
}
