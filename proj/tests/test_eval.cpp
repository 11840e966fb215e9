#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "unseg/eval.hpp"

using namespace unseg;

namespace {

LabelMap grid(std::size_t h, std::size_t w, std::vector<std::int32_t> v) {
  LabelMap l(h, w);
  l.data = std::move(v);
  return l;
}

LabelMap halves(bool vertical_split) {
  LabelMap l(4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) l(y, x) = vertical_split ? (x < 2 ? 0 : 1) : (y < 2 ? 0 : 1);
  return l;
}

LabelMap random_labels(std::size_t h, std::size_t w, int q, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, q - 1);
  LabelMap l(h, w);
  for (auto& v : l.data) v = d(rng);
  return l;
}

}  // namespace

TEST(Iou, BasicCases) {
  Mask a(2, 4), b(2, 4);
  for (std::size_t x = 0; x < 4; ++x) a.set(0, x);
  b.set(0, 1);
  b.set(0, 2);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 0.5);
  EXPECT_DOUBLE_EQ(iou(b, a), 0.5);
  Mask c(2, 4);
  c.set(1, 0);
  EXPECT_DOUBLE_EQ(iou(a, c), 0.0);
  EXPECT_DOUBLE_EQ(iou(Mask(2, 4), Mask(2, 4)), 0.0);
  EXPECT_THROW(iou(a, Mask(4, 2)), InvalidArgument);
}

TEST(Iou, VoidPixelsAreRemoved) {
  Mask a(1, 4), b(1, 4), v(1, 4);
  a.set(0, 0);
  a.set(0, 1);
  b.set(0, 1);
  b.set(0, 2);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  v.set(0, 0);
  v.set(0, 2);
  EXPECT_DOUBLE_EQ(iou(a, b, &v), 1.0);
}

TEST(Miou, IdenticalIsOne) {
  std::mt19937_64 rng(1);
  const auto s = extract_segments(random_labels(8, 8, 3, rng));
  EXPECT_DOUBLE_EQ(miou(s, s), 1.0);
}

TEST(Miou, HalvesVersusHalvesIsOneThird) {
  const auto gt = segments_from_labels(halves(true));
  const auto est = segments_from_labels(halves(false));
  EXPECT_DOUBLE_EQ(miou(gt, est), 1.0 / 3.0);
}

TEST(Miou, EmptyGroundTruthRejected) {
  SegmentSet empty{4, 4, {}, {}};
  EXPECT_THROW(miou(empty, segments_from_labels(halves(true))), InvalidArgument);
}

TEST(Miou, InvariantUnderEstimatePermutationAndRelabel) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto gt = segments_from_labels(random_labels(10, 10, 4, rng));
    const auto est_l = random_labels(10, 10, 5, rng);
    auto est = extract_segments(est_l);
    const double base = miou(gt, est);
    std::vector<std::size_t> perm(est.size());
    std::iota(perm.begin(), perm.end(), 0u);
    std::shuffle(perm.begin(), perm.end(), rng);
    SegmentSet shuffled = est;
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.masks[i] = est.masks[perm[i]];
    EXPECT_DOUBLE_EQ(miou(gt, shuffled), base);
    // Relabel cluster IDs: segments are unchanged, so the score must be.
    std::vector<std::int32_t> rename{3, 0, 4, 1, 2};
    LabelMap relabeled = est_l;
    for (auto& v : relabeled.data) v = rename[static_cast<std::size_t>(v)];
    EXPECT_DOUBLE_EQ(miou(gt, extract_segments(relabeled)), base);
  }
}

TEST(IouTable, ContingencyMatchesPairwise) {
  std::mt19937_64 rng(3);
  const auto gt = segments_from_labels(random_labels(9, 7, 3, rng));
  const auto est = extract_segments(random_labels(9, 7, 3, rng));
  Mask v(9, 7);
  v.set(2, 3);
  v.set(5, 5);
  const auto t = iou_table(gt, est, &v);
  for (std::size_t g = 0; g < gt.size(); ++g)
    for (std::size_t e = 0; e < est.size(); ++e) EXPECT_DOUBLE_EQ(t[g * est.size() + e], iou(gt.masks[g], est.masks[e], &v));
}

TEST(SelectGt, Modes) {
  GtBundle single{{segments_from_labels(halves(true))}, std::nullopt};
  for (GtMode m : {GtMode::all, GtMode::fine, GtMode::coarse}) EXPECT_EQ(select_gt(single, m).size(), 1u);

  LabelMap five(1, 5);
  five.data = {0, 1, 2, 3, 4};
  LabelMap two(1, 5);
  two.data = {0, 0, 1, 1, 1};
  GtBundle b{{segments_from_labels(two), segments_from_labels(five)}, std::nullopt};
  EXPECT_EQ(select_gt(b, GtMode::all).size(), 2u);
  EXPECT_EQ(select_gt(b, GtMode::fine)[0].size(), 5u);
  EXPECT_EQ(select_gt(b, GtMode::coarse)[0].size(), 2u);
  EXPECT_THROW(select_gt(GtBundle{}, GtMode::all), InvalidArgument);
  EXPECT_EQ(parse_gt_mode("fine"), GtMode::fine);
  EXPECT_THROW(parse_gt_mode("medium"), InvalidArgument);
}

TEST(SegmentsFromLabels, VoidValueExcluded) {
  const auto s = segments_from_labels(grid(1, 4, {7, 65535, 7, 2}), 65535);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s.source_labels, (std::vector<std::int32_t>{2, 7}));
  EXPECT_EQ(s.masks[1].count(), 2u);
}

TEST(PrAp, AllAboveThresholdIsOne) {
  const std::vector<MatchRecord> m{{0, 0, 0.9}, {1, 1, 0.8}, {2, 2, 0.7}};
  const auto c = pr_ap(m, 3, 0.5);
  EXPECT_DOUBLE_EQ(c.ap, 1.0);
  EXPECT_EQ(c.true_positives, 3u);
}

TEST(PrAp, NoneAboveThresholdIsZero) {
  const std::vector<MatchRecord> m{{0, 0, 0.3}, {1, 1, 0.5}};
  EXPECT_DOUBLE_EQ(pr_ap(m, 2, 0.5).ap, 0.0);  // strict inequality
}

TEST(PrAp, HandSweep) {
  const std::vector<MatchRecord> m{{0, 0, 0.9}, {1, 0, 0.4}, {2, 1, 0.8}};
  const auto c = pr_ap(m, 2, 0.5);
  ASSERT_EQ(c.points.size(), 3u);
  EXPECT_DOUBLE_EQ(c.points[0].precision, 1.0);
  EXPECT_DOUBLE_EQ(c.points[1].precision, 1.0);
  EXPECT_DOUBLE_EQ(c.points[2].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c.points[0].recall, 0.5);
  EXPECT_DOUBLE_EQ(c.points[1].recall, 1.0);
  EXPECT_DOUBLE_EQ(c.points[2].recall, 1.0);
  EXPECT_DOUBLE_EQ(c.ap, 1.0);
}

TEST(PrAp, RankingByIouPutsTruePositivesFirst) {
  // Sorted: 0.9 TP, 0.7 TP, 0.2 FP with 4 GT. Precision stays 1 up to recall
  // 0.5, so the area is 0.5 = TP / GT.
  const std::vector<MatchRecord> m{{0, 0, 0.9}, {1, 0, 0.2}, {2, 1, 0.7}};
  const auto c = pr_ap(m, 4, 0.5);
  ASSERT_EQ(c.points.size(), 3u);
  EXPECT_DOUBLE_EQ(c.points[1].recall, 0.5);
  EXPECT_DOUBLE_EQ(c.points[2].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(c.ap, 0.5);
}

TEST(PrAp, EmptyAndBadThreshold) {
  const auto c = pr_ap({}, 3, 0.5);
  EXPECT_TRUE(c.empty);
  EXPECT_EQ(c.ap, 0.0);
  EXPECT_THROW(pr_ap({}, 3, 1.0), InvalidArgument);
  EXPECT_THROW(pr_ap({}, 3, 0.0), InvalidArgument);
}

TEST(PrAp, MonotoneInThresholdAndCountsTruePositives) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 20; ++t) {
    std::vector<MatchRecord> m(25);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = {i, 0, u(rng)};
    double prev = 2.0;
    for (double th = 0.05; th < 1.0; th += 0.05) {
      const auto c = pr_ap(m, 20, th);
      EXPECT_LE(c.ap, prev + 1e-15);
      prev = c.ap;
      const auto direct = std::count_if(m.begin(), m.end(), [th](const MatchRecord& r) { return r.best_iou > th; });
      EXPECT_EQ(c.true_positives, static_cast<std::size_t>(direct));
    }
  }
}

TEST(EvaluateDataset, MatchesTwoLoopOracle) {
  std::mt19937_64 rng(5);
  std::vector<EvalItem> items;
  for (int i = 0; i < 4; ++i) {
    EvalItem it;
    it.name = "img" + std::to_string(i);
    for (int v = 0; v < 1 + i % 3; ++v) it.gt.variants.push_back(segments_from_labels(random_labels(6, 7, 2 + v, rng)));
    it.est = extract_segments(random_labels(6, 7, 3, rng));
    items.push_back(std::move(it));
  }
  double sum = 0, seg_sum = 0;
  std::size_t pairs = 0, segs = 0;
  for (const auto& it : items)
    for (const auto& g : it.gt.variants) {
      sum += miou(g, it.est);
      ++pairs;
      for (double b : best_iou_per_gt(g, it.est)) seg_sum += b;
      segs += g.size();
    }
  const auto rep = evaluate_dataset(items, GtMode::all, {0.5});
  EXPECT_NEAR(rep.miou, sum / static_cast<double>(pairs), 1e-12);
  EXPECT_EQ(rep.pairs, pairs);
  EXPECT_EQ(rep.gt_segments, segs);
  const auto rep2 = evaluate_dataset(items, GtMode::all, {0.5}, MiouAggregate::segments);
  EXPECT_NEAR(rep2.miou, seg_sum / static_cast<double>(segs), 1e-12);
}

TEST(EvaluateDataset, PerfectPredictionScoresOne) {
  std::mt19937_64 rng(6);
  const auto l = random_labels(8, 8, 3, rng);
  // Use components as GT so every estimated segment matches exactly.
  EvalItem it{"a", {{extract_segments(l)}, std::nullopt}, extract_segments(l)};
  const auto rep = evaluate_dataset({it}, GtMode::all, {0.2, 0.7});
  EXPECT_DOUBLE_EQ(rep.miou, 1.0);
  for (const auto& c : rep.curves) EXPECT_DOUBLE_EQ(c.ap, 1.0);
}
