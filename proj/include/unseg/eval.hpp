#pragma once

// Segmentation scoring: IOU, best-match mIOU over ground-truth segments,
// BSD-style ground-truth selection, and precision/recall with average
// precision at an IOU threshold.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unseg/labels.hpp"
#include "unseg/pipeline.hpp"

namespace unseg {

struct GtBundle {
  std::vector<SegmentSet> variants;  // one per annotation of the same image
  std::optional<Mask> void_mask;     // pixels excluded from scoring
};

struct MatchRecord {
  std::size_t est_index = 0;
  std::size_t best_gt_index = 0;
  double best_iou = 0.0;
};

enum class GtMode { all, fine, coarse };

inline GtMode parse_gt_mode(const std::string& s) {
  if (s == "all") return GtMode::all;
  if (s == "fine") return GtMode::fine;
  if (s == "coarse") return GtMode::coarse;
  throw InvalidArgument("gt mode must be all|fine|coarse, got '" + s + "'");
}
inline const char* to_string(GtMode m) {
  return m == GtMode::all ? "all" : (m == GtMode::fine ? "fine" : "coarse");
}

/// How dataset mIOU is averaged: over (image, GT variant) pairs, or over
/// every GT segment in the dataset.
enum class MiouAggregate { pairs, segments };

inline MiouAggregate parse_aggregate(const std::string& s) {
  if (s == "pairs") return MiouAggregate::pairs;
  if (s == "segments") return MiouAggregate::segments;
  throw InvalidArgument("aggregate must be pairs|segments, got '" + s + "'");
}

inline double iou(const Mask& a, const Mask& b, const Mask* void_mask = nullptr) {
  if (a.height != b.height || a.width != b.width ||
      (void_mask && (void_mask->height != a.height || void_mask->width != a.width)))
    throw InvalidArgument("iou: mask shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t n = 0; n < a.size(); ++n) {
    if (void_mask && void_mask->data[n]) continue;
    const bool x = a.data[n] != 0, y = b.data[n] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Dense G×E IOU table.
inline std::vector<double> iou_table(const SegmentSet& gt, const SegmentSet& est, const Mask* void_mask = nullptr) {
  if (gt.height != est.height || gt.width != est.width)
    throw InvalidArgument("iou_table: segment sets have different image sizes");
  const std::size_t G = gt.size(), E = est.size(), N = gt.height * gt.width;
  // Pixel → segment index; valid while each set's masks are disjoint.
  auto index_of = [N](const SegmentSet& s, std::vector<std::int64_t>& idx) {
    idx.assign(N, -1);
    for (std::size_t k = 0; k < s.size(); ++k)
      for (std::size_t n = 0; n < N; ++n)
        if (s.masks[k].data[n]) {
          if (idx[n] >= 0) return false;
          idx[n] = static_cast<std::int64_t>(k);
        }
    return true;
  };
  std::vector<double> table(G * E, 0.0);
  std::vector<std::int64_t> gi, ei;
  if (!index_of(gt, gi) || !index_of(est, ei)) {
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t e = 0; e < E; ++e) table[g * E + e] = iou(gt.masks[g], est.masks[e], void_mask);
    return table;
  }
  std::vector<std::size_t> inter(G * E, 0), gsize(G, 0), esize(E, 0);
  for (std::size_t n = 0; n < N; ++n) {
    if (void_mask && void_mask->data[n]) continue;
    if (gi[n] >= 0) ++gsize[static_cast<std::size_t>(gi[n])];
    if (ei[n] >= 0) ++esize[static_cast<std::size_t>(ei[n])];
    if (gi[n] >= 0 && ei[n] >= 0) ++inter[static_cast<std::size_t>(gi[n]) * E + static_cast<std::size_t>(ei[n])];
  }
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t e = 0; e < E; ++e) {
      const std::size_t i = inter[g * E + e], u = gsize[g] + esize[e] - i;
      table[g * E + e] = u == 0 ? 0.0 : static_cast<double>(i) / static_cast<double>(u);
    }
  return table;
}

/// Per-GT-segment best IOU against any estimated segment.
inline std::vector<double> best_iou_per_gt(const SegmentSet& gt, const SegmentSet& est, const Mask* void_mask = nullptr) {
  const auto t = iou_table(gt, est, void_mask);
  const std::size_t E = est.size();
  std::vector<double> best(gt.size(), 0.0);
  for (std::size_t g = 0; g < gt.size(); ++g)
    for (std::size_t e = 0; e < E; ++e) best[g] = std::max(best[g], t[g * E + e]);
  return best;
}

inline double miou(const SegmentSet& gt, const SegmentSet& est, const Mask* void_mask = nullptr) {
  if (gt.size() == 0) throw InvalidArgument("miou: ground truth has no segments");
  const auto best = best_iou_per_gt(gt, est, void_mask);
  double s = 0.0;
  for (double b : best) s += b;
  return s / static_cast<double>(best.size());
}

/// Best GT match for every estimated segment.
inline std::vector<MatchRecord> match_segments(const SegmentSet& gt, const SegmentSet& est,
                                               const Mask* void_mask = nullptr) {
  const auto t = iou_table(gt, est, void_mask);
  const std::size_t E = est.size();
  std::vector<MatchRecord> out(E);
  for (std::size_t e = 0; e < E; ++e) {
    out[e].est_index = e;
    for (std::size_t g = 0; g < gt.size(); ++g)
      if (t[g * E + e] > out[e].best_iou) out[e] = {e, g, t[g * E + e]};
  }
  return out;
}

/// all → every variant; fine/coarse → the variant with the most/fewest
/// segments (first wins ties).
inline std::vector<SegmentSet> select_gt(const GtBundle& bundle, GtMode mode) {
  if (bundle.variants.empty()) throw InvalidArgument("select_gt: empty ground-truth bundle");
  if (mode == GtMode::all) return bundle.variants;
  std::size_t pick = 0;
  for (std::size_t i = 1; i < bundle.variants.size(); ++i) {
    const auto n = bundle.variants[i].size(), cur = bundle.variants[pick].size();
    if ((mode == GtMode::fine && n > cur) || (mode == GtMode::coarse && n < cur)) pick = i;
  }
  return {bundle.variants[pick]};
}

/// Ground-truth segments from an annotation raster: one segment per distinct
/// value other than `void_value`.
inline SegmentSet segments_from_labels(const LabelMap& labels, std::optional<std::int32_t> void_value = std::nullopt) {
  std::map<std::int32_t, std::size_t> slot;
  for (auto v : labels.data)
    if (!void_value || v != *void_value) slot.emplace(v, 0);
  SegmentSet s;
  s.height = labels.height;
  s.width = labels.width;
  for (auto& [value, index] : slot) {
    index = s.masks.size();
    s.masks.emplace_back(labels.height, labels.width);
    s.source_labels.push_back(value);
  }
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto it = slot.find(labels.data[n]);
    if (it != slot.end()) s.masks[it->second].data[n] = 1;
  }
  return s;
}

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
};

struct PrCurve {
  double threshold = 0.0;
  std::vector<PrPoint> points;
  double ap = 0.0;
  std::size_t true_positives = 0;
  bool empty = false;  // no matches supplied; ap reported as 0
};

/// Sweeps matches in descending best_iou. A match is a true positive when
/// best_iou > threshold; recall is TP over `total_gt` (capped at 1). AP is
/// Σ (r_i − r_{i−1}) · max_{j≥i} p_j with r_0 = 0.
inline PrCurve pr_ap(std::vector<MatchRecord> matches, std::size_t total_gt, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("pr_ap: threshold must lie in (0, 1)");
  PrCurve c;
  c.threshold = threshold;
  if (matches.empty() || total_gt == 0) {
    c.empty = matches.empty();
    return c;
  }
  std::stable_sort(matches.begin(), matches.end(),
                   [](const MatchRecord& a, const MatchRecord& b) { return a.best_iou > b.best_iou; });
  std::size_t tp = 0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (matches[i].best_iou > threshold) ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
    const double recall = std::min(1.0, static_cast<double>(tp) / static_cast<double>(total_gt));
    c.points.push_back({precision, recall});
  }
  c.true_positives = tp;
  std::vector<double> envelope(c.points.size());
  double running = 0.0;
  for (std::size_t i = c.points.size(); i-- > 0;) {
    running = std::max(running, c.points[i].precision);
    envelope[i] = running;
  }
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    c.ap += (c.points[i].recall - prev_recall) * envelope[i];
    prev_recall = c.points[i].recall;
  }
  return c;
}

/// One image of a dataset: its GT bundle and the estimated segments.
struct EvalItem {
  std::string name;
  GtBundle gt;
  SegmentSet est;
};

struct DatasetReport {
  double miou = 0.0;
  std::size_t pairs = 0;        // (image, GT variant) pairs scored
  std::size_t gt_segments = 0;  // total GT segments over those pairs
  std::size_t est_segments = 0;
  std::vector<PrCurve> curves;  // one per threshold
  std::vector<double> per_pair_miou;
};

inline DatasetReport evaluate_dataset(const std::vector<EvalItem>& items, GtMode mode,
                                      const std::vector<double>& thresholds,
                                      MiouAggregate aggregate = MiouAggregate::pairs) {
  DatasetReport rep;
  std::vector<MatchRecord> matches;
  double seg_sum = 0.0;
  for (const auto& item : items) {
    const Mask* vm = item.gt.void_mask ? &*item.gt.void_mask : nullptr;
    for (const auto& gt : select_gt(item.gt, mode)) {
      const auto best = best_iou_per_gt(gt, item.est, vm);
      if (best.empty()) throw InvalidArgument("evaluate: ground truth for '" + item.name + "' has no segments");
      double s = 0.0;
      for (double b : best) s += b;
      rep.per_pair_miou.push_back(s / static_cast<double>(best.size()));
      seg_sum += s;
      rep.gt_segments += best.size();
      ++rep.pairs;
      const auto m = match_segments(gt, item.est, vm);
      matches.insert(matches.end(), m.begin(), m.end());
      rep.est_segments += item.est.size();
    }
  }
  if (rep.pairs > 0) {
    if (aggregate == MiouAggregate::pairs) {
      double s = 0.0;
      for (double v : rep.per_pair_miou) s += v;
      rep.miou = s / static_cast<double>(rep.pairs);
    } else {
      rep.miou = seg_sum / static_cast<double>(rep.gt_segments);
    }
  }
  for (double t : thresholds) rep.curves.push_back(pr_ap(matches, rep.gt_segments, t));
  return rep;
}

}  // namespace unseg
