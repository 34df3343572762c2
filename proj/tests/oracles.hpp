#pragma once

// Independent reference implementations used to cross-check the library.
// Each oracle favors directness over speed: quadratic scans, per-pair
// recomputation, explicit set arithmetic. None of them share code with the
// implementations under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "evpan/core.hpp"
#include "evpan/grid.hpp"
#include "evpan/metrics.hpp"

namespace oracle {

// Corner-aligned bilinear sample recomputed from scratch for one output cell.
inline double bilinear_sample(const evpan::DenseGrid& grid, std::size_t out_h, std::size_t out_w,
                              std::size_t oy, std::size_t ox, std::size_t c) {
  const double sy =
      out_h > 1 ? static_cast<double>(oy) * (static_cast<double>(grid.height - 1) /
                                             static_cast<double>(out_h - 1))
                : 0.0;
  const double sx =
      out_w > 1 ? static_cast<double>(ox) * (static_cast<double>(grid.width - 1) /
                                             static_cast<double>(out_w - 1))
                : 0.0;
  std::size_t y0 = std::min(static_cast<std::size_t>(std::floor(sy)), grid.height - 1);
  std::size_t x0 = std::min(static_cast<std::size_t>(std::floor(sx)), grid.width - 1);
  const std::size_t y1 = std::min(y0 + 1, grid.height - 1);
  const std::size_t x1 = std::min(x0 + 1, grid.width - 1);
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  const double v00 = grid.at(y0, x0, c), v01 = grid.at(y0, x1, c);
  const double v10 = grid.at(y1, x0, c), v11 = grid.at(y1, x1, c);
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
}

// Lovász extension of the Jaccard loss, evaluated through the set function
// itself: sort errors descending, then weight each error by the increase of
// the Jaccard loss when its pixel joins the "mispredicted" prefix set. Each
// prefix is re-counted from scratch.
inline double lovasz_extension(const std::vector<double>& errors,
                               const std::vector<std::uint8_t>& gt_mask) {
  const std::size_t n = errors.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });

  std::size_t gt_total = 0;
  for (std::uint8_t g : gt_mask) gt_total += g ? 1 : 0;

  auto jaccard_loss_of_prefix = [&](std::size_t prefix_len) {
    if (prefix_len == 0) return 0.0;
    std::set<std::size_t> prefix(order.begin(), order.begin() + prefix_len);
    std::size_t kept_gt = 0;    // gt pixels not in the mispredicted set
    std::size_t extras = 0;     // non-gt pixels in the mispredicted set
    for (std::size_t i = 0; i < n; ++i) {
      const bool in_prefix = prefix.count(i) != 0;
      if (gt_mask[i] && !in_prefix) ++kept_gt;
      if (!gt_mask[i] && in_prefix) ++extras;
    }
    const std::size_t uni = gt_total + extras;
    if (uni == 0) return 1.0;
    return 1.0 - static_cast<double>(kept_gt) / static_cast<double>(uni);
  };

  double value = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cur = jaccard_loss_of_prefix(i + 1);
    value += errors[order[i]] * (cur - prev);
    prev = cur;
  }
  return value;
}

// Segment matching and PQ counts recomputed with explicit pixel sets and an
// all-pairs scan.
struct MatchOracleResult {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> matches;  // (pred_id, gt_id)
  std::map<std::uint32_t, double> iou_by_pred;
  std::map<std::uint32_t, evpan::ClassCounts> counts;
};

inline MatchOracleResult match_all_pairs(const evpan::PanopticGrid& pred,
                                         const evpan::PanopticGrid& gt) {
  using evpan::kVoidLabel;
  using evpan::PanopticGrid;
  std::map<std::uint32_t, std::vector<std::size_t>> pred_px, gt_px;
  std::vector<std::size_t> void_px;
  for (std::size_t p = 0; p < pred.pixels(); ++p) {
    if (pred.data[p] != kVoidLabel) pred_px[pred.data[p]].push_back(p);
    if (gt.data[p] != kVoidLabel)
      gt_px[gt.data[p]].push_back(p);
    else
      void_px.push_back(p);
  }

  auto overlap = [](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::size_t n = 0;
    for (std::size_t v : a)
      if (std::binary_search(b.begin(), b.end(), v)) ++n;
    return n;
  };

  MatchOracleResult result;
  std::set<std::uint32_t> matched_pred, matched_gt;
  for (const auto& [pid, ppx] : pred_px) {
    for (const auto& [gid, gpx] : gt_px) {
      if (PanopticGrid::class_of(pid) != PanopticGrid::class_of(gid)) continue;
      const std::size_t inter = overlap(ppx, gpx);
      const std::size_t void_part = overlap(ppx, void_px);
      const std::size_t uni = ppx.size() + gpx.size() - inter - void_part;
      const double iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
      if (iou > 0.5) {
        result.matches.emplace_back(pid, gid);
        result.iou_by_pred[pid] = iou;
        matched_pred.insert(pid);
        matched_gt.insert(gid);
        auto& c = result.counts[PanopticGrid::class_of(pid)];
        c.tp += 1;
        c.iou_sum += iou;
      }
    }
  }
  for (const auto& [gid, gpx] : gt_px)
    if (!matched_gt.count(gid)) result.counts[PanopticGrid::class_of(gid)].fn += 1;
  for (const auto& [pid, ppx] : pred_px) {
    if (matched_pred.count(pid)) continue;
    const std::size_t void_part = overlap(ppx, void_px);
    if (2 * void_part > ppx.size()) continue;  // mostly-void prediction is ignored
    result.counts[PanopticGrid::class_of(pid)].fp += 1;
  }
  return result;
}

// Expected calibration error by direct binning.
inline double ece_direct(const std::vector<double>& confidence,
                         const std::vector<std::uint8_t>& correct, unsigned bins) {
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    std::size_t b = static_cast<std::size_t>(confidence[i] * bins);
    if (b >= bins) b = bins - 1;
    conf_sum[b] += confidence[i];
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    count[b] += 1;
  }
  double err = 0.0;
  const double total = static_cast<double>(confidence.size());
  for (unsigned b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double n = static_cast<double>(count[b]);
    err += (n / total) * std::abs(acc_sum[b] / n - conf_sum[b] / n);
  }
  return err;
}

// Mean softmax negative log-likelihood at temperature T, straightforward form.
inline double nll_at(const std::vector<evpan::DenseGrid>& logits,
                     const std::vector<evpan::LabelGrid>& labels, double t) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    for (std::size_t p = 0; p < logits[i].pixels(); ++p) {
      const std::uint32_t y = labels[i].data[p];
      if (y == evpan::kVoidLabel) continue;
      const double* v = logits[i].pixel(p);
      double mx = v[0] / t;
      for (std::size_t c = 1; c < logits[i].channels; ++c) mx = std::max(mx, v[c] / t);
      double z = 0.0;
      for (std::size_t c = 0; c < logits[i].channels; ++c) z += std::exp(v[c] / t - mx);
      sum += -(v[y] / t - mx - std::log(z));
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

// Dense grid search over temperature on a log-spaced lattice.
inline double grid_search_temperature(const std::vector<evpan::DenseGrid>& logits,
                                      const std::vector<evpan::LabelGrid>& labels) {
  double best_t = 1.0, best_nll = std::numeric_limits<double>::infinity();
  const double lo = std::log(0.05), hi = std::log(20.0);
  const int steps = 4000;
  for (int i = 0; i <= steps; ++i) {
    const double t = std::exp(lo + (hi - lo) * i / steps);
    const double nll = nll_at(logits, labels, t);
    if (nll < best_nll) {
      best_nll = nll;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace oracle
