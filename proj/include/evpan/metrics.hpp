#pragma once

// Panoptic evaluation math: segment matching at IoU > 0.5, panoptic quality
// with its SQ/RQ decomposition, calibration histograms (uECE / ECE), the
// per-segment pECE, and the combined uPQ.
//
// Void handling follows the standard panoptic convention: void ground-truth
// pixels are excluded from IoU denominators, and unmatched predicted
// segments whose area is more than half void are ignored rather than counted
// as false positives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "evpan/core.hpp"
#include "evpan/grid.hpp"

namespace evpan {

// A unique matched pair of encoded segment ids with their IoU (> 0.5).
struct SegmentMatch {
  std::uint32_t pred_id = 0;
  std::uint32_t gt_id = 0;
  double iou = 0.0;

  std::uint32_t class_id() const { return PanopticGrid::class_of(pred_id); }
};

// Match/error tallies of one class.
struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  double iou_sum = 0.0;
};

struct MatchResult {
  std::vector<SegmentMatch> matches;            // ordered by pred_id
  std::map<std::uint32_t, ClassCounts> counts;  // keyed by class id
};

// Matches predicted against ground-truth segments of equal class with
// IoU > 0.5. At this threshold matches are automatically unique. Void pixels
// in gt never count toward IoU; predicted segments that are themselves void
// by more than half are dropped silently.
inline MatchResult match_segments(const PanopticGrid& pred, const PanopticGrid& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ValidationError("match_segments: grid dimensions differ");

  std::map<std::uint32_t, std::uint64_t> pred_area, gt_area;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> intersection;
  std::map<std::uint32_t, std::uint64_t> pred_void_overlap;
  for (std::size_t p = 0; p < pred.pixels(); ++p) {
    const std::uint32_t pv = pred.data[p], gv = gt.data[p];
    if (pv != kVoidLabel) ++pred_area[pv];
    if (gv != kVoidLabel) ++gt_area[gv];
    if (pv == kVoidLabel) continue;
    if (gv == kVoidLabel)
      ++pred_void_overlap[pv];
    else
      ++intersection[{pv, gv}];
  }

  MatchResult result;
  std::map<std::uint32_t, std::uint32_t> matched_pred, matched_gt;
  for (const auto& [key, inter] : intersection) {
    const auto [pid, gid] = key;
    if (PanopticGrid::class_of(pid) != PanopticGrid::class_of(gid)) continue;
    const std::uint64_t void_part =
        pred_void_overlap.count(pid) ? pred_void_overlap.at(pid) : 0;
    const double uni = static_cast<double>(pred_area.at(pid) + gt_area.at(gid) - inter -
                                           void_part);
    const double overlap = static_cast<double>(inter) / uni;
    if (overlap > 0.5) {
      result.matches.push_back(SegmentMatch{pid, gid, overlap});
      matched_pred.emplace(pid, gid);
      matched_gt.emplace(gid, pid);
      ClassCounts& c = result.counts[PanopticGrid::class_of(pid)];
      ++c.tp;
      c.iou_sum += overlap;
    }
  }

  for (const auto& [gid, area] : gt_area) {
    (void)area;
    if (!matched_gt.count(gid)) ++result.counts[PanopticGrid::class_of(gid)].fn;
  }
  for (const auto& [pid, area] : pred_area) {
    if (matched_pred.count(pid)) continue;
    const std::uint64_t void_part =
        pred_void_overlap.count(pid) ? pred_void_overlap.at(pid) : 0;
    if (2 * void_part > area) continue;  // mostly void: ignored, not an error
    ++result.counts[PanopticGrid::class_of(pid)].fp;
  }
  return result;
}

struct PqMetrics {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
};

// PQ = sum IoU / (TP + FP/2 + FN/2), with the SQ x RQ decomposition. Classes
// with no segments at all (tp+fp+fn = 0) carry no signal; callers exclude
// them from averages via participates().
inline bool participates(const ClassCounts& counts) {
  return counts.tp + counts.fp + counts.fn > 0;
}

inline PqMetrics panoptic_quality(const ClassCounts& counts) {
  PqMetrics m;
  const double denom = static_cast<double>(counts.tp) +
                       0.5 * static_cast<double>(counts.fp) +
                       0.5 * static_cast<double>(counts.fn);
  if (denom == 0.0) return m;
  m.pq = counts.iou_sum / denom;
  m.sq = counts.tp > 0 ? counts.iou_sum / static_cast<double>(counts.tp) : 0.0;
  m.rq = static_cast<double>(counts.tp) / denom;
  return m;
}

// Equally spaced confidence bins over [0,1]; confidence exactly 1.0 lands in
// the top bin.
struct CalibrationHistogram {
  struct Bin {
    std::uint64_t count = 0;
    double conf_sum = 0.0;
    std::uint64_t correct = 0;
  };

  std::vector<Bin> bins;

  CalibrationHistogram() = default;
  explicit CalibrationHistogram(unsigned num_bins) : bins(num_bins) {
    if (num_bins < 1) throw ValidationError("calibration histogram: need at least 1 bin");
  }

  std::size_t bin_count() const { return bins.size(); }

  void add(double confidence, bool correct) {
    if (!(confidence >= 0.0 && confidence <= 1.0))
      throw ValidationError("calibration histogram: confidence must lie in [0,1]");
    std::size_t idx = static_cast<std::size_t>(confidence * static_cast<double>(bins.size()));
    if (idx >= bins.size()) idx = bins.size() - 1;
    Bin& b = bins[idx];
    ++b.count;
    b.conf_sum += confidence;
    if (correct) ++b.correct;
  }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const Bin& b : bins) n += b.count;
    return n;
  }

  void merge(const CalibrationHistogram& other) {
    if (bins.size() != other.bins.size())
      throw ValidationError("calibration histogram: bin count mismatch in merge");
    for (std::size_t i = 0; i < bins.size(); ++i) {
      bins[i].count += other.bins[i].count;
      bins[i].conf_sum += other.bins[i].conf_sum;
      bins[i].correct += other.bins[i].correct;
    }
  }
};

// Expected calibration error: sum_b (|b|/N) |acc(b) - conf(b)|.
inline double expected_calibration_error(const CalibrationHistogram& hist) {
  const std::uint64_t total = hist.total();
  if (total == 0)
    throw ValidationError("calibration error: no samples");
  double err = 0.0;
  for (const CalibrationHistogram::Bin& b : hist.bins) {
    if (b.count == 0) continue;
    const double n = static_cast<double>(b.count);
    const double acc = static_cast<double>(b.correct) / n;
    const double conf = b.conf_sum / n;
    err += n / static_cast<double>(total) * std::fabs(acc - conf);
  }
  return err;
}

// uECE of a confidence field against per-pixel correctness.
inline double uece(const DenseGrid& confidence, const std::vector<std::uint8_t>& correctness,
                   unsigned num_bins = 10) {
  if (confidence.channels != 1)
    throw ValidationError("uece: confidence must be a single-channel field");
  if (correctness.size() != confidence.pixels())
    throw ValidationError("uece: correctness length does not match pixel count");
  CalibrationHistogram hist(num_bins);
  for (std::size_t p = 0; p < confidence.pixels(); ++p)
    hist.add(confidence.data[p], correctness[p] != 0);
  return expected_calibration_error(hist);
}

// Classic ECE: confidence = per-pixel max class probability, correctness =
// argmax class equals the label; void-labelled pixels are skipped.
inline double ece_maxprob(const DenseGrid& probs, const LabelGrid& labels,
                          unsigned num_bins = 10) {
  if (probs.height != labels.height || probs.width != labels.width)
    throw ValidationError("ece: probs/labels shape mismatch");
  labels.require_classes_below(probs.channels, "ece");
  CalibrationHistogram hist(num_bins);
  for (std::size_t p = 0; p < probs.pixels(); ++p) {
    const std::uint32_t gt = labels.data[p];
    if (gt == kVoidLabel) continue;
    const double* q = probs.pixel(p);
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.channels; ++c)
      if (q[c] > q[best]) best = c;
    hist.add(q[best], best == gt);
  }
  return expected_calibration_error(hist);
}

struct PeceResult {
  double value = 1.0;
  std::uint64_t match_count = 0;
  // True when no matches existed and the worst-case value 1 was assigned.
  bool defaulted = false;
};

// Mean per-segment uECE over matched pairs (f, g): the pixel domain is the
// predicted segment f and a pixel is correct when it also belongs to g. With
// no matches the metric has no support and defaults to the worst case 1.
inline PeceResult pece(const std::vector<SegmentMatch>& matches, const DenseGrid& confidence,
                       const PanopticGrid& pred, const PanopticGrid& gt,
                       unsigned num_bins = 10) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ValidationError("pece: pred/gt dimensions differ");
  if (confidence.channels != 1 || confidence.height != pred.height ||
      confidence.width != pred.width)
    throw ValidationError("pece: confidence field shape mismatch");
  if (matches.empty()) return PeceResult{1.0, 0, true};
  double sum = 0.0;
  for (const SegmentMatch& match : matches) {
    CalibrationHistogram hist(num_bins);
    for (std::size_t p = 0; p < pred.pixels(); ++p)
      if (pred.data[p] == match.pred_id)
        hist.add(confidence.data[p], gt.data[p] == match.gt_id);
    sum += expected_calibration_error(hist);
  }
  return PeceResult{sum / static_cast<double>(matches.size()),
                    static_cast<std::uint64_t>(matches.size()), false};
}

// uPQ = (1 - pECE) * PQ.
inline double upq(double pq, double pece_value) {
  if (!(pq >= 0.0 && pq <= 1.0)) throw ValidationError("upq: pq must lie in [0,1]");
  if (!(pece_value >= 0.0 && pece_value <= 1.0))
    throw ValidationError("upq: pece must lie in [0,1]");
  return (1.0 - pece_value) * pq;
}

struct ReliabilityRow {
  double bin_center = 0.0;
  double mean_confidence = 0.0;  // 0 for empty bins
  double mean_accuracy = 0.0;    // 0 for empty bins
  std::uint64_t count = 0;
};

// Per-bin reliability statistics; empty bins are emitted with count 0.
inline std::vector<ReliabilityRow> reliability_curve(const CalibrationHistogram& hist) {
  std::vector<ReliabilityRow> rows;
  rows.reserve(hist.bins.size());
  const double width = 1.0 / static_cast<double>(hist.bins.size());
  for (std::size_t i = 0; i < hist.bins.size(); ++i) {
    const CalibrationHistogram::Bin& b = hist.bins[i];
    ReliabilityRow row;
    row.bin_center = (static_cast<double>(i) + 0.5) * width;
    row.count = b.count;
    if (b.count > 0) {
      row.mean_confidence = b.conf_sum / static_cast<double>(b.count);
      row.mean_accuracy = static_cast<double>(b.correct) / static_cast<double>(b.count);
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<ReliabilityRow> reliability_curve(const DenseGrid& confidence,
                                                     const std::vector<std::uint8_t>& correctness,
                                                     unsigned num_bins = 10) {
  if (confidence.channels != 1)
    throw ValidationError("reliability_curve: confidence must be a single-channel field");
  if (correctness.size() != confidence.pixels())
    throw ValidationError("reliability_curve: correctness length does not match pixel count");
  CalibrationHistogram hist(num_bins);
  for (std::size_t p = 0; p < confidence.pixels(); ++p)
    hist.add(confidence.data[p], correctness[p] != 0);
  return reliability_curve(hist);
}

}  // namespace evpan
