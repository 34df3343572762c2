#pragma once

// Dataset-level evaluation: per-image statistics, an accumulator merged
// across images, and the final metric report.
//
// The accumulator keys every per-image contribution by image id. Merging is
// therefore a disjoint map union - exactly associative and commutative, no
// matter how float summation would have reordered - and finalization always
// walks images in key order, so dataset metrics are bit-identical regardless
// of merge order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "evpan/core.hpp"
#include "evpan/grid.hpp"
#include "evpan/metrics.hpp"

namespace evpan {

struct PeceAccum {
  double uece_sum = 0.0;       // sum of per-segment uECE values
  std::uint64_t matches = 0;
};

// Everything one image contributes to dataset metrics.
struct ImageEvalStats {
  std::map<std::uint32_t, ClassCounts> segment_counts;
  std::map<std::uint32_t, PeceAccum> pece_by_class;
  CalibrationHistogram uece_pixels;  // all pixels with non-void gt
  std::map<std::uint32_t, CalibrationHistogram> uece_by_class;  // keyed by predicted class
  bool has_probs = false;
  CalibrationHistogram ece_pixels;
  std::map<std::uint32_t, CalibrationHistogram> ece_by_class;
};

// Evaluates one image. Pixel-level calibration uses class-level correctness
// (predicted class id equals gt class id); segment identity enters through
// pece. probs may be null; when given it enables the max-probability ECE.
inline ImageEvalStats evaluate_image(const PanopticGrid& pred, const PanopticGrid& gt,
                                     const DenseGrid& confidence, const DenseGrid* probs,
                                     const ClassConfig& classes, unsigned num_bins) {
  classes.validate();
  if (pred.height != gt.height || pred.width != gt.width)
    throw ValidationError("evaluate_image: pred/gt dimensions differ");
  if (confidence.channels != 1 || confidence.height != pred.height ||
      confidence.width != pred.width)
    throw ValidationError("evaluate_image: confidence field shape mismatch");

  auto check_grid = [&](const PanopticGrid& grid, const char* name) {
    for (std::uint32_t v : grid.data) {
      if (v == kVoidLabel) continue;
      const std::uint32_t cls = PanopticGrid::class_of(v);
      if (!classes.is_known(cls))
        throw ValidationError(std::string("evaluate_image: ") + name + " contains class " +
                              std::to_string(cls) + " missing from the class config");
      if (classes.is_stuff(cls) && PanopticGrid::instance_of(v) != 0)
        throw ValidationError(std::string("evaluate_image: ") + name + " stuff class " +
                              std::to_string(cls) + " carries an instance index");
    }
  };
  check_grid(pred, "prediction");
  check_grid(gt, "ground truth");
  if (probs != nullptr) {
    if (probs->height != pred.height || probs->width != pred.width ||
        probs->channels != classes.num_classes())
      throw ValidationError("evaluate_image: probability grid shape mismatch");
  }

  ImageEvalStats stats;
  stats.uece_pixels = CalibrationHistogram(num_bins);
  stats.ece_pixels = CalibrationHistogram(num_bins);
  stats.has_probs = probs != nullptr;

  const MatchResult matched = match_segments(pred, gt);
  stats.segment_counts = matched.counts;
  for (const SegmentMatch& match : matched.matches) {
    CalibrationHistogram hist(num_bins);
    for (std::size_t p = 0; p < pred.pixels(); ++p)
      if (pred.data[p] == match.pred_id)
        hist.add(confidence.data[p], gt.data[p] == match.gt_id);
    PeceAccum& acc = stats.pece_by_class[match.class_id()];
    acc.uece_sum += expected_calibration_error(hist);
    ++acc.matches;
  }

  for (std::size_t p = 0; p < pred.pixels(); ++p) {
    const std::uint32_t gv = gt.data[p];
    if (gv == kVoidLabel) continue;
    const std::uint32_t gt_class = PanopticGrid::class_of(gv);
    const std::uint32_t pv = pred.data[p];
    const double conf = confidence.data[p];
    const bool correct = pv != kVoidLabel && PanopticGrid::class_of(pv) == gt_class;
    stats.uece_pixels.add(conf, correct);
    if (pv != kVoidLabel) {
      auto [it, inserted] = stats.uece_by_class.try_emplace(PanopticGrid::class_of(pv),
                                                            CalibrationHistogram(num_bins));
      (void)inserted;
      it->second.add(conf, correct);
    }
    if (probs != nullptr) {
      const double* q = probs->pixel(p);
      std::size_t best = 0;
      for (std::size_t c = 1; c < probs->channels; ++c)
        if (q[c] > q[best]) best = c;
      const bool prob_correct = best == gt_class;
      stats.ece_pixels.add(q[best], prob_correct);
      auto [it, inserted] = stats.ece_by_class.try_emplace(static_cast<std::uint32_t>(best),
                                                           CalibrationHistogram(num_bins));
      (void)inserted;
      it->second.add(q[best], prob_correct);
    }
  }
  return stats;
}

// Accumulator over images; the image id keys every contribution.
struct EvalAccumulator {
  unsigned bins = 10;
  ClassConfig classes;
  std::map<std::string, ImageEvalStats> images;
};

inline void add_image(EvalAccumulator& acc, const std::string& image_id, ImageEvalStats stats) {
  if (!acc.images.emplace(image_id, std::move(stats)).second)
    throw ValidationError("accumulator: duplicate image id '" + image_id + "'");
}

inline EvalAccumulator merge_accumulators(const EvalAccumulator& a, const EvalAccumulator& b) {
  if (a.bins != b.bins || !(a.classes == b.classes))
    throw ValidationError("merge_accumulators: configuration mismatch");
  EvalAccumulator merged = a;
  for (const auto& [id, stats] : b.images) add_image(merged, id, stats);
  return merged;
}

// One scope of the report (overall, things-only, stuff-only, one class, or
// one image). PQ/SQ/RQ are unweighted means over classes that have segments;
// pece pools every matched segment in scope; uece pools pixels.
struct ScopeMetrics {
  double pq = 0.0;
  double sq = 0.0;
  double rq = 0.0;
  double pece = 1.0;
  bool pece_defaulted = true;  // no matches in scope, worst case assigned
  double upq = 0.0;
  std::optional<double> uece;
  std::optional<double> ece;
  std::uint64_t matches = 0;
  std::size_t classes_included = 0;
};

struct ClassReport {
  std::uint32_t class_id = 0;
  bool is_thing = false;
  ClassCounts counts;
  ScopeMetrics metrics;
};

struct ImageReport {
  std::string image_id;
  ScopeMetrics metrics;
};

struct MetricReport {
  unsigned bins = 10;
  ClassConfig classes;
  std::size_t image_count = 0;
  ScopeMetrics overall;
  ScopeMetrics things;
  ScopeMetrics stuff;
  std::vector<ClassReport> per_class;
  // Mean of per-image pooled uECE, the alternative aggregation mode.
  std::optional<double> uece_image_mean;
  std::vector<ReliabilityRow> uece_curve;
  std::optional<std::vector<ReliabilityRow>> ece_curve;
  std::vector<ImageReport> per_image;
};

namespace detail {

struct ClassTotals {
  std::map<std::uint32_t, ClassCounts> counts;
  std::map<std::uint32_t, PeceAccum> pece;
  std::map<std::uint32_t, CalibrationHistogram> uece_hists;
  std::map<std::uint32_t, CalibrationHistogram> ece_hists;
  CalibrationHistogram uece_pixels;
  CalibrationHistogram ece_pixels;
  bool has_probs = false;
};

template <typename Map>
void merge_hist_map(Map& into, const Map& from) {
  for (const auto& [cls, hist] : from) {
    auto [it, inserted] = into.try_emplace(cls, hist);
    if (!inserted) it->second.merge(hist);
  }
}

// Sums image stats in image-id order (std::map iteration), so the result is
// independent of how accumulators were merged.
inline ClassTotals total_stats(const EvalAccumulator& acc) {
  ClassTotals totals;
  totals.uece_pixels = CalibrationHistogram(acc.bins);
  totals.ece_pixels = CalibrationHistogram(acc.bins);
  bool first = true;
  for (const auto& [id, stats] : acc.images) {
    (void)id;
    if (first) {
      totals.has_probs = stats.has_probs;
      first = false;
    } else if (stats.has_probs != totals.has_probs) {
      throw ValidationError("finalize: probability grids must be supplied for all images or none");
    }
    for (const auto& [cls, counts] : stats.segment_counts) {
      ClassCounts& t = totals.counts[cls];
      t.tp += counts.tp;
      t.fp += counts.fp;
      t.fn += counts.fn;
      t.iou_sum += counts.iou_sum;
    }
    for (const auto& [cls, p] : stats.pece_by_class) {
      PeceAccum& t = totals.pece[cls];
      t.uece_sum += p.uece_sum;
      t.matches += p.matches;
    }
    merge_hist_map(totals.uece_hists, stats.uece_by_class);
    totals.uece_pixels.merge(stats.uece_pixels);
    if (stats.has_probs) {
      merge_hist_map(totals.ece_hists, stats.ece_by_class);
      totals.ece_pixels.merge(stats.ece_pixels);
    }
  }
  return totals;
}

// Builds one scope from the class ids it covers. pixel_uece/pixel_ece, when
// given, override the per-class histogram union (used by the overall scope,
// whose pixel domain includes pixels without a predicted class).
inline ScopeMetrics scope_metrics(const ClassTotals& totals,
                                  const std::vector<std::uint32_t>& scope_ids, unsigned bins,
                                  const CalibrationHistogram* pixel_uece,
                                  const CalibrationHistogram* pixel_ece) {
  ScopeMetrics m;
  double pq_sum = 0.0, sq_sum = 0.0, rq_sum = 0.0;
  double pece_sum = 0.0;
  CalibrationHistogram scope_uece(bins), scope_ece(bins);
  for (std::uint32_t id : scope_ids) {
    auto counts_it = totals.counts.find(id);
    if (counts_it != totals.counts.end() && participates(counts_it->second)) {
      const PqMetrics pqm = panoptic_quality(counts_it->second);
      pq_sum += pqm.pq;
      sq_sum += pqm.sq;
      rq_sum += pqm.rq;
      ++m.classes_included;
    }
    auto pece_it = totals.pece.find(id);
    if (pece_it != totals.pece.end()) {
      pece_sum += pece_it->second.uece_sum;
      m.matches += pece_it->second.matches;
    }
    auto hist_it = totals.uece_hists.find(id);
    if (hist_it != totals.uece_hists.end()) scope_uece.merge(hist_it->second);
    auto ece_it = totals.ece_hists.find(id);
    if (ece_it != totals.ece_hists.end()) scope_ece.merge(ece_it->second);
  }
  if (m.classes_included > 0) {
    m.pq = pq_sum / static_cast<double>(m.classes_included);
    m.sq = sq_sum / static_cast<double>(m.classes_included);
    m.rq = rq_sum / static_cast<double>(m.classes_included);
  }
  if (m.matches > 0) {
    m.pece = pece_sum / static_cast<double>(m.matches);
    m.pece_defaulted = false;
  }
  m.upq = upq(m.pq, m.pece);
  const CalibrationHistogram& uece_hist = pixel_uece ? *pixel_uece : scope_uece;
  if (uece_hist.total() > 0) m.uece = expected_calibration_error(uece_hist);
  if (totals.has_probs) {
    const CalibrationHistogram& ece_hist = pixel_ece ? *pixel_ece : scope_ece;
    if (ece_hist.total() > 0) m.ece = expected_calibration_error(ece_hist);
  }
  return m;
}

}  // namespace detail

// Collapses the accumulator into the final report. Deterministic for a given
// image set regardless of accumulation order.
inline MetricReport finalize(const EvalAccumulator& acc, bool with_per_image = false) {
  acc.classes.validate();
  if (acc.images.empty()) throw ValidationError("finalize: no images accumulated");
  const detail::ClassTotals totals = detail::total_stats(acc);

  MetricReport report;
  report.bins = acc.bins;
  report.classes = acc.classes;
  report.image_count = acc.images.size();

  report.overall = detail::scope_metrics(totals, acc.classes.all_ids(), acc.bins,
                                         &totals.uece_pixels,
                                         totals.has_probs ? &totals.ece_pixels : nullptr);
  std::vector<std::uint32_t> thing_ids = acc.classes.thing;
  std::sort(thing_ids.begin(), thing_ids.end());
  std::vector<std::uint32_t> stuff_ids = acc.classes.stuff;
  std::sort(stuff_ids.begin(), stuff_ids.end());
  report.things = detail::scope_metrics(totals, thing_ids, acc.bins, nullptr, nullptr);
  report.stuff = detail::scope_metrics(totals, stuff_ids, acc.bins, nullptr, nullptr);

  for (std::uint32_t id : acc.classes.all_ids()) {
    ClassReport row;
    row.class_id = id;
    row.is_thing = acc.classes.is_thing(id);
    auto counts_it = totals.counts.find(id);
    if (counts_it != totals.counts.end()) row.counts = counts_it->second;
    row.metrics = detail::scope_metrics(totals, {id}, acc.bins, nullptr, nullptr);
    report.per_class.push_back(std::move(row));
  }

  double image_uece_sum = 0.0;
  std::size_t image_uece_count = 0;
  for (const auto& [id, stats] : acc.images) {
    (void)id;
    if (stats.uece_pixels.total() == 0) continue;
    image_uece_sum += expected_calibration_error(stats.uece_pixels);
    ++image_uece_count;
  }
  if (image_uece_count > 0)
    report.uece_image_mean = image_uece_sum / static_cast<double>(image_uece_count);

  report.uece_curve = reliability_curve(totals.uece_pixels);
  if (totals.has_probs) report.ece_curve = reliability_curve(totals.ece_pixels);

  if (with_per_image) {
    for (const auto& [id, stats] : acc.images) {
      EvalAccumulator single{acc.bins, acc.classes, {}};
      single.images.emplace(id, stats);
      const detail::ClassTotals image_totals = detail::total_stats(single);
      ImageReport row;
      row.image_id = id;
      row.metrics = detail::scope_metrics(image_totals, acc.classes.all_ids(), acc.bins,
                                          &image_totals.uece_pixels,
                                          image_totals.has_probs ? &image_totals.ece_pixels
                                                                 : nullptr);
      report.per_image.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace evpan
