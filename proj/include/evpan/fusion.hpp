#pragma once

// Probabilistic panoptic fusion: semantic logits plus instance predictions
// in, panoptic grid plus per-pixel uncertainty out.
//
// Pipeline: filter instances by class probability, rasterize each 28x28 mask
// into the image, greedily drop heavily overlapping masks (highest
// probability wins), build per-instance probability/uncertainty fields from
// a 2-channel foreground Dirichlet, average them with the bbox-cropped
// semantic fields, then argmax over the stacked semantic + instance channels.
// Pixels no instance wins fall back to the best stuff class.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "evpan/core.hpp"
#include "evpan/evidential.hpp"
#include "evpan/grid.hpp"

namespace evpan {

struct InstancePrediction {
  BBox bbox;
  std::uint32_t class_id = 0;
  double class_prob = 0.0;
  DenseGrid mask_logits;  // foreground logits, usually 28x28x1
};

struct PanopticResult {
  PanopticGrid panoptic;
  DenseGrid uncertainty;  // H x W x 1, in (0,1]
  std::vector<InstancePrediction> instances_kept;
};

// Keeps instances with class_prob >= threshold (boundary inclusive: the rule
// discards those *below* the threshold), stably sorted by descending
// probability.
inline std::vector<InstancePrediction> filter_instances(std::vector<InstancePrediction> instances,
                                                        double threshold = 0.5) {
  for (const InstancePrediction& inst : instances)
    if (!(inst.class_prob >= 0.0 && inst.class_prob <= 1.0))
      throw ValidationError("filter_instances: class_prob must be in [0,1]");
  std::vector<InstancePrediction> kept;
  kept.reserve(instances.size());
  for (InstancePrediction& inst : instances)
    if (inst.class_prob >= threshold) kept.push_back(std::move(inst));
  std::stable_sort(kept.begin(), kept.end(),
                   [](const InstancePrediction& a, const InstancePrediction& b) {
                     return a.class_prob > b.class_prob;
                   });
  return kept;
}

// Sentinel for pixels outside an instance's bbox: zero foreground evidence.
inline constexpr double kOutsideLogit = -std::numeric_limits<double>::infinity();

struct RasterizedInstance {
  InstancePrediction instance;
  BinaryMask mask;    // sigmoid(logit) > 0.5, false outside bbox
  DenseGrid logits;   // H x W x 1 foreground logits, kOutsideLogit outside bbox
};

// Bilinearly resizes the instance's mask logits to its bbox extent and pastes
// them into a full-resolution field. The binary mask takes pixels with
// sigmoid strictly above 0.5, i.e. logit > 0.
inline RasterizedInstance rasterize_instance(InstancePrediction inst, std::size_t height,
                                             std::size_t width) {
  inst.bbox.require_within(height, width, "rasterize_instance");
  if (inst.mask_logits.channels != 1)
    throw ValidationError("rasterize_instance: mask logits must have a single channel");
  require_finite(inst.mask_logits, "rasterize_instance");
  const DenseGrid box_logits =
      resize_bilinear(inst.mask_logits, inst.bbox.height(), inst.bbox.width());
  RasterizedInstance out{std::move(inst), BinaryMask(height, width, 0),
                         DenseGrid(height, width, 1, kOutsideLogit)};
  for (std::size_t y = 0; y < out.instance.bbox.height(); ++y) {
    for (std::size_t x = 0; x < out.instance.bbox.width(); ++x) {
      const double logit = box_logits.at(y, x, 0);
      const std::size_t iy = out.instance.bbox.y0 + y, ix = out.instance.bbox.x0 + x;
      out.logits.at(iy, ix, 0) = logit;
      out.mask.at(iy, ix) = logit > 0.0 ? 1 : 0;
    }
  }
  return out;
}

// Greedy pass in the given (descending-probability) order: a candidate is
// dropped if its binary mask has IoU strictly above overlap_threshold with
// any mask kept so far. Survivors may still partially overlap; the final
// argmax settles ownership.
inline std::vector<RasterizedInstance> resolve_overlaps(std::vector<RasterizedInstance> instances,
                                                        double overlap_threshold = 0.5) {
  std::vector<RasterizedInstance> kept;
  kept.reserve(instances.size());
  for (RasterizedInstance& candidate : instances) {
    bool discard = false;
    for (const RasterizedInstance& winner : kept) {
      if (iou(candidate.mask, winner.mask) > overlap_threshold) {
        discard = true;
        break;
      }
    }
    if (!discard) kept.push_back(std::move(candidate));
  }
  return kept;
}

// Paired per-pixel probability and uncertainty fields (both H x W x 1).
struct ProbUncFields {
  DenseGrid prob;
  DenseGrid unc;
};

// Foreground probability and uncertainty from the rasterized logits via a
// 2-channel Dirichlet: foreground alpha = softplus(logit) + 1, background
// alpha = 1 (no explicit background evidence). Outside the bbox the
// zero-evidence convention applies: P_I = 0, U_I = 1.
inline ProbUncFields instance_uncertainty_fields(const DenseGrid& rasterized_logits) {
  if (rasterized_logits.channels != 1)
    throw ValidationError("instance_uncertainty_fields: expected a single-channel field");
  ProbUncFields out{DenseGrid(rasterized_logits.height, rasterized_logits.width, 1),
                    DenseGrid(rasterized_logits.height, rasterized_logits.width, 1)};
  for (std::size_t p = 0; p < rasterized_logits.pixels(); ++p) {
    const double logit = rasterized_logits.data[p];
    if (logit == kOutsideLogit) {
      out.prob.data[p] = 0.0;
      out.unc.data[p] = 1.0;
    } else {
      const double alpha_fg = softplus(logit) + 1.0;
      const double strength = alpha_fg + 1.0;
      out.prob.data[p] = alpha_fg / strength;
      out.unc.data[p] = 2.0 / strength;
    }
  }
  return out;
}

// Crops the semantic fields to the instance view: inside the bbox its
// class-probability channel and the semantic uncertainty pass through;
// outside, probability 0 and maximal uncertainty 1.
inline ProbUncFields semantic_instance_fields(const DenseGrid& semantic_probs,
                                              const DenseGrid& semantic_unc,
                                              const InstancePrediction& inst) {
  if (inst.class_id >= semantic_probs.channels)
    throw ValidationError("semantic_instance_fields: class id " +
                          std::to_string(inst.class_id) + " out of range for " +
                          std::to_string(semantic_probs.channels) + " channels");
  if (semantic_unc.channels != 1 || semantic_unc.height != semantic_probs.height ||
      semantic_unc.width != semantic_probs.width)
    throw ValidationError("semantic_instance_fields: uncertainty shape mismatch");
  inst.bbox.require_within(semantic_probs.height, semantic_probs.width,
                           "semantic_instance_fields");
  ProbUncFields out{DenseGrid(semantic_probs.height, semantic_probs.width, 1, 0.0),
                    DenseGrid(semantic_probs.height, semantic_probs.width, 1, 1.0)};
  for (std::size_t y = inst.bbox.y0; y < inst.bbox.y1; ++y) {
    for (std::size_t x = inst.bbox.x0; x < inst.bbox.x1; ++x) {
      out.prob.at(y, x, 0) = semantic_probs.at(y, x, inst.class_id);
      out.unc.at(y, x, 0) = semantic_unc.at(y, x, 0);
    }
  }
  return out;
}

// Per-pixel arithmetic mean of the instance-head and semantic-head fields.
inline ProbUncFields fuse_fields(const ProbUncFields& instance_fields,
                                 const ProbUncFields& semantic_fields) {
  if (!instance_fields.prob.same_shape(semantic_fields.prob) ||
      !instance_fields.unc.same_shape(semantic_fields.unc))
    throw ValidationError("fuse_fields: shape mismatch");
  ProbUncFields out{DenseGrid(instance_fields.prob.height, instance_fields.prob.width, 1),
                    DenseGrid(instance_fields.unc.height, instance_fields.unc.width, 1)};
  for (std::size_t p = 0; p < out.prob.pixels(); ++p) {
    out.prob.data[p] = 0.5 * (instance_fields.prob.data[p] + semantic_fields.prob.data[p]);
    out.unc.data[p] = 0.5 * (instance_fields.unc.data[p] + semantic_fields.unc.data[p]);
  }
  return out;
}

struct FusedInstance {
  InstancePrediction instance;
  ProbUncFields fields;  // P_F, U_F
};

// Final merge: argmax over the C semantic probability channels followed by
// one fused channel per instance; ties go to the lowest index with semantic
// channels first. Instance-won pixels receive (class_id, dense instance
// index) and the instance's fused uncertainty; every other pixel falls back
// to the best stuff class with the semantic uncertainty. Instances that win
// no pixels are dropped.
inline PanopticResult panoptic_merge(const DenseGrid& semantic_probs,
                                     const DenseGrid& semantic_unc,
                                     const std::vector<FusedInstance>& fused,
                                     const ClassConfig& classes) {
  classes.validate();
  if (classes.stuff.empty())
    throw ValidationError("panoptic_merge: no stuff classes configured, cannot fill background");
  if (classes.stuff.size() + classes.thing.size() != classes.num_classes())
    throw ValidationError("panoptic_merge: class config must cover ids 0..C-1 densely");
  if (semantic_probs.channels != classes.num_classes())
    throw ValidationError("panoptic_merge: semantic channels (" +
                          std::to_string(semantic_probs.channels) +
                          ") do not match configured classes (" +
                          std::to_string(classes.num_classes()) + ")");
  if (semantic_unc.channels != 1 || semantic_unc.height != semantic_probs.height ||
      semantic_unc.width != semantic_probs.width)
    throw ValidationError("panoptic_merge: uncertainty shape mismatch");
  for (double u : semantic_unc.data)
    if (!(u > 0.0 && u <= 1.0))
      throw ValidationError("panoptic_merge: semantic uncertainty must lie in (0,1]");
  for (const FusedInstance& f : fused) {
    if (!classes.is_thing(f.instance.class_id))
      throw ValidationError("panoptic_merge: instance class " +
                            std::to_string(f.instance.class_id) + " is not a thing class");
    if (!f.fields.prob.same_shape(semantic_unc) || !f.fields.unc.same_shape(semantic_unc))
      throw ValidationError("panoptic_merge: fused field shape mismatch");
  }

  const std::size_t num_classes = semantic_probs.channels;
  const std::size_t pixels = semantic_probs.pixels();

  // Winning channel per pixel: [0, C) semantic, C + k for instance k.
  std::vector<std::size_t> winner(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* sem = semantic_probs.pixel(p);
    std::size_t best = 0;
    double best_value = sem[0];
    for (std::size_t c = 1; c < num_classes; ++c) {
      if (sem[c] > best_value) {
        best = c;
        best_value = sem[c];
      }
    }
    for (std::size_t k = 0; k < fused.size(); ++k) {
      const double v = fused[k].fields.prob.data[p];
      if (v > best_value) {
        best = num_classes + k;
        best_value = v;
      }
    }
    winner[p] = best;
  }

  // Dense instance ids per class, in input (descending probability) order.
  std::vector<std::size_t> instance_pixel_count(fused.size(), 0);
  for (std::size_t p = 0; p < pixels; ++p)
    if (winner[p] >= num_classes) ++instance_pixel_count[winner[p] - num_classes];
  std::vector<std::uint32_t> instance_index(fused.size(), 0);
  std::vector<std::uint32_t> next_index(num_classes, 1);
  PanopticResult result{PanopticGrid(semantic_probs.height, semantic_probs.width),
                        DenseGrid(semantic_probs.height, semantic_probs.width, 1),
                        {}};
  for (std::size_t k = 0; k < fused.size(); ++k) {
    if (instance_pixel_count[k] == 0) continue;
    instance_index[k] = next_index[fused[k].instance.class_id]++;
    result.instances_kept.push_back(fused[k].instance);
  }

  for (std::size_t p = 0; p < pixels; ++p) {
    if (winner[p] >= num_classes) {
      const std::size_t k = winner[p] - num_classes;
      result.panoptic.data[p] =
          PanopticGrid::encode(fused[k].instance.class_id, instance_index[k]);
      result.uncertainty.data[p] = fused[k].fields.unc.data[p];
    } else {
      const double* sem = semantic_probs.pixel(p);
      std::uint32_t best_stuff = classes.stuff[0];
      for (std::uint32_t id : classes.stuff)
        if (sem[id] > sem[best_stuff] || (id < best_stuff && sem[id] == sem[best_stuff]))
          best_stuff = id;
      result.panoptic.data[p] = PanopticGrid::encode(best_stuff, 0);
      result.uncertainty.data[p] = semantic_unc.data[p];
    }
  }
  return result;
}

struct FusionOptions {
  double score_threshold = 0.5;
  double overlap_threshold = 0.5;
  Activation activation = Activation::kSoftplus;
};

// End-to-end fusion from raw semantic logits and raw instance predictions.
inline PanopticResult run_probabilistic_fusion(const DenseGrid& semantic_logits,
                                               std::vector<InstancePrediction> instances,
                                               const ClassConfig& classes,
                                               const FusionOptions& options = {}) {
  const DirichletField field = dirichlet_from_logits(semantic_logits, options.activation);
  const DenseGrid semantic_probs = class_probabilities(field);
  const DenseGrid semantic_unc = predictive_uncertainty(field);

  for (const InstancePrediction& inst : instances)
    if (!classes.is_thing(inst.class_id))
      throw ValidationError("fusion: instance class " + std::to_string(inst.class_id) +
                            " is not a thing class");

  std::vector<InstancePrediction> filtered =
      filter_instances(std::move(instances), options.score_threshold);
  std::vector<RasterizedInstance> rasterized;
  rasterized.reserve(filtered.size());
  for (InstancePrediction& inst : filtered)
    rasterized.push_back(
        rasterize_instance(std::move(inst), semantic_logits.height, semantic_logits.width));
  std::vector<RasterizedInstance> survivors =
      resolve_overlaps(std::move(rasterized), options.overlap_threshold);

  std::vector<FusedInstance> fused;
  fused.reserve(survivors.size());
  for (RasterizedInstance& r : survivors) {
    ProbUncFields instance_fields = instance_uncertainty_fields(r.logits);
    ProbUncFields semantic_fields =
        semantic_instance_fields(semantic_probs, semantic_unc, r.instance);
    fused.push_back(FusedInstance{std::move(r.instance),
                                  fuse_fields(instance_fields, semantic_fields)});
  }
  return panoptic_merge(semantic_probs, semantic_unc, fused, classes);
}

}  // namespace evpan
