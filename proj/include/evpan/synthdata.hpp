#pragma once

// Seeded synthetic scenes with controllable prediction quality: ground-truth
// panoptic grids (Voronoi stuff regions plus non-overlapping rectangle or
// ellipse instances) and a synthetic predictor whose confidence and error
// rate are dialed in exactly. Every draw below is documented so a test (or
// another language) can replay the procedure draw by draw.
//
// Scene stream (StreamRng(seed, kSceneStream)), in order:
//   1. 3 * n_stuff Voronoi sites, two draws each: row = next_below(H),
//      col = next_below(W); site k paints stuff class k mod n_stuff; pixels
//      take the nearest site by squared distance, ties to the lowest k.
//   2. Per instance, up to 100 placement attempts of six draws each:
//      class offset = next_below(n_thing), shape = next_below(2)
//      (0 rectangle, 1 ellipse), h = min_d + next_below(max_d - min_d + 1)
//      with min_d = max(2, H/10), max_d = max(min_d, H/4), likewise w with
//      W, then y0 = next_below(H - h + 1), x0 = next_below(W - w + 1).
//      Ellipse pixels satisfy ((y+0.5-cy)/ry)^2 + ((x+0.5-cx)/rx)^2 <= 1
//      with cy = y0 + h/2, ry = h/2 (likewise x). An attempt that collides
//      with an already placed instance (or produces no pixels) is retried;
//      exhausting the budget is an error.
//
// Noise stream (StreamRng(seed, kNoiseStream)), in order:
//   1. Three draws per pixel in row-major order, consumed regardless of
//      configuration so the stream layout never shifts: u1 (confidence),
//      u2 (correctness), u3 (wrong-class choice). Calibrated mode draws the
//      pixel confidence conf = 0.55 + 0.40 * u1 and the pixel is wrong when
//      u2 >= conf; fixed mode uses conf = target_confidence and the pixel is
//      wrong when u2 < noise_level. A wrong pixel predicts class
//      (gt + 1 + floor(u3 * (C-1))) mod C. The predicted channel gets logit
//      softplus_inverse(C * conf / (1 - conf)) so that 1 - u reproduces conf
//      exactly; every other channel gets logit -40 (evidence ~ 4e-18).
//   2. Four draws per ground-truth instance in ascending encoded-id order:
//      jy0, jx0, jy1, jx1, each shifting the tight bbox edge by
//      round((2u - 1) * noise_level * extent * 0.25) pixels, clamped to keep
//      the box non-degenerate and inside the image.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evpan/core.hpp"
#include "evpan/evidential.hpp"
#include "evpan/fusion.hpp"
#include "evpan/grid.hpp"
#include "evpan/rng.hpp"

namespace evpan {

struct SceneConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint32_t n_stuff = 3;
  std::uint32_t n_thing = 2;
  std::size_t n_instances = 4;
  double noise_level = 0.0;
  double target_confidence = 0.9;
  // When set, per-pixel confidence is drawn from U[0.55, 0.95] and
  // correctness is sampled with exactly that probability, making the
  // predictor calibrated by construction.
  bool calibrated = false;
  std::uint64_t seed = 0;

  std::uint32_t num_classes() const { return n_stuff + n_thing; }

  void validate() const {
    if (height == 0 || width == 0)
      throw ValidationError("scene config: dimensions must be positive");
    if (n_stuff < 1) throw ValidationError("scene config: need at least one stuff class");
    if (n_instances > 0 && n_thing == 0)
      throw ValidationError("scene config: instances require at least one thing class");
    if (!(noise_level >= 0.0) || !std::isfinite(noise_level))
      throw ValidationError("scene config: noise_level must be non-negative and finite");
    if (!(target_confidence > 0.0 && target_confidence <= 1.0))
      throw ValidationError("scene config: target_confidence must lie in (0,1]");
  }
};

// Stuff [0, n_stuff), things [n_stuff, n_stuff + n_thing).
inline ClassConfig scene_classes(const SceneConfig& cfg) {
  cfg.validate();
  ClassConfig classes;
  for (std::uint32_t c = 0; c < cfg.n_stuff; ++c) classes.stuff.push_back(c);
  for (std::uint32_t c = 0; c < cfg.n_thing; ++c) classes.thing.push_back(cfg.n_stuff + c);
  classes.validate();
  return classes;
}

struct Scene {
  PanopticGrid gt;
  LabelGrid gt_labels;
};

inline Scene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  StreamRng rng(cfg.seed, kSceneStream);
  const std::size_t height = cfg.height, width = cfg.width;

  struct Site {
    std::size_t row, col;
    std::uint32_t cls;
  };
  std::vector<Site> sites;
  const std::size_t n_sites = 3 * static_cast<std::size_t>(cfg.n_stuff);
  sites.reserve(n_sites);
  for (std::size_t k = 0; k < n_sites; ++k) {
    const std::size_t row = rng.next_below(height);
    const std::size_t col = rng.next_below(width);
    sites.push_back(Site{row, col, static_cast<std::uint32_t>(k % cfg.n_stuff)});
  }

  LabelGrid stuff_labels(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t best = 0;
      std::int64_t best_d2 = -1;
      for (std::size_t k = 0; k < sites.size(); ++k) {
        const std::int64_t dy = static_cast<std::int64_t>(y) -
                                static_cast<std::int64_t>(sites[k].row);
        const std::int64_t dx = static_cast<std::int64_t>(x) -
                                static_cast<std::int64_t>(sites[k].col);
        const std::int64_t d2 = dy * dy + dx * dx;
        if (best_d2 < 0 || d2 < best_d2) {
          best_d2 = d2;
          best = k;
        }
      }
      stuff_labels.at(y, x) = sites[best].cls;
    }
  }

  // Instance placement with a bounded retry budget per instance.
  std::vector<std::uint32_t> occupancy(height * width, 0);  // 0 = free, else encoded id
  std::vector<std::uint32_t> per_class_count(cfg.num_classes(), 0);
  const std::size_t min_h = std::max<std::size_t>(2, height / 10);
  const std::size_t max_h = std::max(min_h, height / 4);
  const std::size_t min_w = std::max<std::size_t>(2, width / 10);
  const std::size_t max_w = std::max(min_w, width / 4);
  constexpr int kAttemptsPerInstance = 100;

  for (std::size_t j = 0; j < cfg.n_instances; ++j) {
    bool placed = false;
    for (int attempt = 0; attempt < kAttemptsPerInstance && !placed; ++attempt) {
      const std::uint32_t cls =
          cfg.n_stuff + static_cast<std::uint32_t>(rng.next_below(cfg.n_thing));
      const bool ellipse = rng.next_below(2) == 1;
      const std::size_t h = min_h + rng.next_below(max_h - min_h + 1);
      const std::size_t w = min_w + rng.next_below(max_w - min_w + 1);
      if (h > height || w > width) continue;  // image smaller than the minimum shape
      const std::size_t y0 = rng.next_below(height - h + 1);
      const std::size_t x0 = rng.next_below(width - w + 1);

      std::vector<std::size_t> shape_pixels;
      const double cy = static_cast<double>(y0) + static_cast<double>(h) / 2.0;
      const double cx = static_cast<double>(x0) + static_cast<double>(w) / 2.0;
      const double ry = static_cast<double>(h) / 2.0;
      const double rx = static_cast<double>(w) / 2.0;
      for (std::size_t y = y0; y < y0 + h; ++y) {
        for (std::size_t x = x0; x < x0 + w; ++x) {
          if (ellipse) {
            const double ny = (static_cast<double>(y) + 0.5 - cy) / ry;
            const double nx = (static_cast<double>(x) + 0.5 - cx) / rx;
            if (ny * ny + nx * nx > 1.0) continue;
          }
          shape_pixels.push_back(y * width + x);
        }
      }
      if (shape_pixels.empty()) continue;
      bool collides = false;
      for (std::size_t p : shape_pixels) {
        if (occupancy[p] != 0) {
          collides = true;
          break;
        }
      }
      if (collides) continue;

      const std::uint32_t encoded = PanopticGrid::encode(cls, ++per_class_count[cls]);
      for (std::size_t p : shape_pixels) occupancy[p] = encoded;
      placed = true;
    }
    if (!placed)
      throw ValidationError("generate_scene: could not place instance " + std::to_string(j) +
                            " without overlap after " + std::to_string(kAttemptsPerInstance) +
                            " attempts");
  }

  Scene scene{PanopticGrid(height, width), LabelGrid(height, width)};
  for (std::size_t p = 0; p < occupancy.size(); ++p) {
    const std::uint32_t encoded =
        occupancy[p] != 0 ? occupancy[p] : PanopticGrid::encode(stuff_labels.data[p], 0);
    scene.gt.data[p] = encoded;
    scene.gt_labels.data[p] = PanopticGrid::class_of(encoded);
  }
  return scene;
}

struct SynthPredictions {
  DenseGrid semantic_logits;
  std::vector<InstancePrediction> instances;
};

namespace detail {

// Largest confidence representable with finite evidence; keeps
// softplus_inverse and downstream arithmetic finite when the target is 1.
inline double clamp_confidence(double conf) { return std::min(conf, 1.0 - 1e-9); }

inline std::int64_t jitter_shift(double u, double noise_level, std::size_t extent) {
  return static_cast<std::int64_t>(
      std::llround((2.0 * u - 1.0) * noise_level * static_cast<double>(extent) * 0.25));
}

}  // namespace detail

// Synthesizes predictor outputs for a ground-truth grid: semantic logits
// whose Dirichlet confidence 1-u reproduces the configured confidence
// exactly, plus instance predictions cut from the ground truth with
// noise-scaled bbox jitter. See the stream documentation at the top.
inline SynthPredictions synthesize_predictions(const PanopticGrid& gt, const SceneConfig& cfg) {
  cfg.validate();
  const std::uint32_t num_classes = cfg.num_classes();
  if (num_classes < 2)
    throw ValidationError("synthesize_predictions: need at least 2 classes in total");
  if (gt.height != cfg.height || gt.width != cfg.width)
    throw ValidationError("synthesize_predictions: gt dimensions do not match config");

  StreamRng rng(cfg.seed, kNoiseStream);
  SynthPredictions out{DenseGrid(gt.height, gt.width, num_classes, -40.0), {}};

  for (std::size_t p = 0; p < gt.pixels(); ++p) {
    const double u1 = rng.next_double();
    const double u2 = rng.next_double();
    const double u3 = rng.next_double();
    const std::uint32_t gt_class = PanopticGrid::class_of(gt.data[p]);
    if (gt_class >= num_classes)
      throw ValidationError("synthesize_predictions: gt class out of range");
    const double conf =
        cfg.calibrated ? 0.55 + 0.40 * u1 : cfg.target_confidence;
    const bool wrong = cfg.calibrated ? u2 >= conf : u2 < cfg.noise_level;
    std::uint32_t pred_class = gt_class;
    if (wrong) {
      const std::uint32_t offset =
          1 + static_cast<std::uint32_t>(u3 * static_cast<double>(num_classes - 1));
      pred_class = (gt_class + offset) % num_classes;
    }
    const double conf_eff = detail::clamp_confidence(conf);
    const double evidence_total =
        static_cast<double>(num_classes) * conf_eff / (1.0 - conf_eff);
    out.semantic_logits.pixel(p)[pred_class] = softplus_inverse(evidence_total);
  }

  // Ground-truth thing segments in ascending encoded-id order.
  std::map<std::uint32_t, std::vector<std::size_t>> segments;
  for (std::size_t p = 0; p < gt.pixels(); ++p) {
    const std::uint32_t v = gt.data[p];
    if (v != kVoidLabel && PanopticGrid::instance_of(v) != 0) segments[v].push_back(p);
  }

  const double mask_conf = detail::clamp_confidence(cfg.target_confidence);
  const double mask_logit = softplus_inverse(2.0 * mask_conf / (1.0 - mask_conf));
  constexpr std::size_t kMaskSize = 28;

  for (const auto& [encoded, pixel_list] : segments) {
    std::size_t y_lo = gt.height, y_hi = 0, x_lo = gt.width, x_hi = 0;
    for (std::size_t p : pixel_list) {
      const std::size_t y = p / gt.width, x = p % gt.width;
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y + 1);
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x + 1);
    }
    const std::size_t extent_h = y_hi - y_lo, extent_w = x_hi - x_lo;
    const double jy0 = rng.next_double(), jx0 = rng.next_double();
    const double jy1 = rng.next_double(), jx1 = rng.next_double();
    std::int64_t by0 = static_cast<std::int64_t>(y_lo) +
                       detail::jitter_shift(jy0, cfg.noise_level, extent_h);
    std::int64_t bx0 = static_cast<std::int64_t>(x_lo) +
                       detail::jitter_shift(jx0, cfg.noise_level, extent_w);
    std::int64_t by1 = static_cast<std::int64_t>(y_hi) +
                       detail::jitter_shift(jy1, cfg.noise_level, extent_h);
    std::int64_t bx1 = static_cast<std::int64_t>(x_hi) +
                       detail::jitter_shift(jx1, cfg.noise_level, extent_w);
    by0 = std::clamp<std::int64_t>(by0, 0, static_cast<std::int64_t>(gt.height) - 1);
    bx0 = std::clamp<std::int64_t>(bx0, 0, static_cast<std::int64_t>(gt.width) - 1);
    by1 = std::clamp<std::int64_t>(by1, by0 + 1, static_cast<std::int64_t>(gt.height));
    bx1 = std::clamp<std::int64_t>(bx1, bx0 + 1, static_cast<std::int64_t>(gt.width));

    const std::size_t box_h = static_cast<std::size_t>(by1 - by0);
    const std::size_t box_w = static_cast<std::size_t>(bx1 - bx0);
    DenseGrid mask(kMaskSize, kMaskSize, 1);
    for (std::size_t r = 0; r < kMaskSize; ++r) {
      const std::size_t y =
          box_h > 1 ? static_cast<std::size_t>(by0) +
                          static_cast<std::size_t>(std::llround(
                              static_cast<double>(r) * static_cast<double>(box_h - 1) /
                              static_cast<double>(kMaskSize - 1)))
                    : static_cast<std::size_t>(by0);
      for (std::size_t c = 0; c < kMaskSize; ++c) {
        const std::size_t x =
            box_w > 1 ? static_cast<std::size_t>(bx0) +
                            static_cast<std::size_t>(std::llround(
                                static_cast<double>(c) * static_cast<double>(box_w - 1) /
                                static_cast<double>(kMaskSize - 1)))
                      : static_cast<std::size_t>(bx0);
        mask.at(r, c, 0) = gt.at(y, x) == encoded ? mask_logit : -mask_logit;
      }
    }

    InstancePrediction inst;
    inst.bbox = BBox(static_cast<std::size_t>(bx0), static_cast<std::size_t>(by0),
                     static_cast<std::size_t>(bx1), static_cast<std::size_t>(by1));
    inst.class_id = PanopticGrid::class_of(encoded);
    inst.class_prob = cfg.target_confidence;
    inst.mask_logits = std::move(mask);
    out.instances.push_back(std::move(inst));
  }
  return out;
}

}  // namespace evpan
