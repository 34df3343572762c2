#include <array>
#include <cmath>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "evpan/grid.hpp"
#include "evpan/rng.hpp"
#include "evpan/synthdata.hpp"

using namespace evpan;

namespace {

// Re-creates the documented scene recipe step by step, independently of
// generate_scene, so any drift between the documentation and the code fails
// loudly.
PanopticGrid replay_scene_recipe(const SceneConfig& cfg) {
  StreamRng rng(cfg.seed, kSceneStream);
  std::vector<std::size_t> site_row, site_col;
  std::vector<std::uint32_t> site_cls;
  for (std::uint32_t k = 0; k < 3 * cfg.n_stuff; ++k) {
    site_row.push_back(rng.next_below(cfg.height));
    site_col.push_back(rng.next_below(cfg.width));
    site_cls.push_back(k % cfg.n_stuff);
  }

  auto nearest_site_class = [&](std::size_t y, std::size_t x) {
    std::size_t best_k = 0;
    long long best = -1;
    for (std::size_t k = 0; k < site_row.size(); ++k) {
      const long long dy = static_cast<long long>(y) - static_cast<long long>(site_row[k]);
      const long long dx = static_cast<long long>(x) - static_cast<long long>(site_col[k]);
      const long long d2 = dy * dy + dx * dx;
      if (best < 0 || d2 < best) {
        best = d2;
        best_k = k;
      }
    }
    return site_cls[best_k];
  };

  const std::size_t min_h = std::max<std::size_t>(2, cfg.height / 10);
  const std::size_t max_h = std::max(min_h, cfg.height / 4);
  const std::size_t min_w = std::max<std::size_t>(2, cfg.width / 10);
  const std::size_t max_w = std::max(min_w, cfg.width / 4);

  std::map<std::size_t, std::uint32_t> occupied;  // pixel -> encoded id
  std::map<std::uint32_t, std::uint32_t> counts;  // class -> instances so far
  for (std::size_t j = 0; j < cfg.n_instances; ++j) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const std::uint32_t cls =
          cfg.n_stuff + static_cast<std::uint32_t>(rng.next_below(cfg.n_thing));
      const bool ellipse = rng.next_below(2) == 1;
      const std::size_t h = min_h + rng.next_below(max_h - min_h + 1);
      const std::size_t w = min_w + rng.next_below(max_w - min_w + 1);
      const std::size_t y0 = rng.next_below(cfg.height - h + 1);
      const std::size_t x0 = rng.next_below(cfg.width - w + 1);

      std::vector<std::size_t> pixels;
      for (std::size_t y = y0; y < y0 + h; ++y)
        for (std::size_t x = x0; x < x0 + w; ++x) {
          if (ellipse) {
            const double ny = (y + 0.5 - (y0 + h / 2.0)) / (h / 2.0);
            const double nx = (x + 0.5 - (x0 + w / 2.0)) / (w / 2.0);
            if (ny * ny + nx * nx > 1.0) continue;
          }
          pixels.push_back(y * cfg.width + x);
        }
      if (pixels.empty()) continue;
      bool collides = false;
      for (std::size_t p : pixels) collides = collides || occupied.count(p) != 0;
      if (collides) continue;
      const std::uint32_t encoded = PanopticGrid::encode(cls, ++counts[cls]);
      for (std::size_t p : pixels) occupied[p] = encoded;
      placed = true;
    }
    if (!placed) throw std::runtime_error("oracle placement failed");
  }

  PanopticGrid gt(cfg.height, cfg.width);
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x) {
      const auto it = occupied.find(y * cfg.width + x);
      gt.at(y, x) = it != occupied.end()
                        ? it->second
                        : PanopticGrid::encode(nearest_site_class(y, x), 0);
    }
  return gt;
}

}  // namespace

TEST(Scene, GenerationIsDeterministic) {
  SceneConfig cfg;
  cfg.seed = 123;
  const Scene a = generate_scene(cfg);
  const Scene b = generate_scene(cfg);
  EXPECT_EQ(a.gt.data, b.gt.data);
  EXPECT_EQ(a.gt_labels.data, b.gt_labels.data);
  cfg.seed = 124;
  const Scene c = generate_scene(cfg);
  EXPECT_NE(a.gt.data, c.gt.data);
}

TEST(Scene, MatchesDocumentedRecipe) {
  for (std::uint64_t seed : {0, 1, 7, 19}) {
    SceneConfig cfg;
    cfg.height = 40;
    cfg.width = 48;
    cfg.n_stuff = 2;
    cfg.n_thing = 3;
    cfg.n_instances = 3;
    cfg.seed = seed;
    const Scene scene = generate_scene(cfg);
    const PanopticGrid expected = replay_scene_recipe(cfg);
    EXPECT_EQ(scene.gt.data, expected.data) << "seed " << seed;
  }
}

TEST(Scene, InvariantsHold) {
  SceneConfig cfg;
  cfg.seed = 5;
  cfg.n_instances = 6;
  const Scene scene = generate_scene(cfg);
  std::map<std::uint32_t, std::set<std::uint32_t>> instance_ids;
  for (std::size_t p = 0; p < scene.gt.pixels(); ++p) {
    const std::uint32_t v = scene.gt.data[p];
    ASSERT_NE(v, kVoidLabel);
    const std::uint32_t cls = PanopticGrid::class_of(v);
    const std::uint32_t inst = PanopticGrid::instance_of(v);
    ASSERT_LT(cls, cfg.num_classes());
    EXPECT_EQ(scene.gt_labels.data[p], cls);
    if (cls < cfg.n_stuff) {
      EXPECT_EQ(inst, 0u);
    } else if (inst != 0) {
      instance_ids[cls].insert(inst);
    }
  }
  std::size_t total_instances = 0;
  for (const auto& [cls, ids] : instance_ids) {
    total_instances += ids.size();
    // ids are dense from 1 in placement order
    EXPECT_EQ(*ids.begin(), 1u);
    EXPECT_EQ(*ids.rbegin(), ids.size());
  }
  EXPECT_EQ(total_instances, cfg.n_instances);
}

TEST(Scene, ImpossiblePackingThrows) {
  SceneConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.n_instances = 30;  // 2x2 minimum shapes cannot fit 30 disjoint instances
  cfg.seed = 1;
  EXPECT_THROW(generate_scene(cfg), ValidationError);
}

TEST(Predictions, NoiseFreeReproducesGroundTruthExactly) {
  SceneConfig cfg;
  cfg.seed = 42;
  cfg.target_confidence = 0.9;
  const Scene scene = generate_scene(cfg);
  const SynthPredictions preds = synthesize_predictions(scene.gt, cfg);

  const DirichletField field = dirichlet_from_logits(preds.semantic_logits,
                                                     Activation::kSoftplus);
  const DenseGrid unc = predictive_uncertainty(field);
  const ArgmaxResult arg = channel_argmax(preds.semantic_logits);
  for (std::size_t p = 0; p < scene.gt.pixels(); ++p) {
    EXPECT_EQ(arg.labels.data[p], PanopticGrid::class_of(scene.gt.data[p]));
    EXPECT_NEAR(1.0 - unc.data[p], 0.9, 1e-12);
  }

  // Instance boxes are the tight ground-truth boxes at zero noise, masks
  // reproduce membership, and class probabilities equal the target.
  std::map<std::uint32_t, std::array<std::size_t, 4>> tight;  // y0 x0 y1 x1
  for (std::size_t p = 0; p < scene.gt.pixels(); ++p) {
    const std::uint32_t v = scene.gt.data[p];
    if (PanopticGrid::instance_of(v) == 0) continue;
    const std::size_t y = p / cfg.width, x = p % cfg.width;
    auto [it, fresh] = tight.try_emplace(v, std::array<std::size_t, 4>{y, x, y + 1, x + 1});
    if (!fresh) {
      it->second[0] = std::min(it->second[0], y);
      it->second[1] = std::min(it->second[1], x);
      it->second[2] = std::max(it->second[2], y + 1);
      it->second[3] = std::max(it->second[3], x + 1);
    }
  }
  ASSERT_EQ(preds.instances.size(), tight.size());
  std::size_t idx = 0;
  for (const auto& [encoded, box] : tight) {
    const InstancePrediction& inst = preds.instances[idx++];
    EXPECT_EQ(inst.class_id, PanopticGrid::class_of(encoded));
    EXPECT_EQ(inst.class_prob, cfg.target_confidence);
    EXPECT_EQ(inst.bbox.y0, box[0]);
    EXPECT_EQ(inst.bbox.x0, box[1]);
    EXPECT_EQ(inst.bbox.y1, box[2]);
    EXPECT_EQ(inst.bbox.x1, box[3]);
    EXPECT_EQ(inst.mask_logits.height, 28u);
    EXPECT_EQ(inst.mask_logits.width, 28u);
    // corners of the mask sample the bbox corners
    EXPECT_EQ(inst.mask_logits.at(0, 0, 0) > 0.0,
              scene.gt.at(box[0], box[1]) == encoded);
  }
}

TEST(Predictions, FixedNoiseProducesRequestedErrorRate) {
  SceneConfig cfg;
  cfg.seed = 11;
  cfg.noise_level = 0.3;
  cfg.target_confidence = 0.99;
  const Scene scene = generate_scene(cfg);
  const SynthPredictions preds = synthesize_predictions(scene.gt, cfg);
  const ArgmaxResult arg = channel_argmax(preds.semantic_logits);
  std::size_t wrong = 0;
  for (std::size_t p = 0; p < scene.gt.pixels(); ++p)
    if (arg.labels.data[p] != PanopticGrid::class_of(scene.gt.data[p])) ++wrong;
  const double rate = static_cast<double>(wrong) / static_cast<double>(scene.gt.pixels());
  EXPECT_NEAR(rate, 0.3, 0.03);  // 4096 pixels, ~4 sigma
}

TEST(Predictions, CalibratedModeDrawsConfidenceInBand) {
  SceneConfig cfg;
  cfg.seed = 13;
  cfg.calibrated = true;
  const Scene scene = generate_scene(cfg);
  const SynthPredictions preds = synthesize_predictions(scene.gt, cfg);
  const DirichletField field = dirichlet_from_logits(preds.semantic_logits,
                                                     Activation::kSoftplus);
  const DenseGrid unc = predictive_uncertainty(field);
  for (std::size_t p = 0; p < unc.pixels(); ++p) {
    const double conf = 1.0 - unc.data[p];
    EXPECT_GE(conf, 0.55 - 1e-9);
    EXPECT_LT(conf, 0.95 + 1e-9);
  }
}

TEST(Predictions, FullConfidenceIsClampedToFiniteLogits) {
  SceneConfig cfg;
  cfg.seed = 21;
  cfg.height = 16;
  cfg.width = 16;
  cfg.n_instances = 1;
  cfg.target_confidence = 1.0;
  const Scene scene = generate_scene(cfg);
  const SynthPredictions preds = synthesize_predictions(scene.gt, cfg);
  for (double v : preds.semantic_logits.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Predictions, ValidatesDimsAndConfig) {
  SceneConfig cfg;
  cfg.seed = 2;
  const Scene scene = generate_scene(cfg);
  SceneConfig other = cfg;
  other.height = 32;
  EXPECT_THROW(synthesize_predictions(scene.gt, other), ValidationError);
  SceneConfig bad = cfg;
  bad.target_confidence = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  SceneConfig negative_noise = cfg;
  negative_noise.noise_level = -0.5;
  EXPECT_THROW(negative_noise.validate(), ValidationError);
}
