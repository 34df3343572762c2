#pragma once

// Command implementations behind the evpan CLI: evaluate, fuse, gradcheck,
// synth. Each run_* function does the work and throws on failure; run_cli
// parses arguments, dispatches, and maps exceptions to the exit-code
// contract (0 ok, 1 validation error, 2 I/O error).

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "evpan/accumulate.hpp"
#include "evpan/core.hpp"
#include "evpan/evidential.hpp"
#include "evpan/fusion.hpp"
#include "evpan/gradcheck.hpp"
#include "evpan/grid.hpp"
#include "evpan/instance_set.hpp"
#include "evpan/losses.hpp"
#include "evpan/metrics.hpp"
#include "evpan/report.hpp"
#include "evpan/rng.hpp"
#include "evpan/synthdata.hpp"
#include "evpan/tensor_file.hpp"

namespace evpan {

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string pred_dir;
  std::string gt_dir;
  unsigned bins = 10;
  std::string classes_path;
  std::string report_path;  // empty: no report file
  bool per_image = false;
};

namespace detail {

// Accepts {"stuff": [...], "thing": [...]} at the top level or nested under
// "classes" (the synth manifest layout).
inline ClassConfig read_class_config(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw IoError("class config: cannot open " + path);
  nlohmann::json doc;
  try {
    file >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("class config: failed to parse " + path + ": " + e.what());
  }
  const nlohmann::json& node = doc.contains("classes") ? doc.at("classes") : doc;
  if (!node.contains("stuff") || !node.contains("thing"))
    throw ValidationError("class config: " + path + " must define 'stuff' and 'thing' lists");
  ClassConfig classes;
  try {
    classes.stuff = node.at("stuff").get<std::vector<std::uint32_t>>();
    classes.thing = node.at("thing").get<std::vector<std::uint32_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("class config: malformed class lists in " + path + ": " + e.what());
  }
  classes.validate();
  return classes;
}

inline std::vector<std::string> panoptic_stems(const std::string& dir) {
  const std::string suffix = "_panoptic.upst";
  if (!std::filesystem::is_directory(dir))
    throw IoError("evaluate: not a directory: " + dir);
  std::vector<std::string> stems;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() &&
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      stems.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(stems.begin(), stems.end());
  return stems;
}

inline void require_file(const std::filesystem::path& path, const std::string& what) {
  if (!std::filesystem::is_regular_file(path))
    throw IoError(what + ": missing file " + path.string());
}

inline void print_scope(std::ostream& out, const char* name, const ScopeMetrics& m) {
  char line[256];
  std::snprintf(line, sizeof(line),
                "%-8s PQ %.4f  SQ %.4f  RQ %.4f  pECE %.4f%s  uPQ %.4f", name, m.pq, m.sq,
                m.rq, m.pece, m.pece_defaulted ? "*" : " ", m.upq);
  out << line;
  if (m.uece) {
    std::snprintf(line, sizeof(line), "  uECE %.4f", *m.uece);
    out << line;
  }
  if (m.ece) {
    std::snprintf(line, sizeof(line), "  ECE %.4f", *m.ece);
    out << line;
  }
  out << "\n";
}

}  // namespace detail

inline MetricReport run_evaluate(const EvaluateArgs& args, std::ostream& out = std::cout) {
  const ClassConfig classes = detail::read_class_config(args.classes_path);
  if (args.bins < 1) throw ValidationError("evaluate: --bins must be at least 1");

  const std::vector<std::string> stems = detail::panoptic_stems(args.gt_dir);
  if (stems.empty())
    throw ValidationError("evaluate: no *_panoptic.upst ground truth found in " + args.gt_dir);

  const std::filesystem::path pred_base(args.pred_dir), gt_base(args.gt_dir);
  std::vector<ImageEvalStats> stats(stems.size());
  std::vector<std::uint8_t> with_probs(stems.size(), 0);

  parallel_for(stems.size(), [&](std::size_t i) {
    const std::string& stem = stems[i];
    const std::filesystem::path gt_path = gt_base / (stem + "_panoptic.upst");
    const std::filesystem::path pred_path = pred_base / (stem + "_panoptic.upst");
    const std::filesystem::path unc_path = pred_base / (stem + "_uncertainty.upst");
    detail::require_file(pred_path, "evaluate: prediction pair for '" + stem + "'");
    detail::require_file(unc_path, "evaluate: uncertainty pair for '" + stem + "'");

    const PanopticGrid gt = read_panoptic_grid(gt_path.string());
    const PanopticGrid pred = read_panoptic_grid(pred_path.string());
    const DenseGrid uncertainty = read_dense_grid(unc_path.string());
    if (uncertainty.channels != 1 || uncertainty.height != pred.height ||
        uncertainty.width != pred.width)
      throw ValidationError("evaluate: uncertainty shape mismatch for " + unc_path.string());
    DenseGrid confidence(uncertainty.height, uncertainty.width, 1);
    for (std::size_t p = 0; p < uncertainty.pixels(); ++p) {
      const double u = uncertainty.data[p];
      if (!(u >= 0.0 && u <= 1.0))
        throw ValidationError("evaluate: uncertainty outside [0,1] in " + unc_path.string());
      confidence.data[p] = 1.0 - u;
    }

    std::optional<DenseGrid> probs;
    const std::filesystem::path logits_path = pred_base / (stem + "_logits.upst");
    if (std::filesystem::is_regular_file(logits_path)) {
      const DenseGrid logits = read_dense_grid(logits_path.string());
      const DirichletField field = dirichlet_from_logits(logits, Activation::kSoftplus);
      probs = class_probabilities(field);
      with_probs[i] = 1;
    }
    stats[i] = evaluate_image(pred, gt, confidence, probs ? &*probs : nullptr, classes,
                              args.bins);
  });

  const std::size_t prob_count =
      static_cast<std::size_t>(std::count(with_probs.begin(), with_probs.end(), 1));
  if (prob_count != 0 && prob_count != stems.size())
    throw ValidationError("evaluate: *_logits.upst present for " + std::to_string(prob_count) +
                          " of " + std::to_string(stems.size()) +
                          " images; provide logits for all images or none");

  EvalAccumulator acc{args.bins, classes, {}};
  for (std::size_t i = 0; i < stems.size(); ++i) add_image(acc, stems[i], std::move(stats[i]));
  const MetricReport report = finalize(acc, args.per_image);

  out << "images evaluated: " << report.image_count << "\n";
  detail::print_scope(out, "overall", report.overall);
  detail::print_scope(out, "things", report.things);
  detail::print_scope(out, "stuff", report.stuff);
  if (report.overall.pece_defaulted)
    out << "note: no matched segments; pECE defaulted to worst case 1\n";
  if (!args.report_path.empty()) {
    write_report(args.report_path, report);
    out << "report written to " << args.report_path << "\n";
  }
  return report;
}

// -------------------------------------------------------------------- fuse

struct FuseArgs {
  std::string logits_path;
  std::string instances_path;
  std::vector<std::uint32_t> stuff;
  std::vector<std::uint32_t> thing;
  std::string out_prefix;
};

inline PanopticResult run_fuse(const FuseArgs& args, std::ostream& out = std::cout) {
  const ClassConfig classes(args.stuff, args.thing);
  const DenseGrid logits = read_dense_grid(args.logits_path);
  InstanceSetFile set = read_instance_set(args.instances_path);
  if (set.height != logits.height || set.width != logits.width)
    throw ValidationError("fuse: instance set dims (" + std::to_string(set.height) + "x" +
                          std::to_string(set.width) + ") do not match logits (" +
                          std::to_string(logits.height) + "x" + std::to_string(logits.width) +
                          ") for " + args.instances_path);

  const PanopticResult result =
      run_probabilistic_fusion(logits, std::move(set.instances), classes);

  const std::string panoptic_path = args.out_prefix + "_panoptic.upst";
  const std::string uncertainty_path = args.out_prefix + "_uncertainty.upst";
  write_panoptic_grid(panoptic_path, result.panoptic);
  write_dense_grid(uncertainty_path, result.uncertainty, Dtype::kF64);
  out << "instances kept: " << result.instances_kept.size() << "\n";
  out << "wrote " << panoptic_path << "\n";
  out << "wrote " << uncertainty_path << "\n";
  return result;
}

// --------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string loss = "log";
  std::uint64_t seed = 1;
  std::string shape = "4x4x3";
  std::optional<double> tol;  // default depends on the loss
};

inline constexpr std::uint64_t kGradcheckStream = 2;

namespace detail {

inline void parse_shape(const std::string& shape, std::size_t& h, std::size_t& w,
                        std::size_t& c) {
  unsigned long long vh = 0, vw = 0, vc = 0;
  char extra = 0;
  if (std::sscanf(shape.c_str(), "%llux%llux%llu%c", &vh, &vw, &vc, &extra) != 3 || vh == 0 ||
      vw == 0 || vc < 2)
    throw ValidationError("gradcheck: --shape must be HxWxC with C >= 2, got '" + shape + "'");
  h = vh;
  w = vw;
  c = vc;
}

struct GradcheckCase {
  DenseGrid logits;
  LabelGrid labels;
};

// Logits uniform in [-3, 3] then labels uniform in [0, C), all from one
// dedicated stream so the case is reproducible from (seed, shape) alone.
inline GradcheckCase random_gradcheck_case(std::uint64_t seed, std::size_t h, std::size_t w,
                                           std::size_t c) {
  StreamRng rng(seed, kGradcheckStream);
  GradcheckCase instance{DenseGrid(h, w, c), LabelGrid(h, w)};
  for (double& v : instance.logits.data) v = -3.0 + 6.0 * rng.next_double();
  for (std::uint32_t& v : instance.labels.data)
    v = static_cast<std::uint32_t>(rng.next_below(c));
  return instance;
}

// The annealing state used for losses with a KL term: mid-ramp, so the KL
// path carries weight 0.03 and is actually exercised.
inline ScheduleState gradcheck_schedule() { return ScheduleState{30, 1, 0.06}; }

inline LossResult evaluate_named_loss(const std::string& name, const DenseGrid& logits,
                                      const LabelGrid& labels) {
  const Activation act = Activation::kSoftplus;
  if (name == "log") return evidential_log_loss(logits, labels, act);
  if (name == "digamma") return evidential_digamma_loss(logits, labels, act);
  if (name == "mse") return evidential_mse_loss(logits, labels, act);
  if (name == "kl") return kl_regularizer(logits, labels, act);
  if (name == "lovasz") return lovasz_evidential_loss(logits, labels, act);
  if (name == "total")
    return total_semantic_objective(logits, labels, gradcheck_schedule(), act);
  throw ValidationError("gradcheck: unknown loss '" + name +
                        "' (expected log|digamma|mse|kl|lovasz|total)");
}

}  // namespace detail

struct GradcheckOutcome {
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

inline GradcheckOutcome run_gradcheck(const GradcheckArgs& args,
                                      std::ostream& out = std::cout) {
  std::size_t h = 0, w = 0, c = 0;
  detail::parse_shape(args.shape, h, w, c);
  const bool smooth = args.loss != "lovasz" && args.loss != "total";
  const double tol = args.tol ? *args.tol : (smooth ? 1e-5 : 1e-4);
  if (args.tol && !(*args.tol >= 0.0))
    throw ValidationError("gradcheck: --tol must be non-negative");

  const detail::GradcheckCase instance = detail::random_gradcheck_case(args.seed, h, w, c);
  const LossResult analytic = detail::evaluate_named_loss(args.loss, instance.logits,
                                                          instance.labels);
  const DenseGrid numeric = central_difference_gradient(
      instance.logits,
      [&](const DenseGrid& probe) {
        return detail::evaluate_named_loss(args.loss, probe, instance.labels).value;
      });
  const GradCheckResult check = compare_gradients(analytic.gradient, numeric);

  GradcheckOutcome outcome{check.max_rel_error, tol, check.max_rel_error <= tol};
  char line[256];
  std::snprintf(line, sizeof(line), "%-8s %-9s seed %-6llu max_rel_err %.3e  tol %.1e  %s",
                args.loss.c_str(), args.shape.c_str(),
                static_cast<unsigned long long>(args.seed), outcome.max_rel_error, tol,
                outcome.passed ? "PASS" : "FAIL");
  out << "loss     shape     case        result\n" << line << "\n";
  return outcome;
}

// ------------------------------------------------------------------- synth

struct SynthArgs {
  SceneConfig config;
  std::string out_dir;
  std::size_t count = 1;
};

inline void run_synth(const SynthArgs& args, std::ostream& out = std::cout) {
  args.config.validate();
  const std::filesystem::path base(args.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(base / "gt", ec);
  if (!ec) std::filesystem::create_directories(base / "pred", ec);
  if (ec)
    throw IoError("synth: cannot create output directory " + args.out_dir + ": " + ec.message());

  const ClassConfig classes = scene_classes(args.config);
  nlohmann::json manifest;
  manifest["tool"] = "evpan";
  manifest["format_version"] = 1;
  manifest["classes"]["stuff"] = classes.stuff;
  manifest["classes"]["thing"] = classes.thing;
  manifest["config"]["height"] = args.config.height;
  manifest["config"]["width"] = args.config.width;
  manifest["config"]["n_stuff"] = args.config.n_stuff;
  manifest["config"]["n_thing"] = args.config.n_thing;
  manifest["config"]["n_instances"] = args.config.n_instances;
  manifest["config"]["noise_level"] = args.config.noise_level;
  manifest["config"]["target_confidence"] = args.config.target_confidence;
  manifest["config"]["calibrated"] = args.config.calibrated;
  manifest["config"]["seed"] = args.config.seed;
  manifest["scenes"] = nlohmann::json::array();

  for (std::size_t j = 0; j < args.count; ++j) {
    SceneConfig scene_cfg = args.config;
    scene_cfg.seed = args.config.seed + j;
    char id[32];
    std::snprintf(id, sizeof(id), "scene_%03zu", j);

    const Scene scene = generate_scene(scene_cfg);
    const SynthPredictions preds = synthesize_predictions(scene.gt, scene_cfg);
    const DirichletField field =
        dirichlet_from_logits(preds.semantic_logits, Activation::kSoftplus);

    write_panoptic_grid((base / "gt" / (std::string(id) + "_panoptic.upst")).string(),
                        scene.gt);
    write_dense_grid((base / "pred" / (std::string(id) + "_logits.upst")).string(),
                     preds.semantic_logits, Dtype::kF64);
    write_dense_grid((base / "pred" / (std::string(id) + "_uncertainty.upst")).string(),
                     predictive_uncertainty(field), Dtype::kF64);
    InstanceSetFile set{id, scene_cfg.height, scene_cfg.width, preds.instances};
    write_instance_set((base / "pred" / (std::string(id) + "_instances.json")).string(), set);

    nlohmann::json entry;
    entry["id"] = id;
    entry["seed"] = scene_cfg.seed;
    entry["instances"] = preds.instances.size();
    manifest["scenes"].push_back(std::move(entry));
  }

  const std::string manifest_path = (base / "manifest.json").string();
  std::ofstream file(manifest_path, std::ios::trunc);
  if (!file) throw IoError("synth: cannot open " + manifest_path);
  file << manifest.dump(2) << "\n";
  if (!file) throw IoError("synth: write failed for " + manifest_path);
  out << "wrote " << args.count << " scene(s) under " << args.out_dir << "\n";
}

// ---------------------------------------------------------------- run_cli

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Uncertainty-aware panoptic segmentation toolkit"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_help_all_flag("--help-all", "Print help for all subcommands and exit");
  app.require_subcommand(1);

  EvaluateArgs eval_args;
  CLI::App* eval = app.add_subcommand("evaluate", "Compare predictions against ground truth");
  eval->add_option("pred_dir", eval_args.pred_dir,
                   "Directory with *_panoptic.upst and *_uncertainty.upst predictions")
      ->required();
  eval->add_option("gt_dir", eval_args.gt_dir, "Directory with *_panoptic.upst ground truth")
      ->required();
  eval->add_option("--bins", eval_args.bins, "Calibration histogram bins (default 10)");
  eval->add_option("--classes", eval_args.classes_path,
                   "JSON file with stuff/thing class lists (synth manifest works)")
      ->required();
  eval->add_option("--report", eval_args.report_path, "Write the full JSON report here");
  eval->add_flag("--per-image", eval_args.per_image, "Include per-image metrics in the report");

  FuseArgs fuse_args;
  CLI::App* fuse = app.add_subcommand("fuse", "Fuse semantic logits with instance predictions");
  fuse->add_option("semantic_logits", fuse_args.logits_path, "HxWxC logits tensor file")
      ->required();
  fuse->add_option("instance_set", fuse_args.instances_path, "Instance set JSON file")
      ->required();
  fuse->add_option("--stuff", fuse_args.stuff, "Stuff class ids (comma separated)")
      ->required()
      ->delimiter(',');
  fuse->add_option("--thing", fuse_args.thing, "Thing class ids (comma separated)")
      ->delimiter(',');
  fuse->add_option("--out", fuse_args.out_prefix,
                   "Output prefix; writes <prefix>_panoptic.upst and <prefix>_uncertainty.upst")
      ->required();

  GradcheckArgs grad_args;
  double grad_tol = -1.0;
  CLI::App* grad = app.add_subcommand("gradcheck",
                                      "Check analytic loss gradients against finite differences");
  grad->add_option("--loss", grad_args.loss, "One of log|digamma|mse|kl|lovasz|total");
  grad->add_option("--seed", grad_args.seed, "Random case seed (default 1)");
  grad->add_option("--shape", grad_args.shape, "Logit grid shape HxWxC (default 4x4x3)");
  grad->add_option("--tol", grad_tol,
                   "Max relative error allowed (default 1e-5, 1e-4 for lovasz/total)");

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate synthetic scenes and predictions");
  synth->add_option("--out", synth_args.out_dir, "Output directory")->required();
  synth->add_option("--count", synth_args.count, "Number of scenes (default 1)");
  synth->add_option("--height", synth_args.config.height, "Scene height (default 64)");
  synth->add_option("--width", synth_args.config.width, "Scene width (default 64)");
  synth->add_option("--n-stuff", synth_args.config.n_stuff, "Stuff class count (default 3)");
  synth->add_option("--n-thing", synth_args.config.n_thing, "Thing class count (default 2)");
  synth->add_option("--n-instances", synth_args.config.n_instances,
                    "Instances per scene (default 4)");
  synth->add_option("--noise-level", synth_args.config.noise_level,
                    "Error probability / jitter scale (default 0)");
  synth->add_option("--target-confidence", synth_args.config.target_confidence,
                    "Fixed predictor confidence in (0,1] (default 0.9)");
  synth->add_flag("--calibrated", synth_args.config.calibrated,
                  "Draw per-pixel confidence from U[0.55,0.95] and sample correctness to match");
  synth->add_option("--seed", synth_args.config.seed, "Base seed; scene j uses seed + j");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("evpan");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (eval->parsed()) {
      run_evaluate(eval_args, out);
    } else if (fuse->parsed()) {
      run_fuse(fuse_args, out);
    } else if (grad->parsed()) {
      if (grad_tol >= 0.0) grad_args.tol = grad_tol;
      const GradcheckOutcome outcome = run_gradcheck(grad_args, out);
      return outcome.passed ? 0 : 1;
    } else if (synth->parsed()) {
      run_synth(synth_args, out);
    }
    return 0;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace evpan
