#pragma once

// Training losses over evidential logits, each returning its value together
// with the analytic gradient w.r.t. the input logits.
//
// Common structure: evidence e = activation(l), alpha = e + 1, S = sum alpha,
// p = alpha / S. Gradients chain d/dl = (d/dalpha) * activation_slope(l).
// Values are reported as means over non-void pixels so magnitudes are
// resolution independent (the per-image sum is the mean times the pixel
// count); the Lovasz term is already normalized by its Jaccard structure and
// is not divided by pixel count. Void pixels contribute zero value and zero
// gradient everywhere.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "evpan/core.hpp"
#include "evpan/evidential.hpp"
#include "evpan/grid.hpp"

namespace evpan {

struct LossResult {
  double value = 0.0;
  DenseGrid gradient;
};

// Anneal state for the KL weight: lambda_t = lambda_max * min(1, t / (60 I)).
struct ScheduleState {
  std::uint64_t t = 0;                     // current training iteration
  std::uint64_t iterations_per_epoch = 1;  // I
  double lambda_max = 0.06;
};

inline double lambda_schedule(const ScheduleState& state) {
  if (state.iterations_per_epoch < 1)
    throw ValidationError("schedule: iterations_per_epoch must be >= 1");
  if (!(state.lambda_max >= 0.0) || !std::isfinite(state.lambda_max))
    throw ValidationError("schedule: lambda_max must be non-negative and finite");
  const double ramp = static_cast<double>(state.t) /
                      (60.0 * static_cast<double>(state.iterations_per_epoch));
  return state.lambda_max * std::min(1.0, ramp);
}

namespace detail {

// Shape/label validation shared by all losses; returns the non-void pixel
// indices.
inline std::vector<std::size_t> loss_pixels(const DenseGrid& logits, const LabelGrid& labels,
                                            const char* what) {
  if (logits.channels < 2)
    throw ValidationError(std::string(what) + ": need at least 2 class channels");
  if (logits.height != labels.height || logits.width != labels.width)
    throw ValidationError(std::string(what) + ": logits/labels shape mismatch");
  require_finite(logits, what);
  labels.require_classes_below(logits.channels, what);
  std::vector<std::size_t> valid;
  valid.reserve(labels.pixels());
  for (std::size_t p = 0; p < labels.pixels(); ++p)
    if (labels.data[p] != kVoidLabel) valid.push_back(p);
  if (valid.empty()) throw ValidationError(std::string(what) + ": all pixels are void");
  return valid;
}

// Mean-over-pixels loss scaffold. PixelFn receives (alpha, S, gt) and fills
// d(pixel value)/d(alpha) into its last argument, returning the pixel value.
template <typename PixelFn>
LossResult pointwise_loss(const DenseGrid& logits, const LabelGrid& labels, Activation act,
                          const char* what, PixelFn&& fn) {
  const std::vector<std::size_t> valid = loss_pixels(logits, labels, what);
  const std::size_t num_classes = logits.channels;
  LossResult out{0.0, DenseGrid(logits.height, logits.width, num_classes, 0.0)};
  const double norm = 1.0 / static_cast<double>(valid.size());
  std::vector<double> alpha(num_classes), dalpha(num_classes);
  double value_sum = 0.0;
  for (std::size_t p : valid) {
    const double* l = logits.pixel(p);
    double strength = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      alpha[c] = apply_activation(l[c], act) + 1.0;
      strength += alpha[c];
    }
    std::fill(dalpha.begin(), dalpha.end(), 0.0);
    value_sum += fn(alpha, strength, labels.data[p], dalpha);
    double* g = out.gradient.pixel(p);
    for (std::size_t c = 0; c < num_classes; ++c)
      g[c] = dalpha[c] * activation_slope(l[c], act) * norm;
  }
  out.value = value_sum * norm;
  return out;
}

}  // namespace detail

// Type-II maximum-likelihood loss: per pixel ln(S) - ln(alpha_gt).
inline LossResult evidential_log_loss(const DenseGrid& logits, const LabelGrid& labels,
                                      Activation act) {
  return detail::pointwise_loss(
      logits, labels, act, "log loss",
      [](const std::vector<double>& alpha, double strength, std::uint32_t gt,
         std::vector<double>& dalpha) {
        for (std::size_t c = 0; c < alpha.size(); ++c) dalpha[c] = 1.0 / strength;
        dalpha[gt] -= 1.0 / alpha[gt];
        return std::log(strength) - std::log(alpha[gt]);
      });
}

// Digamma variant: per pixel psi(S) - psi(alpha_gt).
inline LossResult evidential_digamma_loss(const DenseGrid& logits, const LabelGrid& labels,
                                          Activation act) {
  return detail::pointwise_loss(
      logits, labels, act, "digamma loss",
      [](const std::vector<double>& alpha, double strength, std::uint32_t gt,
         std::vector<double>& dalpha) {
        const double dS = boost::math::trigamma(strength);
        for (std::size_t c = 0; c < alpha.size(); ++c) dalpha[c] = dS;
        dalpha[gt] -= boost::math::trigamma(alpha[gt]);
        return boost::math::digamma(strength) - boost::math::digamma(alpha[gt]);
      });
}

// Sum-of-squares variant: per pixel sum_c (y_c - p_c)^2 + p_c(1-p_c)/(S+1).
inline LossResult evidential_mse_loss(const DenseGrid& logits, const LabelGrid& labels,
                                      Activation act) {
  return detail::pointwise_loss(
      logits, labels, act, "mse loss",
      [](const std::vector<double>& alpha, double strength, std::uint32_t gt,
         std::vector<double>& dalpha) {
        const std::size_t num_classes = alpha.size();
        double value = 0.0, weighted = 0.0, variance_sum = 0.0;
        // g_c = d(pixel value)/dp_c at fixed S; the explicit S dependence of
        // the variance term enters separately through dS/dalpha_j = 1.
        std::vector<double> p(num_classes), g(num_classes);
        for (std::size_t c = 0; c < num_classes; ++c) {
          p[c] = alpha[c] / strength;
          const double y = (c == gt) ? 1.0 : 0.0;
          value += (y - p[c]) * (y - p[c]) + p[c] * (1.0 - p[c]) / (strength + 1.0);
          g[c] = -2.0 * (y - p[c]) + (1.0 - 2.0 * p[c]) / (strength + 1.0);
          weighted += g[c] * p[c];
          variance_sum += p[c] * (1.0 - p[c]);
        }
        for (std::size_t j = 0; j < num_classes; ++j)
          dalpha[j] = (g[j] - weighted) / strength -
                      variance_sum / ((strength + 1.0) * (strength + 1.0));
        return value;
      });
}

// KL(Dir(alpha~) || Dir(1,...,1)) with alpha~ = y + (1-y) * alpha, i.e. the
// ground-truth channel is masked to 1 so only false evidence is penalized.
// The gradient on the ground-truth channel is identically zero.
inline LossResult kl_regularizer(const DenseGrid& logits, const LabelGrid& labels,
                                 Activation act) {
  return detail::pointwise_loss(
      logits, labels, act, "kl regularizer",
      [](const std::vector<double>& alpha, double /*strength*/, std::uint32_t gt,
         std::vector<double>& dalpha) {
        const std::size_t num_classes = alpha.size();
        double masked_strength = 0.0;
        std::vector<double> masked(num_classes);
        for (std::size_t c = 0; c < num_classes; ++c) {
          masked[c] = (c == gt) ? 1.0 : alpha[c];
          masked_strength += masked[c];
        }
        double value = boost::math::lgamma(masked_strength) -
                       boost::math::lgamma(static_cast<double>(num_classes));
        const double psi_strength = boost::math::digamma(masked_strength);
        for (std::size_t c = 0; c < num_classes; ++c) {
          value -= boost::math::lgamma(masked[c]);
          value += (masked[c] - 1.0) * (boost::math::digamma(masked[c]) - psi_strength);
        }
        const double excess = masked_strength - static_cast<double>(num_classes);
        const double tri_strength = boost::math::trigamma(masked_strength);
        for (std::size_t c = 0; c < num_classes; ++c) {
          if (c == gt) continue;  // d alpha~ / d alpha is zero here
          dalpha[c] = (masked[c] - 1.0) * boost::math::trigamma(masked[c]) -
                      excess * tri_strength;
        }
        return value;
      });
}

struct LovaszOptions {
  // When set, average the per-class Lovasz terms over classes present in the
  // ground truth instead of all C classes.
  bool present_classes_only = false;
};

// Lovasz extension of the Jaccard loss over evidential probabilities. Per
// class c the pixel error is e_i = 1 - p_i(c) on ground-truth pixels of c and
// p_i(c) elsewhere; errors are sorted descending and weighted by the Jaccard
// deltas of the extension. The value averages the per-class terms; the
// gradient chains the sorted weights through p = alpha/S and the activation.
// Ties in the sort take the subgradient induced by stable order.
inline LossResult lovasz_evidential_loss(const DenseGrid& logits, const LabelGrid& labels,
                                         Activation act, const LovaszOptions& options = {}) {
  const std::vector<std::size_t> valid = detail::loss_pixels(logits, labels, "lovasz loss");
  const std::size_t num_classes = logits.channels;
  const std::size_t n = valid.size();

  std::vector<double> probs(n * num_classes), strengths(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double* l = logits.pixel(valid[k]);
    double strength = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      probs[k * num_classes + c] = apply_activation(l[c], act) + 1.0;
      strength += probs[k * num_classes + c];
    }
    for (std::size_t c = 0; c < num_classes; ++c) probs[k * num_classes + c] /= strength;
    strengths[k] = strength;
  }

  std::vector<std::uint32_t> class_list;
  if (options.present_classes_only) {
    for (std::size_t k = 0; k < n; ++k) class_list.push_back(labels.data[valid[k]]);
    std::sort(class_list.begin(), class_list.end());
    class_list.erase(std::unique(class_list.begin(), class_list.end()), class_list.end());
  } else {
    for (std::uint32_t c = 0; c < num_classes; ++c) class_list.push_back(c);
  }

  double value = 0.0;
  std::vector<double> dprob(n * num_classes, 0.0);  // accumulated d(sum of terms)/dp
  std::vector<double> errors(n);
  std::vector<std::size_t> order(n);
  for (std::uint32_t c : class_list) {
    std::size_t gt_count = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const bool is_gt = labels.data[valid[k]] == c;
      errors[k] = is_gt ? 1.0 - probs[k * num_classes + c] : probs[k * num_classes + c];
      gt_count += is_gt ? 1 : 0;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    double cum_gt = 0.0, prev_jaccard = 0.0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      const std::size_t k = order[rank];
      const bool is_gt = labels.data[valid[k]] == c;
      cum_gt += is_gt ? 1.0 : 0.0;
      const double taken = static_cast<double>(rank + 1);
      const double intersection = static_cast<double>(gt_count) - cum_gt;
      const double uni = static_cast<double>(gt_count) + taken - cum_gt;
      const double jaccard = 1.0 - intersection / uni;
      const double weight = jaccard - prev_jaccard;
      prev_jaccard = jaccard;
      value += errors[k] * weight;
      dprob[k * num_classes + c] += is_gt ? -weight : weight;
    }
  }

  const double class_norm = 1.0 / static_cast<double>(class_list.size());
  LossResult out{value * class_norm, DenseGrid(logits.height, logits.width, num_classes, 0.0)};
  for (std::size_t k = 0; k < n; ++k) {
    const double* p = probs.data() + k * num_classes;
    const double* dp = dprob.data() + k * num_classes;
    double weighted = 0.0;
    for (std::size_t c = 0; c < num_classes; ++c) weighted += dp[c] * p[c];
    const double* l = logits.pixel(valid[k]);
    double* g = out.gradient.pixel(valid[k]);
    for (std::size_t c = 0; c < num_classes; ++c)
      g[c] = class_norm * (dp[c] - weighted) / strengths[k] * activation_slope(l[c], act);
  }
  return out;
}

namespace detail {

inline LossResult add_scaled(LossResult base, const LossResult& extra, double scale) {
  base.value += scale * extra.value;
  for (std::size_t i = 0; i < base.gradient.size(); ++i)
    base.gradient.data[i] += scale * extra.gradient.data[i];
  return base;
}

}  // namespace detail

// Log loss plus the annealed KL term: L = L_log + lambda_t * L_KL.
inline LossResult semantic_loss(const DenseGrid& logits, const LabelGrid& labels,
                                const ScheduleState& state, Activation act) {
  const double lambda = lambda_schedule(state);
  LossResult log_part = evidential_log_loss(logits, labels, act);
  if (lambda == 0.0) return log_part;
  return detail::add_scaled(std::move(log_part), kl_regularizer(logits, labels, act), lambda);
}

// The mask head trains with the same kernel over its own logit grid (K mask
// channels at 28x28 resolution in the usual configuration) and a softplus
// activation.
inline LossResult mask_loss(const DenseGrid& mask_logits, const LabelGrid& mask_labels,
                            const ScheduleState& state) {
  return semantic_loss(mask_logits, mask_labels, state, Activation::kSoftplus);
}

// Classification over a single logit vector: the one-pixel case of the
// semantic kernel with an independently configured KL weight lambda_i.
inline LossResult classification_loss(const std::vector<double>& class_logits,
                                      std::uint32_t gt_class, double lambda_i) {
  if (class_logits.size() < 2)
    throw ValidationError("classification loss: need at least 2 classes");
  if (gt_class >= class_logits.size())
    throw ValidationError("classification loss: gt class " + std::to_string(gt_class) +
                          " out of range for " + std::to_string(class_logits.size()) +
                          " classes");
  if (!(lambda_i >= 0.0) || !std::isfinite(lambda_i))
    throw ValidationError("classification loss: lambda must be non-negative and finite");
  const DenseGrid logits(1, 1, class_logits.size(), class_logits);
  const LabelGrid labels(1, 1, std::vector<std::uint32_t>{gt_class});
  LossResult result = evidential_log_loss(logits, labels, Activation::kSoftplus);
  if (lambda_i != 0.0)
    result = detail::add_scaled(std::move(result),
                                kl_regularizer(logits, labels, Activation::kSoftplus), lambda_i);
  return result;
}

// Full semantic-side objective: semantic_loss + lovasz_evidential_loss.
inline LossResult total_semantic_objective(const DenseGrid& logits, const LabelGrid& labels,
                                           const ScheduleState& state, Activation act) {
  return detail::add_scaled(semantic_loss(logits, labels, state, act),
                            lovasz_evidential_loss(logits, labels, act), 1.0);
}

}  // namespace evpan
