#pragma once

// Evidential Dirichlet head: logits are mapped through a non-negative
// activation to per-class evidence e_c, giving Dirichlet parameters
// alpha_c = e_c + 1 with total strength S = sum_c alpha_c. The expected
// class probabilities are p_c = alpha_c / S and the predictive uncertainty
// is u = C / S, which is 1 for zero evidence and decays toward 0 as
// evidence accumulates.

#include <cmath>
#include <span>
#include <vector>

#include "evpan/core.hpp"
#include "evpan/grid.hpp"

namespace evpan {

enum class Activation { kSoftplus, kRelu };

// ln(1 + e^x), computed on the stable branch for either sign of x.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Inverse of softplus: ln(e^y - 1). For large y the identity branch is exact
// to double precision because softplus(x) - x < 1e-13 once x > 30.
inline double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ValidationError("softplus_inverse: argument must be positive");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double apply_activation(double logit, Activation act) {
  return act == Activation::kSoftplus ? softplus(logit) : (logit > 0.0 ? logit : 0.0);
}

// d evidence / d logit at the given logit.
inline double activation_slope(double logit, Activation act) {
  return act == Activation::kSoftplus ? sigmoid(logit) : (logit > 0.0 ? 1.0 : 0.0);
}

// Per-pixel evidence e = activation(logit); logits must be finite.
inline DenseGrid evidence(const DenseGrid& logits, Activation act) {
  require_finite(logits, "evidence");
  DenseGrid out(logits.height, logits.width, logits.channels);
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.data[i] = apply_activation(logits.data[i], act);
  return out;
}

// Dirichlet parameters per pixel: alpha (H x W x C) and strength S (H x W x 1).
struct DirichletField {
  DenseGrid alpha;
  DenseGrid strength;

  std::size_t num_classes() const { return alpha.channels; }
};

inline DirichletField dirichlet_from_logits(const DenseGrid& logits, Activation act) {
  if (logits.channels < 2)
    throw ValidationError("dirichlet: need at least 2 class channels, got " +
                          std::to_string(logits.channels));
  require_finite(logits, "dirichlet");
  DirichletField field{DenseGrid(logits.height, logits.width, logits.channels),
                       DenseGrid(logits.height, logits.width, 1)};
  for (std::size_t p = 0; p < logits.pixels(); ++p) {
    const double* l = logits.pixel(p);
    double* a = field.alpha.pixel(p);
    double s = 0.0;
    for (std::size_t c = 0; c < logits.channels; ++c) {
      a[c] = apply_activation(l[c], act) + 1.0;
      s += a[c];
    }
    field.strength.data[p] = s;
  }
  return field;
}

// Expected probabilities p_c = alpha_c / S; each pixel sums to 1.
inline DenseGrid class_probabilities(const DirichletField& field) {
  DenseGrid out(field.alpha.height, field.alpha.width, field.alpha.channels);
  for (std::size_t p = 0; p < field.alpha.pixels(); ++p) {
    const double* a = field.alpha.pixel(p);
    const double s = field.strength.data[p];
    double* q = out.pixel(p);
    for (std::size_t c = 0; c < field.alpha.channels; ++c) q[c] = a[c] / s;
  }
  return out;
}

// Predictive uncertainty u = C / S in (0, 1]; H x W x 1.
inline DenseGrid predictive_uncertainty(const DirichletField& field) {
  const double num_classes = static_cast<double>(field.alpha.channels);
  DenseGrid out(field.alpha.height, field.alpha.width, 1);
  for (std::size_t p = 0; p < field.alpha.pixels(); ++p)
    out.data[p] = num_classes / field.strength.data[p];
  return out;
}

// Confidence from normalized entropy: 1 - (-sum_c p ln p) / ln C, with
// 0 ln 0 read as 0. Confidence is 0 at the uniform distribution and 1 at a
// one-hot distribution. Softmax-baseline counterpart of 1 - u. H x W x 1.
inline DenseGrid entropy_confidence(const DenseGrid& probs) {
  if (probs.channels < 2)
    throw ValidationError("entropy_confidence: need at least 2 class channels");
  const double log_c = std::log(static_cast<double>(probs.channels));
  DenseGrid out(probs.height, probs.width, 1);
  for (std::size_t p = 0; p < probs.pixels(); ++p) {
    const double* q = probs.pixel(p);
    double sum = 0.0, entropy = 0.0;
    for (std::size_t c = 0; c < probs.channels; ++c) {
      const double v = q[c];
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ValidationError("entropy_confidence: probabilities must be non-negative and finite");
      sum += v;
      if (v > 0.0) entropy -= v * std::log(v);
    }
    if (std::fabs(sum - 1.0) > 1e-6)
      throw ValidationError("entropy_confidence: per-pixel probabilities must sum to 1");
    out.data[p] = 1.0 - entropy / log_c;
  }
  return out;
}

// Positive, finite softmax temperature.
struct TemperatureParam {
  double value;

  explicit TemperatureParam(double t) : value(t) {
    if (!(t > 0.0) || !std::isfinite(t))
      throw ValidationError("temperature: must be positive and finite");
  }
};

inline DenseGrid temperature_scale(const DenseGrid& logits, TemperatureParam temperature) {
  require_finite(logits, "temperature_scale");
  DenseGrid out(logits.height, logits.width, logits.channels);
  for (std::size_t i = 0; i < logits.size(); ++i)
    out.data[i] = logits.data[i] / temperature.value;
  return out;
}

namespace detail {

// Mean softmax negative log-likelihood of the labelled pixels at 1/T scale.
inline double mean_nll_at_temperature(const std::vector<DenseGrid>& logits,
                                      const std::vector<LabelGrid>& labels, double temperature) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const DenseGrid& grid = logits[i];
    for (std::size_t p = 0; p < grid.pixels(); ++p) {
      const std::uint32_t gt = labels[i].data[p];
      if (gt == kVoidLabel) continue;
      const double* l = grid.pixel(p);
      double max_scaled = l[0] / temperature;
      for (std::size_t c = 1; c < grid.channels; ++c)
        max_scaled = std::max(max_scaled, l[c] / temperature);
      double sum_exp = 0.0;
      for (std::size_t c = 0; c < grid.channels; ++c)
        sum_exp += std::exp(l[c] / temperature - max_scaled);
      total += max_scaled + std::log(sum_exp) - l[gt] / temperature;
      ++count;
    }
  }
  if (count == 0) throw ValidationError("fit_temperature: no labelled pixels");
  return total / static_cast<double>(count);
}

}  // namespace detail

// Fits a single softmax temperature by minimizing mean NLL over all labelled
// pixels. Golden-section search over ln T in [ln 0.05, ln 20]; the objective
// is convex in 1/T, hence unimodal in ln T on the bracket.
inline TemperatureParam fit_temperature(const std::vector<DenseGrid>& logits,
                                        const std::vector<LabelGrid>& labels) {
  if (logits.size() != labels.size())
    throw ValidationError("fit_temperature: logits/labels count mismatch");
  if (logits.empty()) throw ValidationError("fit_temperature: no images");
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (logits[i].height != labels[i].height || logits[i].width != labels[i].width)
      throw ValidationError("fit_temperature: image " + std::to_string(i) +
                            " logits/labels shape mismatch");
    if (logits[i].channels != logits[0].channels)
      throw ValidationError("fit_temperature: inconsistent channel counts across images");
    require_finite(logits[i], "fit_temperature");
    labels[i].require_classes_below(logits[i].channels, "fit_temperature");
  }

  const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(0.05), hi = std::log(20.0);
  double x1 = hi - golden * (hi - lo);
  double x2 = lo + golden * (hi - lo);
  double f1 = detail::mean_nll_at_temperature(logits, labels, std::exp(x1));
  double f2 = detail::mean_nll_at_temperature(logits, labels, std::exp(x2));
  while (hi - lo > 1e-4) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - golden * (hi - lo);
      f1 = detail::mean_nll_at_temperature(logits, labels, std::exp(x1));
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + golden * (hi - lo);
      f2 = detail::mean_nll_at_temperature(logits, labels, std::exp(x2));
    }
  }
  return TemperatureParam(std::exp(0.5 * (lo + hi)));
}

}  // namespace evpan
