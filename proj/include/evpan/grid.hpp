#pragma once

// Dense row-major grid containers plus the small geometric kernels built on
// them: IoU over binary masks, corner-aligned bilinear resizing, and
// channelwise argmax. Layout everywhere is row-major with the channel as the
// fastest-moving index: element (y, x, c) sits at (y * width + x) * channels + c.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "evpan/core.hpp"

namespace evpan {

// H x W x C grid of doubles. The shape is validated at construction; value
// range constraints (finiteness, probabilities, ...) are enforced by the
// operations that need them.
struct DenseGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  DenseGrid() = default;
  DenseGrid(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), data(check_shape(h, w, c), fill) {}
  DenseGrid(std::size_t h, std::size_t w, std::size_t c, std::vector<double> values)
      : height(h), width(w), channels(c), data(std::move(values)) {
    if (data.size() != check_shape(h, w, c))
      throw ValidationError("dense grid: data length does not match height*width*channels");
  }

  std::size_t size() const { return data.size(); }
  std::size_t pixels() const { return height * width; }
  bool same_shape(const DenseGrid& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data[(y * width + x) * channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data[(y * width + x) * channels + c];
  }

  // Start of the channel vector of pixel p (row-major pixel index).
  const double* pixel(std::size_t p) const { return data.data() + p * channels; }
  double* pixel(std::size_t p) { return data.data() + p * channels; }

 private:
  static std::size_t check_shape(std::size_t h, std::size_t w, std::size_t c) {
    if (h == 0 || w == 0 || c == 0)
      throw ValidationError("dense grid: dimensions must be positive, got " + std::to_string(h) +
                            "x" + std::to_string(w) + "x" + std::to_string(c));
    return h * w * c;
  }
};

inline void require_finite(const DenseGrid& g, const char* what) {
  for (double v : g.data)
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": values must be finite");
}

// H x W grid of semantic class ids; kVoidLabel marks excluded pixels.
struct LabelGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> data;

  LabelGrid() = default;
  LabelGrid(std::size_t h, std::size_t w, std::uint32_t fill = 0)
      : height(h), width(w), data(check_shape(h, w), fill) {}
  LabelGrid(std::size_t h, std::size_t w, std::vector<std::uint32_t> values)
      : height(h), width(w), data(std::move(values)) {
    if (data.size() != check_shape(h, w))
      throw ValidationError("label grid: data length does not match height*width");
  }

  std::size_t pixels() const { return data.size(); }
  std::uint32_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint32_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  // Every non-void label must be a valid channel index.
  void require_classes_below(std::size_t num_classes, const char* what) const {
    for (std::uint32_t v : data)
      if (v != kVoidLabel && v >= num_classes)
        throw ValidationError(std::string(what) + ": label " + std::to_string(v) +
                              " out of range for " + std::to_string(num_classes) + " classes");
  }

 private:
  static std::size_t check_shape(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0)
      throw ValidationError("label grid: dimensions must be positive, got " + std::to_string(h) +
                            "x" + std::to_string(w));
    return h * w;
  }
};

// H x W grid of encoded panoptic ids (class * kPanopticOffset + instance)
// with kVoidLabel for excluded pixels.
struct PanopticGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> data;

  PanopticGrid() = default;
  PanopticGrid(std::size_t h, std::size_t w, std::uint32_t fill = kVoidLabel)
      : height(h), width(w), data(check_shape(h, w), fill) {}
  PanopticGrid(std::size_t h, std::size_t w, std::vector<std::uint32_t> values)
      : height(h), width(w), data(std::move(values)) {
    if (data.size() != check_shape(h, w))
      throw ValidationError("panoptic grid: data length does not match height*width");
  }

  std::size_t pixels() const { return data.size(); }
  std::uint32_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint32_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  static std::uint32_t encode(std::uint32_t class_id, std::uint32_t instance) {
    if (instance >= kPanopticOffset)
      throw ValidationError("panoptic encode: instance index " + std::to_string(instance) +
                            " exceeds offset " + std::to_string(kPanopticOffset));
    return class_id * kPanopticOffset + instance;
  }
  static std::uint32_t class_of(std::uint32_t encoded) { return encoded / kPanopticOffset; }
  static std::uint32_t instance_of(std::uint32_t encoded) { return encoded % kPanopticOffset; }

 private:
  static std::size_t check_shape(std::size_t h, std::size_t w) {
    if (h == 0 || w == 0)
      throw ValidationError("panoptic grid: dimensions must be positive, got " +
                            std::to_string(h) + "x" + std::to_string(w));
    return h * w;
  }
};

// Half-open pixel rectangle [x0, x1) x [y0, y1); must be non-degenerate.
struct BBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  BBox() = default;
  BBox(std::size_t x_lo, std::size_t y_lo, std::size_t x_hi, std::size_t y_hi)
      : x0(x_lo), y0(y_lo), x1(x_hi), y1(y_hi) {
    if (x0 >= x1 || y0 >= y1)
      throw ValidationError("bbox: degenerate extent [" + std::to_string(x0) + "," +
                            std::to_string(x1) + ")x[" + std::to_string(y0) + "," +
                            std::to_string(y1) + ")");
  }

  std::size_t width() const { return x1 - x0; }
  std::size_t height() const { return y1 - y0; }

  void require_within(std::size_t image_height, std::size_t image_width, const char* what) const {
    if (x1 > image_width || y1 > image_height)
      throw ValidationError(std::string(what) + ": bbox exceeds image bounds");
  }

  bool contains(std::size_t y, std::size_t x) const {
    return y >= y0 && y < y1 && x >= x0 && x < x1;
  }

  bool operator==(const BBox& other) const = default;
};

// H x W binary mask stored as 0/1 bytes.
struct BinaryMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), data(h * w, fill) {
    if (h == 0 || w == 0) throw ValidationError("binary mask: dimensions must be positive");
  }

  std::size_t pixels() const { return data.size(); }
  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (std::uint8_t v : data) n += v ? 1 : 0;
    return n;
  }
};

// Intersection-over-union of two equally shaped masks. Two empty masks have
// IoU 0 by convention.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width)
    throw ValidationError("iou: mask shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool pa = a.data[i] != 0, pb = b.data[i] != 0;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Corner-aligned bilinear resize, applied per channel. Sample i out of n maps
// to source coordinate i * (in - 1) / (n - 1); a single output sample maps to
// coordinate 0. Resizing to the identical shape reproduces the input bitwise.
inline DenseGrid resize_bilinear(const DenseGrid& grid, std::size_t out_height,
                                 std::size_t out_width) {
  if (out_height == 0 || out_width == 0)
    throw ValidationError("resize: target dimensions must be positive");
  DenseGrid out(out_height, out_width, grid.channels);
  const double scale_y =
      out_height > 1 ? static_cast<double>(grid.height - 1) / static_cast<double>(out_height - 1)
                     : 0.0;
  const double scale_x =
      out_width > 1 ? static_cast<double>(grid.width - 1) / static_cast<double>(out_width - 1)
                    : 0.0;
  for (std::size_t oy = 0; oy < out_height; ++oy) {
    const double sy = static_cast<double>(oy) * scale_y;
    std::size_t y0 = static_cast<std::size_t>(sy);
    if (y0 + 1 >= grid.height) y0 = grid.height - 1;
    const std::size_t y1 = std::min(y0 + 1, grid.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_width; ++ox) {
      const double sx = static_cast<double>(ox) * scale_x;
      std::size_t x0 = static_cast<std::size_t>(sx);
      if (x0 + 1 >= grid.width) x0 = grid.width - 1;
      const std::size_t x1 = std::min(x0 + 1, grid.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < grid.channels; ++c) {
        // Integral sample coordinates copy the source value untouched, which
        // makes same-shape resizing an exact identity.
        const double v00 = grid.at(y0, x0, c);
        const double top =
            fx == 0.0 ? v00 : (1.0 - fx) * v00 + fx * grid.at(y0, x1, c);
        if (fy == 0.0) {
          out.at(oy, ox, c) = top;
        } else {
          const double bottom =
              fx == 0.0 ? grid.at(y1, x0, c)
                        : (1.0 - fx) * grid.at(y1, x0, c) + fx * grid.at(y1, x1, c);
          out.at(oy, ox, c) = (1.0 - fy) * top + fy * bottom;
        }
      }
    }
  }
  return out;
}

struct ArgmaxResult {
  LabelGrid labels;   // winning channel per pixel
  DenseGrid values;   // H x W x 1, the winning value
};

// Channelwise argmax; ties resolve to the lowest channel index.
inline ArgmaxResult channel_argmax(const DenseGrid& grid) {
  ArgmaxResult result{LabelGrid(grid.height, grid.width), DenseGrid(grid.height, grid.width, 1)};
  for (std::size_t p = 0; p < grid.pixels(); ++p) {
    const double* v = grid.pixel(p);
    std::size_t best = 0;
    for (std::size_t c = 1; c < grid.channels; ++c)
      if (v[c] > v[best]) best = c;
    result.labels.data[p] = static_cast<std::uint32_t>(best);
    result.values.data[p] = v[best];
  }
  return result;
}

}  // namespace evpan
