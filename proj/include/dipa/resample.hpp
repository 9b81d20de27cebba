#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "dipa/errors.hpp"
#include "dipa/tensor.hpp"

namespace dipa {

// Bilinear interpolation weights for one destination pixel. Indices are flat
// pixel indices (y * width + x) into the source, channel excluded.
struct BilinearTap {
  std::size_t dst;
  std::array<std::size_t, 4> src;
  std::array<double, 4> weight;
};

// Sparse linear map from a source image to a subset of destination pixels.
// Forward and adjoint share the same taps.
struct SampleMap {
  int src_height = 0;
  int src_width = 0;
  int dst_height = 0;
  int dst_width = 0;
  std::vector<BilinearTap> taps;
};

// Edge-clamped bilinear tap at continuous source coordinates where pixel
// (i, j) has its center at (i, j).
inline BilinearTap bilinear_tap(std::size_t dst, double sy, double sx,
                                int height, int width) {
  const double fy0 = std::floor(sy);
  const double fx0 = std::floor(sx);
  const double ty = sy - fy0;
  const double tx = sx - fx0;
  auto clampi = [](long v, int n) {
    return static_cast<std::size_t>(v < 0 ? 0 : (v >= n ? n - 1 : v));
  };
  const long y0 = static_cast<long>(fy0);
  const long x0 = static_cast<long>(fx0);
  const std::size_t ya = clampi(y0, height), yb = clampi(y0 + 1, height);
  const std::size_t xa = clampi(x0, width), xb = clampi(x0 + 1, width);
  const auto w = static_cast<std::size_t>(width);
  return BilinearTap{dst,
                     {ya * w + xa, ya * w + xb, yb * w + xa, yb * w + xb},
                     {(1 - ty) * (1 - tx), (1 - ty) * tx, ty * (1 - tx),
                      ty * tx}};
}

// Applies the map: writes sampled values into dst at the tapped pixels and
// leaves every other pixel of dst untouched.
inline void apply_sample_map(const SampleMap& map, const Tensor3& src,
                             Tensor3& dst) {
  const int channels = src.channels();
  for (const auto& tap : map.taps) {
    for (int c = 0; c < channels; ++c) {
      double v = 0.0;
      for (int k = 0; k < 4; ++k) {
        v += tap.weight[k] * src[tap.src[k] * channels + c];
      }
      dst[tap.dst * channels + c] = v;
    }
  }
}

// Adjoint: gradient with respect to the source given gradient on dst.
inline Tensor3 sample_map_backward(const SampleMap& map, int channels,
                                   const Tensor3& grad_dst) {
  Tensor3 grad(map.src_height, map.src_width, channels);
  for (const auto& tap : map.taps) {
    for (int c = 0; c < channels; ++c) {
      const double g = grad_dst[tap.dst * channels + c];
      if (g == 0.0) continue;
      for (int k = 0; k < 4; ++k) {
        grad[tap.src[k] * channels + c] += tap.weight[k] * g;
      }
    }
  }
  return grad;
}

// Half-pixel-centered bilinear resize map.
inline SampleMap resize_map(int src_h, int src_w, int dst_h, int dst_w) {
  if (src_h < 1 || src_w < 1 || dst_h < 1 || dst_w < 1) {
    throw DimensionError("resize: empty image");
  }
  SampleMap map{src_h, src_w, dst_h, dst_w, {}};
  map.taps.reserve(static_cast<std::size_t>(dst_h) * dst_w);
  const double ry = static_cast<double>(src_h) / dst_h;
  const double rx = static_cast<double>(src_w) / dst_w;
  for (int y = 0; y < dst_h; ++y) {
    for (int x = 0; x < dst_w; ++x) {
      map.taps.push_back(bilinear_tap(static_cast<std::size_t>(y) * dst_w + x,
                                      (y + 0.5) * ry - 0.5,
                                      (x + 0.5) * rx - 0.5, src_h, src_w));
    }
  }
  return map;
}

inline Tensor3 resize_bilinear(const Tensor3& src, int dst_h, int dst_w) {
  if (src.height() == dst_h && src.width() == dst_w) return src;
  const SampleMap map = resize_map(src.height(), src.width(), dst_h, dst_w);
  Tensor3 out(dst_h, dst_w, src.channels());
  apply_sample_map(map, src, out);
  return out;
}

// Maps unit-interval intensities to the range an embedder expects:
// v -> scale * v + offset. The default targets [-1, 1].
struct IntensityMap {
  double scale = 2.0;
  double offset = -1.0;

  friend bool operator==(const IntensityMap&, const IntensityMap&) = default;
};

// Resize to input_side x input_side then apply the intensity map. Linear in
// the input, so the backward pass needs no cached activations.
inline Tensor3 preprocess_for_model(const Tensor3& x, int input_side,
                                    IntensityMap intensity = {}) {
  if (input_side < 1) throw DimensionError("input_side must be >= 1");
  Tensor3 out = resize_bilinear(x, input_side, input_side);
  for (auto& v : out.values()) v = intensity.scale * v + intensity.offset;
  return out;
}

inline Tensor3 preprocess_for_model(const ImageTensor& x, int input_side,
                                    IntensityMap intensity = {}) {
  return preprocess_for_model(x.pixels(), input_side, intensity);
}

inline Tensor3 preprocess_backward(const Tensor3& grad_out, int src_h,
                                   int src_w, IntensityMap intensity = {}) {
  Tensor3 g = grad_out;
  g *= intensity.scale;
  if (src_h == g.height() && src_w == g.width()) return g;
  const SampleMap map = resize_map(src_h, src_w, g.height(), g.width());
  return sample_map_backward(map, g.channels(), g);
}

}  // namespace dipa
