#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "dipa/errors.hpp"
#include "dipa/resample.hpp"
#include "dipa/tensor.hpp"
#include "dipa/types.hpp"

namespace dipa {

// Concrete affine parameters for one patch application, in normalized image
// coordinates.
struct AffineParams {
  double center_x = 0.5;
  double center_y = 0.5;
  double scale = 0.35;
  double rotation_deg = 0.0;

  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

inline AffineParams nominal_params(const Placement& p) {
  return {p.center_x, p.center_y, p.scale, p.rotation_deg};
}

// Shifts the center (and caps the scale) so the rotated patch square stays
// inside a height x width image.
inline AffineParams clamp_to_image(AffineParams a, int height, int width) {
  const double theta = a.rotation_deg * std::numbers::pi / 180.0;
  const double spread = std::abs(std::cos(theta)) + std::abs(std::sin(theta));
  a.scale = std::clamp(a.scale, 1e-9, 1.0 / spread);
  const double half = 0.5 * a.scale * std::min(height, width) * spread;
  auto clamp_axis = [half](double center, int extent) {
    const double c = center * extent;
    if (2 * half >= extent) return 0.5;
    return std::clamp(c, half, extent - half) / extent;
  };
  a.center_x = clamp_axis(a.center_x, width);
  a.center_y = clamp_axis(a.center_y, height);
  return a;
}

// Draws one placement: each parameter moves uniformly within its symmetric
// jitter range, then the result is clamped into the image. Consumes exactly
// four uniform draws regardless of the ranges.
template <class Rng>
AffineParams sample_placement(const Placement& placement, int height,
                              int width, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double ux = unit(rng);
  const double uy = unit(rng);
  const double us = unit(rng);
  const double ur = unit(rng);
  AffineParams a = nominal_params(placement);
  const Jitter& j = placement.jitter;
  if (j.dx > 0) a.center_x += (2 * ux - 1) * j.dx;
  if (j.dy > 0) a.center_y += (2 * uy - 1) * j.dy;
  if (j.dscale > 0) a.scale += (2 * us - 1) * j.dscale;
  if (j.drot > 0) a.rotation_deg += (2 * ur - 1) * j.drot;
  return clamp_to_image(a, height, width);
}

// Builds the sparse bilinear map from a q_h x q_w pooled patch onto the image
// pixels covered by the placed square. A pixel is covered when its center
// falls inside the square.
inline SampleMap placement_map(int image_h, int image_w, int patch_h,
                               int patch_w, const AffineParams& a) {
  const double side = a.scale * std::min(image_h, image_w);
  if (!(side >= 1.0)) {
    throw PlacementError("placement maps the patch to " + std::to_string(side) +
                         " px, below the 1 px minimum");
  }
  const double cx = a.center_x * image_w;
  const double cy = a.center_y * image_h;
  const double theta = a.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double half =
      0.5 * side * (std::abs(cos_t) + std::abs(sin_t)) + 1.0;

  SampleMap map{patch_h, patch_w, image_h, image_w, {}};
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - half)));
  const int y_hi = std::min(image_h - 1, static_cast<int>(std::ceil(cy + half)));
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - half)));
  const int x_hi = std::min(image_w - 1, static_cast<int>(std::ceil(cx + half)));
  for (int y = y_lo; y <= y_hi; ++y) {
    for (int x = x_lo; x <= x_hi; ++x) {
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      const double u = (cos_t * dx + sin_t * dy) / side + 0.5;
      const double v = (-sin_t * dx + cos_t * dy) / side + 0.5;
      if (u < 0.0 || u >= 1.0 || v < 0.0 || v >= 1.0) continue;
      map.taps.push_back(bilinear_tap(
          static_cast<std::size_t>(y) * image_w + x, v * patch_h - 0.5,
          u * patch_w - 0.5, patch_h, patch_w));
    }
  }
  if (map.taps.empty()) {
    throw PlacementError("placement covers no image pixels");
  }
  return map;
}

struct Composite {
  Tensor3 image;
  SampleMap map;
};

// Opaque compositing of a pooled patch: covered pixels are replaced by the
// bilinearly resampled patch, all others are copied from x unchanged.
inline Composite composite_patch(const Tensor3& x, const Tensor3& q,
                                 const AffineParams& a) {
  if (q.channels() != x.channels()) {
    throw DimensionError("patch/image channel mismatch");
  }
  Composite out{x, placement_map(x.height(), x.width(), q.height(), q.width(),
                                 a)};
  apply_sample_map(out.map, q, out.image);
  return out;
}

// Gradient with respect to the pooled patch.
inline Tensor3 composite_backward(const Composite& c, int channels,
                                  const Tensor3& grad_image) {
  return sample_map_backward(c.map, channels, grad_image);
}

// Applies the patch at the placement's nominal parameters (no jitter).
inline ImageTensor apply_patch(const ImageTensor& x, const Tensor3& q,
                               const Placement& placement) {
  Composite c = composite_patch(x.pixels(), q, nominal_params(placement));
  for (auto& v : c.image.values()) v = std::clamp(v, 0.0, 1.0);
  return ImageTensor(std::move(c.image));
}

inline ImageTensor apply_patch(const ImageTensor& x, const Tensor3& q,
                               const AffineParams& params) {
  Composite c = composite_patch(x.pixels(), q, params);
  for (auto& v : c.image.values()) v = std::clamp(v, 0.0, 1.0);
  return ImageTensor(std::move(c.image));
}

}  // namespace dipa
