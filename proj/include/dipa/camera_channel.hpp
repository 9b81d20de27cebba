#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dipa/errors.hpp"
#include "dipa/resample.hpp"
#include "dipa/tensor.hpp"
#include "dipa/types.hpp"

namespace dipa {

// Crude stand-in for a camera's capture path.
struct CameraChannelConfig {
  double gamma = 1.0;
  double blur_sigma = 0.0;   // pixels
  double noise_sigma = 0.0;  // intensity units
  double downscale_factor = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(gamma > 0.0)) throw ValidationError("gamma must be > 0");
    if (!(blur_sigma >= 0.0)) throw ValidationError("blur_sigma must be >= 0");
    if (!(noise_sigma >= 0.0)) {
      throw ValidationError("noise_sigma must be >= 0");
    }
    if (!(downscale_factor >= 1.0)) {
      throw ValidationError("downscale_factor must be >= 1");
    }
  }

  friend bool operator==(const CameraChannelConfig&,
                         const CameraChannelConfig&) = default;
};

inline void to_json(json& j, const CameraChannelConfig& c) {
  j = json{{"gamma", c.gamma},
           {"blur_sigma", c.blur_sigma},
           {"noise_sigma", c.noise_sigma},
           {"downscale_factor", c.downscale_factor},
           {"seed", c.seed}};
}
inline void from_json(const json& j, CameraChannelConfig& c) {
  c.gamma = j.value("gamma", 1.0);
  c.blur_sigma = j.value("blur_sigma", 0.0);
  c.noise_sigma = j.value("noise_sigma", 0.0);
  c.downscale_factor = j.value("downscale_factor", 1.0);
  c.seed = j.value("seed", std::uint64_t{0});
  c.validate();
}

// Separable Gaussian blur with edge clamping; kernel radius ceil(3 sigma).
inline Tensor3 gaussian_blur(const Tensor3& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += kernel[i + radius];
  }
  for (auto& k : kernel) k /= total;

  const int h = src.height(), w = src.width(), ch = src.channels();
  Tensor3 tmp(h, w, ch), out(h, w, ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * src.at(y, std::clamp(x + k, 0, w - 1), c);
        }
        tmp.at(y, x, c) = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp.at(std::clamp(y + k, 0, h - 1), x, c);
        }
        out.at(y, x, c) = acc;
      }
    }
  }
  return out;
}

// Gamma, blur, down/up-scale, additive Gaussian noise, clamp. Stages at their
// identity settings are skipped, so the identity config is bit-exact.
inline ImageTensor simulate_camera_channel(const ImageTensor& x,
                                           const CameraChannelConfig& cfg) {
  cfg.validate();
  Tensor3 t = x.pixels();
  if (cfg.gamma != 1.0) {
    for (auto& v : t.values()) v = std::pow(v, cfg.gamma);
  }
  t = gaussian_blur(t, cfg.blur_sigma);
  if (cfg.downscale_factor > 1.0) {
    const int h = t.height(), w = t.width();
    const int sh = std::max(1, static_cast<int>(std::lround(h / cfg.downscale_factor)));
    const int sw = std::max(1, static_cast<int>(std::lround(w / cfg.downscale_factor)));
    t = resize_bilinear(resize_bilinear(t, sh, sw), h, w);
  }
  if (cfg.noise_sigma > 0.0) {
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (auto& v : t.values()) v += noise(rng);
  }
  for (auto& v : t.values()) v = std::clamp(v, 0.0, 1.0);
  return ImageTensor(std::move(t));
}

}  // namespace dipa
