#pragma once

#include <cmath>

#include "dipa/tensor.hpp"

namespace dipa {

inline constexpr double kTvEpsilon = 1e-8;

// Isotropic total variation with forward differences; a missing neighbor at
// the last row/column contributes a zero difference. Each term is
// sqrt(dy^2 + dx^2 + eps) - sqrt(eps), so constant inputs score exactly 0.
inline double total_variation(const Tensor3& p, double eps = kTvEpsilon) {
  const double bias = std::sqrt(eps);
  const int h = p.height();
  const int w = p.width();
  double sum = 0.0;
  for (int c = 0; c < p.channels(); ++c) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double v = p.at(i, j, c);
        const double down = i + 1 < h ? v - p.at(i + 1, j, c) : 0.0;
        const double right = j + 1 < w ? v - p.at(i, j + 1, c) : 0.0;
        sum += std::sqrt(down * down + right * right + eps) - bias;
      }
    }
  }
  return sum;
}

// Gradient of total_variation. At eps = 0 flat points take the zero
// subgradient.
inline Tensor3 total_variation_grad(const Tensor3& p,
                                    double eps = kTvEpsilon) {
  Tensor3 g(p.height(), p.width(), p.channels());
  const int h = p.height();
  const int w = p.width();
  for (int c = 0; c < p.channels(); ++c) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double v = p.at(i, j, c);
        const double down = i + 1 < h ? v - p.at(i + 1, j, c) : 0.0;
        const double right = j + 1 < w ? v - p.at(i, j + 1, c) : 0.0;
        const double t = std::sqrt(down * down + right * right + eps);
        if (t == 0.0) continue;
        g.at(i, j, c) += (down + right) / t;
        if (i + 1 < h) g.at(i + 1, j, c) -= down / t;
        if (j + 1 < w) g.at(i, j + 1, c) -= right / t;
      }
    }
  }
  return g;
}

}  // namespace dipa
