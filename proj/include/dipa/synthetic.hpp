#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "dipa/tensor.hpp"

namespace dipa {

// A stand-in face: shaded elliptical skin region on a flat background. The
// seed varies shading and background, so different seeds act as different
// subjects for the synthetic embedders.
inline ImageTensor synthetic_face(int side, std::uint32_t seed) {
  Tensor3 t(side, side, 3);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double a = u(rng), b = u(rng), c = u(rng);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double dx = (x - side / 2.0) / side;
      const double dy = (y - side / 2.0) / side;
      const double r = std::sqrt(dx * dx / 0.12 + dy * dy / 0.2);
      for (int k = 0; k < 3; ++k) {
        const double v = r < 1.0 ? 0.55 + 0.2 * a * std::cos(7 * dx + k) +
                                       0.1 * b * std::sin(9 * dy)
                                 : 0.15 + 0.1 * c * k;
        t.at(y, x, k) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return ImageTensor(std::move(t));
}

}  // namespace dipa
