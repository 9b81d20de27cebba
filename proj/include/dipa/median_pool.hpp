#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "dipa/errors.hpp"
#include "dipa/tensor.hpp"

namespace dipa {

// Output of a median pool plus, for every output element, the flat index of
// the input element that was selected. The backward pass routes gradient
// through that index only.
struct PooledPatch {
  Tensor3 values;
  std::vector<std::size_t> source;
  int input_height = 0;
  int input_width = 0;
};

inline int pooled_side(int side, int kernel, int stride) {
  return (side - kernel) / stride + 1;
}

// Per-channel sliding-window median, window kernel x kernel. Ties at the
// median value resolve to the lowest row-major index within the window.
inline PooledPatch median_pool(const Tensor3& input, int kernel, int stride) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ValidationError("median_pool: kernel must be odd and positive, got " +
                          std::to_string(kernel));
  }
  if (stride < 1) {
    throw ValidationError("median_pool: stride must be >= 1");
  }
  if (kernel > input.height() || kernel > input.width()) {
    throw DimensionError("median_pool: kernel " + std::to_string(kernel) +
                         " exceeds input " + shape_string(input));
  }
  const int out_h = pooled_side(input.height(), kernel, stride);
  const int out_w = pooled_side(input.width(), kernel, stride);
  const int channels = input.channels();
  const int window = kernel * kernel;
  const int mid = window / 2;

  PooledPatch out;
  out.values = Tensor3(out_h, out_w, channels);
  out.source.resize(out.values.size());
  out.input_height = input.height();
  out.input_width = input.width();

  std::vector<double> scratch(window);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const int y0 = oy * stride;
      const int x0 = ox * stride;
      for (int c = 0; c < channels; ++c) {
        for (int wy = 0; wy < kernel; ++wy) {
          for (int wx = 0; wx < kernel; ++wx) {
            scratch[wy * kernel + wx] = input.at(y0 + wy, x0 + wx, c);
          }
        }
        std::nth_element(scratch.begin(), scratch.begin() + mid,
                         scratch.end());
        const double median = scratch[mid];
        std::size_t chosen = 0;
        bool found = false;
        for (int wy = 0; wy < kernel && !found; ++wy) {
          for (int wx = 0; wx < kernel; ++wx) {
            if (input.at(y0 + wy, x0 + wx, c) == median) {
              chosen = input.index(y0 + wy, x0 + wx, c);
              found = true;
              break;
            }
          }
        }
        const std::size_t o = out.values.index(oy, ox, c);
        out.values[o] = median;
        out.source[o] = chosen;
      }
    }
  }
  return out;
}

inline Tensor3 median_pool_backward(const PooledPatch& pooled,
                                    const Tensor3& grad_out) {
  if (!grad_out.same_shape(pooled.values)) {
    throw DimensionError("median_pool_backward: gradient shape mismatch");
  }
  Tensor3 grad(pooled.input_height, pooled.input_width,
               pooled.values.channels());
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    grad[pooled.source[i]] += grad_out[i];
  }
  return grad;
}

}  // namespace dipa
