#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dipa/errors.hpp"

namespace dipa {

// Dense height x width x channels array of doubles, interleaved (HWC) layout.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int height, int width, int channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    if (height < 0 || width < 0 || channels < 0) {
      throw DimensionError("Tensor3: negative dimension");
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }
  double& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Tensor3& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  Tensor3& operator+=(const Tensor3& other) {
    if (!same_shape(other)) throw DimensionError("Tensor3 +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }
  Tensor3& operator*=(double s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Tensor3& t) {
  return std::to_string(t.height()) + "x" + std::to_string(t.width()) + "x" +
         std::to_string(t.channels());
}

// Decoded RGB raster as it comes out of an image file.
struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;  // interleaved, height*width*channels
};

// H x W x 3 tensor with every element in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;

  // Validates shape and range; throws ValidationError.
  explicit ImageTensor(Tensor3 pixels) : pixels_(std::move(pixels)) {
    if (pixels_.height() < 1 || pixels_.width() < 1) {
      throw ValidationError("image must be at least 1x1, got " +
                            shape_string(pixels_));
    }
    if (pixels_.channels() != 3) {
      throw ValidationError("image must have 3 channels, got " +
                            std::to_string(pixels_.channels()));
    }
    for (double v : pixels_.values()) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("image intensity outside [0,1]");
      }
    }
  }

  int height() const { return pixels_.height(); }
  int width() const { return pixels_.width(); }
  const Tensor3& pixels() const { return pixels_; }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  Tensor3 pixels_;
};

// Rescales an 8- or 16-bit RGB raster to unit-interval intensities.
inline ImageTensor validate_image(const Raster& raw) {
  if (raw.height < 1 || raw.width < 1) {
    throw ValidationError("zero-sized image");
  }
  if (raw.channels != 3) {
    throw ValidationError("expected RGB raster, got " +
                          std::to_string(raw.channels) + " channel(s)");
  }
  if (raw.bit_depth != 8 && raw.bit_depth != 16) {
    throw ValidationError("unsupported bit depth " +
                          std::to_string(raw.bit_depth));
  }
  const std::size_t n = static_cast<std::size_t>(raw.height) * raw.width * 3;
  if (raw.samples.size() != n) {
    throw ValidationError("raster sample count does not match dimensions");
  }
  const double max_value = raw.bit_depth == 8 ? 255.0 : 65535.0;
  Tensor3 t(raw.height, raw.width, 3);
  for (std::size_t i = 0; i < n; ++i) {
    if (raw.samples[i] > max_value) {
      throw ValidationError("sample exceeds bit depth");
    }
    t[i] = raw.samples[i] / max_value;
  }
  return ImageTensor(std::move(t));
}

// Idempotent revalidation of an already-valid tensor.
inline ImageTensor validate_image(const ImageTensor& image) {
  return ImageTensor(image.pixels());
}

inline std::uint8_t quantize8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(c * 255.0 + 0.5);
}

// 8-bit export quantization: round(v * 255).
inline Raster to_raster8(const Tensor3& t) {
  Raster r;
  r.height = t.height();
  r.width = t.width();
  r.channels = t.channels();
  r.bit_depth = 8;
  r.samples.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) r.samples[i] = quantize8(t[i]);
  return r;
}

}  // namespace dipa
