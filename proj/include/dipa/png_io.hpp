#pragma once

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dipa/errors.hpp"
#include "dipa/tensor.hpp"

namespace dipa {

namespace detail {

struct PngReadBuffer {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t offset;
};

inline void png_read_from_buffer(png_structp png, png_bytep out,
                                 png_size_t length) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + length > buf->size) {
    png_error(png, "unexpected end of PNG data");
  }
  std::memcpy(out, buf->data + buf->offset, length);
  buf->offset += length;
}

inline void png_write_to_vector(png_structp png, png_bytep in,
                                png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + length);
}

inline void png_flush_noop(png_structp) {}

inline void png_error_to_buffer(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

inline void png_warning_ignore(png_structp, png_const_charp) {}

}  // namespace detail

// Decodes PNG bytes into a raster, keeping the file's channel count and bit
// depth (palette images are expanded to RGB). Throws ValidationError.
inline Raster decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw ValidationError("PNG decode failed: missing PNG signature");
  }
  std::string error;
  png_structp png = png_create_read_struct(
      PNG_LIBPNG_VER_STRING, &error, detail::png_error_to_buffer,
      detail::png_warning_ignore);
  if (!png) throw ValidationError("PNG decode failed: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ValidationError("PNG decode failed: out of memory");
  }

  Raster raster;
  std::vector<std::uint8_t> rows;
  std::vector<png_bytep> row_ptrs;
  detail::PngReadBuffer buffer{bytes.data(), bytes.size(), 0};

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("PNG decode failed: " + error);
  }

  png_set_read_fn(png, &buffer, detail::png_read_from_buffer);
  png_read_info(png, info);

  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int color_type = png_get_color_type(png, info);
  int bit_depth = png_get_bit_depth(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (bit_depth < 8) {
    png_set_packing(png);
    if (color_type == PNG_COLOR_TYPE_GRAY) png_set_expand_gray_1_2_4_to_8(png);
  }
  if (bit_depth == 16) png_set_swap(png);  // host little-endian order
  png_read_update_info(png, info);

  bit_depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  rows.resize(row_bytes * height);
  row_ptrs.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) {
    row_ptrs[y] = rows.data() + y * row_bytes;
  }
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  raster.height = static_cast<int>(height);
  raster.width = static_cast<int>(width);
  raster.channels = channels;
  raster.bit_depth = bit_depth;
  const std::size_t n = static_cast<std::size_t>(height) * width * channels;
  raster.samples.resize(n);
  if (bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint16_t v;
      std::memcpy(&v, rows.data() + 2 * i, 2);
      raster.samples[i] = v;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) raster.samples[i] = rows[i];
  }
  return raster;
}

// Encodes an 8- or 16-bit RGB raster as PNG. Output bytes are a pure
// function of the raster.
inline std::vector<std::uint8_t> encode_png(const Raster& raster) {
  if (raster.channels != 3) {
    throw ValidationError("PNG encode supports RGB only");
  }
  if (raster.bit_depth != 8 && raster.bit_depth != 16) {
    throw ValidationError("PNG encode supports 8/16-bit only");
  }
  std::string error;
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(
      PNG_LIBPNG_VER_STRING, &error, detail::png_error_to_buffer,
      detail::png_warning_ignore);
  if (!png) throw Error("PNG encode failed: out of memory");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("PNG encode failed: out of memory");
  }

  const int bytes_per_sample = raster.bit_depth / 8;
  const std::size_t row_bytes =
      static_cast<std::size_t>(raster.width) * 3 * bytes_per_sample;
  std::vector<std::uint8_t> rows(row_bytes * raster.height);
  for (std::size_t i = 0; i < raster.samples.size(); ++i) {
    if (bytes_per_sample == 1) {
      rows[i] = static_cast<std::uint8_t>(raster.samples[i]);
    } else {
      rows[2 * i] = static_cast<std::uint8_t>(raster.samples[i] >> 8);
      rows[2 * i + 1] = static_cast<std::uint8_t>(raster.samples[i] & 0xff);
    }
  }
  std::vector<png_bytep> row_ptrs(raster.height);
  for (int y = 0; y < raster.height; ++y) {
    row_ptrs[y] = rows.data() + y * row_bytes;
  }

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encode failed: " + error);
  }
  png_set_write_fn(png, &out, detail::png_write_to_vector,
                   detail::png_flush_noop);
  png_set_IHDR(png, info, raster.width, raster.height, raster.bit_depth,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline ImageTensor load_image(const std::filesystem::path& path) {
  return validate_image(decode_png(read_file_bytes(path)));
}

inline std::vector<std::uint8_t> encode_image_png(const Tensor3& t) {
  return encode_png(to_raster8(t));
}

inline void save_image(const std::filesystem::path& path, const Tensor3& t) {
  write_file_bytes(path, encode_image_png(t));
}

}  // namespace dipa
