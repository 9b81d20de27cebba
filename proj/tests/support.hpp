#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "dipa/dipa.hpp"

namespace testing_support {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "dipa") {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

// Desk-scale geometry: 128 px photo, 96 px patch, 3x3 pooling, 64 px model
// input.
inline dipa::AttackConfig small_config(int steps = 20) {
  dipa::AttackConfig cfg;
  cfg.steps = steps;
  cfg.patch_side = 96;
  cfg.pool_kernel = 3;
  cfg.jitter_samples = 2;
  return cfg;
}

// Even smaller geometry for tests that only exercise plumbing.
inline dipa::AttackConfig tiny_config(int steps = 5) {
  dipa::AttackConfig cfg;
  cfg.steps = steps;
  cfg.patch_side = 24;
  cfg.pool_kernel = 3;
  cfg.jitter_samples = 1;
  return cfg;
}

inline std::vector<std::uint8_t> face_png(int side, std::uint32_t seed) {
  return dipa::encode_image_png(dipa::synthetic_face(side, seed).pixels());
}

}  // namespace testing_support
