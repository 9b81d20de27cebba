// Writes synthetic stand-in faces: make_faces <out_dir> <side> <seed>...

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "dipa/png_io.hpp"
#include "dipa/synthetic.hpp"

int main(int argc, char** argv) {
  if (argc < 4) {
    std::cerr << "usage: make_faces <out_dir> <side> <seed>...\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  const int side = std::atoi(argv[2]);
  if (side < 8) {
    std::cerr << "side must be >= 8\n";
    return 2;
  }
  std::filesystem::create_directories(dir);
  for (int i = 3; i < argc; ++i) {
    const auto seed = static_cast<std::uint32_t>(std::strtoul(argv[i], nullptr, 10));
    const auto path = dir / ("face_" + std::string(argv[i]) + ".png");
    dipa::save_image(path, dipa::synthetic_face(side, seed).pixels());
    std::cout << path.string() << "\n";
  }
  return 0;
}
