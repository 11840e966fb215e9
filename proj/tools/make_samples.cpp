// Regenerates the bundled sample inputs under samples/.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "unseg/io.hpp"
#include "unseg/synthetic.hpp"

int main(int argc, char** argv) {
  namespace fs = std::filesystem;
  using namespace unseg;
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("samples");
  try {
    fs::create_directories(root / "frames");
    io::save_image(root / "two_region_64.png", synthetic::two_region(64, 0));
    io::save_image(root / "constant_32.png", synthetic::constant_image(32, 32, {0.4f, 0.5f, 0.6f}));
    io::save_labelmap_raw(root / "two_region_64_truth.png", synthetic::two_region_truth(64));

    // Scribble raster: 255 = unscribbled.
    const Scribbles s = synthetic::two_region_scribbles(64);
    io::Raster r{64, 64, 1, 255, std::vector<std::uint16_t>(64 * 64, 255)};
    for (std::size_t n = 0; n < s.mask.size(); ++n)
      if (s.mask.data[n]) r.samples[n] = static_cast<std::uint16_t>(s.labels.data[n]);
    io::write_raster(root / "two_region_64_scribbles.png", r);

    for (int f = 0; f < 3; ++f) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%02d.png", f);
      io::save_image(root / "frames" / name, synthetic::two_region(64, 100 + f, 0.1, 2.0 * f));
    }
  } catch (const std::exception& e) {
    std::cerr << "make_samples: " << e.what() << "\n";
    return 1;
  }
  std::cout << "samples written to " << root << "\n";
  return 0;
}
