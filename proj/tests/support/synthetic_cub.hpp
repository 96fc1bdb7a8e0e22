#pragma once

// Writes a miniature dataset directory with the same four text files as the
// real thing: attributes.txt, images.txt, image_attribute_labels.txt,
// train_test_split.txt. Sized for fast CLI tests.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testsupport {

struct SyntheticCubOptions {
  std::uint32_t num_images = 12;
  std::uint64_t seed = 11;
  bool five_fields = true;  // append certainty/time columns like the original
};

struct SyntheticCub {
  std::filesystem::path dir;
  std::uint32_t num_images = 0;
  std::uint32_t num_attributes = 9;  // 3 groups x 3 varieties
  std::uint64_t positive_lines = 0;  // lines written with is_present == 1
};

inline SyntheticCub write_synthetic_cub(const std::filesystem::path& dir,
                                        const SyntheticCubOptions& opt = {}) {
  std::filesystem::create_directories(dir);
  SyntheticCub out;
  out.dir = dir;
  out.num_images = opt.num_images;

  const std::vector<std::string> names = {
      "has_bill_shape::curved", "has_bill_shape::hooked", "has_bill_shape::needle",
      "has_wing_color::blue",   "has_wing_color::brown",  "has_wing_color::grey",
      "has_size::small",        "has_size::medium",       "has_size::large"};
  {
    std::ofstream f(dir / "attributes.txt", std::ios::trunc);
    for (std::size_t i = 0; i < names.size(); ++i)
      f << (i + 1) << " " << names[i] << "\n";
  }
  {
    std::ofstream f(dir / "images.txt", std::ios::trunc);
    for (std::uint32_t i = 1; i <= opt.num_images; ++i)
      f << i << " species_" << (i % 3) << "/img_" << i << ".jpg\n";
  }
  {
    std::ofstream f(dir / "train_test_split.txt", std::ios::trunc);
    for (std::uint32_t i = 1; i <= opt.num_images; ++i)
      f << i << " " << (i % 2) << "\n";  // odd ids train, even ids test
  }
  {
    std::mt19937_64 rng(opt.seed);
    std::bernoulli_distribution coin(0.4);
    std::uniform_int_distribution<int> certainty(1, 4);
    std::ofstream f(dir / "image_attribute_labels.txt", std::ios::trunc);
    for (std::uint32_t img = 1; img <= opt.num_images; ++img) {
      bool any = false;
      for (std::uint32_t attr = 1; attr <= out.num_attributes; ++attr) {
        // force at least one positive per image so nothing gets skipped
        const bool present = (attr == out.num_attributes && !any) || coin(rng);
        any = any || present;
        f << img << " " << attr << " " << (present ? 1 : 0);
        if (opt.five_fields) f << " " << certainty(rng) << " " << 7.5;
        f << "\n";
        if (present) ++out.positive_lines;
      }
    }
  }
  return out;
}

}  // namespace testsupport
