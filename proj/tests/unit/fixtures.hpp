#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

namespace fixtures {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("privleak_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void put_u32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

/// Writes a small MNIST-shaped IDX set under root/mnist: each class is a
/// bright 6x6 block at a class-specific position plus uniform noise.
inline void write_fake_mnist(const std::filesystem::path& root, int n_train, int n_test, std::uint32_t seed = 1) {
  const auto dir = root / "mnist";
  std::filesystem::create_directories(dir);
  std::mt19937 rng(seed);
  auto write = [&](const std::string& images, const std::string& labels, int n) {
    std::ofstream img(dir / images, std::ios::binary), lab(dir / labels, std::ios::binary);
    put_u32(img, 0x803);
    put_u32(img, static_cast<std::uint32_t>(n));
    put_u32(img, 28);
    put_u32(img, 28);
    put_u32(lab, 0x801);
    put_u32(lab, static_cast<std::uint32_t>(n));
    for (int i = 0; i < n; ++i) {
      const int c = static_cast<int>(rng() % 10);
      const int r0 = 2 + (c / 5) * 12, c0 = 2 + (c % 5) * 5;
      for (int r = 0; r < 28; ++r)
        for (int k = 0; k < 28; ++k) {
          const bool on = r >= r0 && r < r0 + 6 && k >= c0 && k < c0 + 4;
          const auto v = static_cast<unsigned char>(on ? 200 + rng() % 56 : rng() % 60);
          img.put(static_cast<char>(v));
        }
      lab.put(static_cast<char>(c));
    }
  };
  write("train-images-idx3-ubyte", "train-labels-idx1-ubyte", n_train);
  write("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", n_test);
}

}  // namespace fixtures
