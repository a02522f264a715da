#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace epir {

// 8-bit grayscale image, row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h);
  GrayImage(int w, int h, std::vector<std::uint8_t> px);

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Luma conversion with weights 0.299 / 0.587 / 0.114; rgb is interleaved.
GrayImage rgb_to_gray(int width, int height, std::span<const std::uint8_t> rgb);

// Binary PGM (P5), maxval <= 255.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

}  // namespace epir
