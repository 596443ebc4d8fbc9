#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace acq {

/// 8-bit raster; gray images have one channel, color images three (interleaved).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> pixels;

  uint8_t at(int row, int col, int ch = 0) const { return pixels[(row * width + col) * channels + ch]; }
};

/// Plain-text PGM (P2, maxval 255).
void write_pgm(const Image8& image, const std::filesystem::path& path);
/// Plain-text PPM (P3, maxval 255).
void write_ppm(const Image8& image, const std::filesystem::path& path);
/// Reads P2 or P3 files.
Image8 read_pnm(const std::filesystem::path& path);

}  // namespace acq
