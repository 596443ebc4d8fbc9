#include "acq/image_io.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace acq {

namespace {

void write_plain(const Image8& image, const std::filesystem::path& path, const char* magic, int channels) {
  if (image.channels != channels) throw std::invalid_argument(std::string(magic) + ": wrong channel count");
  if (image.pixels.size() != static_cast<size_t>(image.width) * image.height * channels) {
    throw std::invalid_argument(std::string(magic) + ": pixel buffer does not match dimensions");
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os << magic << '\n' << image.width << ' ' << image.height << "\n255\n";
  const int row = image.width * channels;
  for (int r = 0; r < image.height; ++r) {
    for (int c = 0; c < row; ++c) os << (c ? " " : "") << static_cast<int>(image.pixels[r * row + c]);
    os << '\n';
  }
  if (!os) throw std::runtime_error("write to '" + path.string() + "' failed");
}

}  // namespace

void write_pgm(const Image8& image, const std::filesystem::path& path) { write_plain(image, path, "P2", 1); }

void write_ppm(const Image8& image, const std::filesystem::path& path) { write_plain(image, path, "P3", 3); }

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::string magic;
  int maxval = 0;
  Image8 img;
  is >> magic >> img.width >> img.height >> maxval;
  if (magic != "P2" && magic != "P3") throw std::runtime_error(path.string() + ": not a plain PGM/PPM file");
  if (!is || img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw std::runtime_error(path.string() + ": malformed header");
  }
  img.channels = magic == "P2" ? 1 : 3;
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
  for (auto& p : img.pixels) {
    int v;
    if (!(is >> v) || v < 0 || v > 255) throw std::runtime_error(path.string() + ": truncated or invalid pixel data");
    p = static_cast<uint8_t>(v);
  }
  return img;
}

}  // namespace acq
