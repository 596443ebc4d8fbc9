#include "acq/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "acq/image_io.hpp"

namespace acq {

Tensor attention_tensor(const Tensor& backbone) {
  if (backbone.ndim() != 4) {
    throw ShapeError("attention: expects N x c x h x w backbone output, got " + shape_str(backbone.shape()));
  }
  const int64_t n = backbone.dim(0), h = backbone.dim(2), w = backbone.dim(3);
  Tensor energy = reshape(sum(square(backbone), {1}), {n, 1, h, w});
  Tensor hi = reshape(adaptive_max_pool2d(energy, 1, 1), {n, 1, 1, 1});
  Tensor lo = neg(reshape(adaptive_max_pool2d(neg(energy), 1, 1), {n, 1, 1, 1}));
  Tensor range = clip(hi - lo, 1e-12f, std::numeric_limits<float>::max());
  return reshape((energy - lo) / range, {n, h, w});
}

std::vector<AttentionMap> maps_from_tensor(const Tensor& maps, Mode source) {
  if (maps.ndim() != 3) throw ShapeError("attention: expects N x h x w maps, got " + shape_str(maps.shape()));
  const int64_t n = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  std::vector<AttentionMap> out(n);
  const auto v = maps.data();
  for (int64_t i = 0; i < n; ++i) {
    AttentionMap& m = out[i];
    m.h = h;
    m.w = w;
    m.source = source;
    m.values.assign(v.begin() + i * h * w, v.begin() + (i + 1) * h * w);
    int64_t best = 0;
    for (int64_t k = 1; k < h * w; ++k) {
      if (m.values[k] > m.values[best]) best = k;
    }
    m.center = p_to_cell(best, h, w);
  }
  return out;
}

std::vector<AttentionMap> attention_maps(const Tensor& backbone, Mode source) {
  if (backbone.ndim() == 3) {
    return attention_maps(reshape(backbone.detach(), {1, backbone.dim(0), backbone.dim(1), backbone.dim(2)}), source);
  }
  if (backbone.ndim() == 4 && (backbone.dim(2) == 0 || backbone.dim(3) == 0)) {
    throw ShapeError("attention: empty spatial dimensions");
  }
  return maps_from_tensor(attention_tensor(backbone.detach()), source);
}

AttentionMap attention_matrix(const Tensor& backbone, Mode source) {
  auto maps = attention_maps(backbone, source);
  if (maps.size() != 1) throw ShapeError("attention_matrix: expected a single sample, got " + shape_str(backbone.shape()));
  return std::move(maps.front());
}

int64_t position_index(Cell cell, int64_t h, int64_t w) {
  if (cell.row < 0 || cell.row >= h || cell.col < 0 || cell.col >= w) {
    throw std::out_of_range("position_index: cell outside the grid");
  }
  return cell.row * w + cell.col;
}

Cell p_to_cell(int64_t p, int64_t h, int64_t w) {
  if (p < 0 || p >= h * w) {
    throw std::out_of_range("position " + std::to_string(p) + " outside [0, " + std::to_string(h * w) + ")");
  }
  return Cell{p / w, p % w};
}

float map_distance(const AttentionMap& a, const AttentionMap& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("map_distance: attention maps differ in shape");
  double acc = 0.0;
  for (size_t i = 0; i < a.values.size(); ++i) acc += std::fabs(static_cast<double>(a.values[i]) - b.values[i]);
  return static_cast<float>(acc / static_cast<double>(a.values.size()));
}

void export_heatmap(const AttentionMap& map, int out_h, int out_w, const std::filesystem::path& path) {
  if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("export_heatmap: output size must be positive");
  Image8 img{out_w, out_h, 1, std::vector<uint8_t>(static_cast<size_t>(out_w) * out_h)};
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      const float v = map.at(static_cast<int64_t>(i) * map.h / out_h, static_cast<int64_t>(j) * map.w / out_w);
      img.pixels[i * out_w + j] = static_cast<uint8_t>(std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  write_pgm(img, path);
}

}  // namespace acq
