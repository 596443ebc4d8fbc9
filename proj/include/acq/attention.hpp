#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "acq/nn.hpp"
#include "acq/tensor.hpp"

namespace acq {

struct Cell {
  int64_t row = 0;
  int64_t col = 0;
  bool operator==(const Cell&) const = default;
};

/// Normalized attention matrix of one sample and its centre (row-major-first argmax).
struct AttentionMap {
  int64_t h = 0;
  int64_t w = 0;
  std::vector<float> values;
  Cell center;
  Mode source = Mode::kEval;

  float at(int64_t row, int64_t col) const { return values[row * w + col]; }
};

/// Differentiable per-sample maps: A[N,c,h,w] -> M[N,h,w], min-max normalised
/// channel sum of squares. A constant plane maps to all zeros.
Tensor attention_tensor(const Tensor& backbone);

/// Extracts maps from A (c x h x w, or N x c x h x w for one map per sample).
std::vector<AttentionMap> attention_maps(const Tensor& backbone, Mode source = Mode::kEval);
/// Single-sample convenience; A must hold exactly one sample.
AttentionMap attention_matrix(const Tensor& backbone, Mode source = Mode::kEval);
/// Wraps an already-normalised [N,h,w] tensor.
std::vector<AttentionMap> maps_from_tensor(const Tensor& maps, Mode source);

int64_t position_index(Cell cell, int64_t h, int64_t w);
Cell p_to_cell(int64_t p, int64_t h, int64_t w);

/// Mean absolute elementwise difference.
float map_distance(const AttentionMap& a, const AttentionMap& b);

/// Writes the map as an 8-bit P2 image, nearest-neighbour scaled to out_h x out_w.
void export_heatmap(const AttentionMap& map, int out_h, int out_w, const std::filesystem::path& path);

}  // namespace acq
