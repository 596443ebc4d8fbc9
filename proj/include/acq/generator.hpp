#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "acq/tensor.hpp"

namespace acq {

enum class FusionPath { kLowDim, kHighDim };

const char* fusion_path_name(FusionPath path);
FusionPath parse_fusion_path(const std::string& name);

struct GeneratorConfig {
  int num_classes = 10;
  int z_dim = 100;
  // Position grid; equals the teacher's attention grid.
  int grid = 8;
  // Spatial size after the linear stem; the output is 4x larger.
  int init_size = 8;
  int stem_channels = 32;
  int body_channels1 = 16;
  int body_channels2 = 8;
  int out_channels = 3;
  FusionPath fusion = FusionPath::kLowDim;
  float label_smoothing = 0.1f;
  // Channels routed to the max-pool branch of the high-dim fusion; -1 means half.
  int max_pool_channels = -1;
  float leaky_slope = 0.2f;

  int output_size() const { return init_size * 4; }
  int positions() const { return grid * grid; }
  void validate() const;
};

/// Conditional generator G(z | y, p).
class GeneratorNet {
 public:
  GeneratorNet() = default;
  GeneratorNet(const GeneratorConfig& config, uint64_t seed);

  const GeneratorConfig& config() const { return config_; }

  /// (Emb_class(y) + z) * Emb_position(p), shape N x z_dim.
  Tensor fuse_lowdim(const Tensor& z, const std::vector<int64_t>& labels,
                     const std::vector<int64_t>& positions) const;
  /// Up(conv([maxpool(f_a), avgpool(f_b), P])) + f for stem features f.
  Tensor fuse_highdim(const Tensor& f, const std::vector<int64_t>& positions) const;
  /// Stem features f (N x stem_channels x init x init) before any position fusion.
  Tensor stem(const Tensor& i) const;

  /// Synthetic batch N x 3 x S x S in [-1, 1].
  Tensor generate(const Tensor& z, const std::vector<int64_t>& labels, const std::vector<int64_t>& positions) const;

  std::vector<Tensor> parameters() const;
  const std::map<std::string, Tensor>& named_parameters() const { return params_; }
  std::map<std::string, Tensor>& named_parameters() { return params_; }
  int64_t parameter_count() const;
  std::string digest() const;
  GeneratorNet clone() const;

 private:
  void check_conditions(int64_t n, const std::vector<int64_t>& labels, const std::vector<int64_t>& positions) const;
  const Tensor& param(const std::string& name) const;

  GeneratorConfig config_;
  std::map<std::string, Tensor> params_;
};

/// Label-smoothed one-hot grids, N x 1 x h x w: 1 - eps + eps/hw at p, eps/hw elsewhere.
Tensor position_grid(const std::vector<int64_t>& positions, int h, int w, float smoothing);

}  // namespace acq
