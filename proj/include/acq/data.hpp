#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "acq/nn.hpp"
#include "acq/tensor.hpp"

namespace acq {

/// Labeled image set held as one contiguous N x C x H x W float buffer.
struct Dataset {
  int64_t channels = 3;
  int64_t height = 32;
  int64_t width = 32;
  int num_classes = 10;
  std::vector<float> pixels;
  std::vector<int64_t> labels;
  // Per-sample (row, col) centroid of the drawn shape; empty for real data.
  std::vector<std::array<float, 2>> centroids;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  int64_t sample_numel() const { return channels * height * width; }
  Tensor batch(const std::vector<int64_t>& indices) const;
  Tensor images() const;
  std::vector<int64_t> batch_labels(const std::vector<int64_t>& indices) const;
  std::vector<int64_t> class_histogram() const;
};

inline constexpr int kShapeKinds = 10;
const char* shape_name(int kind);

struct ShapesConfig {
  int num_classes = 10;
  int64_t train_size = 5000;
  int64_t test_size = 1000;
  int image_size = 32;
  float min_radius = 5.0f;
  float max_radius = 8.0f;
  float noise_std = 0.05f;
  uint64_t seed = 0;
};

struct ShapesDataset {
  Dataset train;
  Dataset test;
};

/// Procedural one-shape-per-image dataset, values in [-1, 1], labels i % C.
ShapesDataset generate_shapes(const ShapesConfig& config);

/// Boolean mask of one shape kind with the given centre and radius.
std::vector<uint8_t> shape_mask(int kind, int size, float cy, float cx, float radius);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Cifar10Normalization {
  std::array<float, 3> mean{0.5f, 0.5f, 0.5f};
  std::array<float, 3> std{0.5f, 0.5f, 0.5f};
};

inline constexpr int64_t kCifarRecordBytes = 3073;

/// Reads one binary batch file of 3073-byte records: (v / 255 - mean) / std per channel.
Dataset read_cifar10_file(const std::filesystem::path& path, const Cifar10Normalization& norm = {});
/// Reads `data_batch_1..5.bin` (train) or `test_batch.bin` (test) from a directory.
Dataset read_cifar10(const std::filesystem::path& dir, const std::string& split,
                     const Cifar10Normalization& norm = {});
/// Writes raw records (label byte + 3072 CHW pixel bytes).
void write_cifar10_file(const std::filesystem::path& path, const std::vector<uint8_t>& labels,
                        const std::vector<uint8_t>& pixels);

struct PretrainConfig {
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  float bn_momentum = 0.1f;
  uint64_t seed = 0;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

/// Trains a fresh network with train-mode BN and EMA running statistics; returns it in eval mode.
LayerGraph pretrain_teacher(const Dataset& train, const std::string& spec, const PretrainConfig& config,
                            const std::function<void(const PretrainEpoch&)>& on_epoch = nullptr);

/// running <- (1 - momentum) * running + momentum * batch for every BN layer.
void update_running_stats(LayerGraph& graph, const BatchStatsRecord& stats, float momentum);

/// Writes one sample as a P3 image (values mapped from [-1, 1] to [0, 255]).
void export_sample_ppm(const Tensor& images, int64_t index, const std::filesystem::path& path);

}  // namespace acq
