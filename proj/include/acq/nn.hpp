#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "acq/quantizer.hpp"
#include "acq/tensor.hpp"

namespace acq {

enum class Mode { kEval, kTrain };

const char* mode_name(Mode mode);

/// Variance floor inside the BN square root.
inline constexpr float kBnEpsilon = 1e-5f;

enum class LayerKind { kConv, kLinear, kBatchNorm, kRelu, kAdd, kGlobalAvgPool };

const char* layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

struct Layer {
  LayerKind kind = LayerKind::kRelu;
  std::string name;
  // Indices of earlier layers feeding this one; -1 is the graph input.
  std::vector<int> inputs;
  // Trainable tensors: weight/bias (conv, linear) or gamma/beta (BN).
  std::map<std::string, Tensor> params;
  // BN stored statistics: running_mean, running_std.
  std::map<std::string, Tensor> buffers;
  int stride = 1;
  int padding = 0;
  std::optional<QuantizerState> weight_quant;
  std::optional<QuantizerState> act_quant;
};

/// Batch statistics observed at one BN layer.
struct BnStats {
  std::string layer;
  Tensor mean;  // [C], differentiable w.r.t. the batch
  Tensor std;   // [C], sqrt(biased var + eps)
};

struct BatchStatsRecord {
  std::vector<BnStats> layers;
};

/// Stored per-layer statistics (mu_l, sigma_l) of a network.
struct StoredStats {
  std::vector<std::string> names;
  std::vector<std::vector<float>> mean;
  std::vector<std::vector<float>> std;
};

struct ForwardResult {
  Tensor logits;
  Tensor backbone;
  BatchStatsRecord stats;
  // Inputs seen by each BN layer, filled only when requested.
  std::vector<Tensor> bn_inputs;
};

struct ForwardOptions {
  bool capture_bn_inputs = false;
};

/// Ordered layer DAG used as FP teacher and quantized student.
class LayerGraph {
 public:
  std::string spec;
  int num_classes = 0;
  int backbone_index = -1;
  Mode mode = Mode::kEval;
  std::vector<Layer> layers;

  ForwardResult forward(const Tensor& x, Mode mode, ForwardOptions opt = {}) const;
  ForwardResult forward(const Tensor& x) const { return forward(x, mode); }

  /// Eval-mode pass that feeds every open activation quantizer.
  ForwardResult calibrate(const Tensor& x);

  std::vector<Tensor> parameters() const;
  int64_t parameter_count() const;
  StoredStats stored_stats() const;
  /// SHA-256 over all stored BN statistics.
  std::string bn_digest() const;
  /// SHA-256 over parameters, buffers and quantizer bounds.
  std::string digest() const;
  /// Deep copy; new leaves keep requires_grad flags.
  LayerGraph clone() const;

  int bn_count() const;
  const Layer& layer(const std::string& name) const;
  Layer& layer(const std::string& name);

 private:
  ForwardResult run(const Tensor& x, Mode mode, ForwardOptions opt,
                    const std::function<void(size_t, const Tensor&)>& on_activation) const;
};

/// Two-mode batch normalization; statistics of x are always recorded into `stats`.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                  const Tensor& running_std, Mode mode, BnStats* stats = nullptr);

/// Train-style BN whose affine row is picked per sample from [classes, C] tables.
Tensor class_conditional_bn(const Tensor& x, const Tensor& gamma_table, const Tensor& beta_table,
                            const std::vector<int64_t>& labels);

/// Shipped architecture descriptors.
std::vector<std::string> known_specs();
LayerGraph build_target_net(const std::string& spec, int num_classes, uint64_t seed);

/// Deep copy with per-channel weight quantizers (frozen from the current
/// weights) and open per-layer activation quantizers on every conv/linear input.
/// With quantize_first_last off, the first conv and the last linear stay FP.
LayerGraph quantize_graph(const LayerGraph& fp, BitWidths bits, bool quantize_first_last = true);

/// Names of layers whose activation quantizer is still open.
std::vector<std::string> open_activation_sites(const LayerGraph& graph);

/// Freezes every open activation quantizer; fails naming the first unobserved site.
void freeze_activation_quantizers(LayerGraph& graph);

int64_t argmax_row(std::span<const float> row);
std::vector<int64_t> argmax_rows(const Tensor& logits);

}  // namespace acq
