#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "acq/data.hpp"
#include "acq/generator.hpp"
#include "acq/nn.hpp"
#include "acq/rng.hpp"

namespace acq {

/// Pooled mean absolute deviation over every (layer, channel) mean and std entry.
double bns_error(const BatchStatsRecord& stats, const StoredStats& stored);
double bns_error(const StoredStats& a, const StoredStats& b);
StoredStats to_stored(const BatchStatsRecord& stats);

/// Top-1 accuracy over full batches (train mode needs batch_size >= 2).
double accuracy(const LayerGraph& graph, const Dataset& data, Mode mode, int batch_size = 100);

struct LabeledSamples {
  Tensor images;
  std::vector<int64_t> labels;
  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

/// Keeps (in order) up to max_count samples that the teacher classifies correctly in eval mode.
LabeledSamples select_eval_correct(const LayerGraph& teacher, const LabeledSamples& pool, int64_t max_count,
                                   int batch_size = 100);

/// Draws count generator samples in batches with y ~ U(0, C), p ~ U(0, hw); labels are y.
LabeledSamples synthesize(const GeneratorNet& generator, Rng& rng, int64_t count, int batch_size = 16,
                          std::vector<int64_t>* positions = nullptr);

struct ModeConsistencyReport {
  double acc_eval = 0.0;
  double acc_train = 0.0;
  double bns_err_eval = 0.0;
  double bns_err_train = 0.0;
  double attention_mae = 0.0;
  int64_t samples = 0;
  int batch_size = 16;

  nlohmann::json to_json() const;
};

/// Batched eval- and train-mode forwards over the samples; a trailing partial batch is dropped.
ModeConsistencyReport mode_consistency(const LayerGraph& teacher, const LabeledSamples& samples, int batch_size = 16);

struct ControllabilityReport {
  double hit_rate = 0.0;
  double control_rate = 0.0;
  int64_t samples = 0;
  int radius = 1;

  nlohmann::json to_json() const;
};

/// Fraction of samples whose teacher attention centre lies within Chebyshev `radius`
/// of the requested cell, against the same centres scored on shuffled positions.
ControllabilityReport attention_controllability(const GeneratorNet& generator, const LayerGraph& teacher,
                                                int64_t count, uint64_t seed, int batch_size = 16, int radius = 1);

}  // namespace acq
