#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acq/data.hpp"
#include "acq/generator.hpp"
#include "acq/losses.hpp"
#include "acq/nn.hpp"
#include "acq/optim.hpp"
#include "acq/quantizer.hpp"
#include "acq/rng.hpp"

namespace acq {

/// Component switches for ablation runs.
struct AblationSwitches {
  bool cacm = true;
  bool adversarial = true;
  bool penalty = true;

  std::string label() const;
};

struct TrainConfig {
  int epochs = 400;
  int iters_per_epoch = 200;
  int warmup_epochs = 4;
  int batch_size = 16;
  double generator_lr = 1e-3;
  double generator_beta1 = 0.5;
  double generator_beta2 = 0.999;
  // Joint L2 bound on generator gradients before each update; 0 disables.
  double generator_clip_norm = 0.0;
  double student_lr = 1e-4;
  double student_momentum = 0.9;
  double student_weight_decay = 0.0;
  // Tenfold learning-rate drops spread evenly over the run (one per 100 of 400 epochs).
  int lr_decays = 4;
  LossWeights weights;
  AblationSwitches switches;
  BitWidths bits{4, 4};
  bool quantize_first_last = true;
  GeneratorConfig generator;
  uint64_t seed = 0;
  int checkpoint_every = 0;
  std::string checkpoint_dir;

  /// Full-length schedule with CIFAR-10 loss weights.
  static TrainConfig full_scale();
  /// 50 x 50 iterations, batch 16, two warm-up epochs.
  static TrainConfig desk();
  void validate() const;
  int64_t total_iterations() const { return static_cast<int64_t>(epochs) * iters_per_epoch; }
  int64_t warmup_iterations() const { return static_cast<int64_t>(warmup_epochs) * iters_per_epoch; }
};

/// Mutable state of one ACQ run.
struct RunState {
  LayerGraph teacher;
  std::string teacher_digest;
  StoredStats teacher_stats;
  GeneratorNet generator;
  LayerGraph student;
  std::unique_ptr<Adam> generator_opt;
  std::unique_ptr<Sgd> student_opt;
  Rng rng{0};
  int64_t t = 0;
  int student_steps = 0;

  /// Copies the teacher (gradients off), builds the generator and the quantized student.
  static RunState init(const LayerGraph& teacher, const TrainConfig& cfg);
  int epoch(const TrainConfig& cfg) const { return static_cast<int>(t / cfg.iters_per_epoch); }
  void apply_schedule(const TrainConfig& cfg);
  /// Throws if the teacher changed since init.
  void check_teacher() const;
};

struct GeneratorStep {
  GeneratorLossBreakdown breakdown;
  // concat(x1, x2) without history.
  Tensor samples;
};

/// One generator update on a paired batch sharing per-sample (y, p).
GeneratorStep train_step_generator(RunState& state, const TrainConfig& cfg);

/// Generator loss parts for a fixed paired batch (no optimizer step).
GeneratorLossParts generator_loss_parts(const LayerGraph& teacher, const StoredStats& stored, const Tensor& z1,
                                        const Tensor& z2, const Tensor& x1, const Tensor& x2,
                                        const std::vector<int64_t>& labels, const std::vector<int64_t>& positions,
                                        const TrainConfig& cfg);

/// Runs the warm-up iterations (generator steps plus activation observation) and freezes the student.
void warmup_calibrate(RunState& state, const TrainConfig& cfg,
                      const std::function<void(const nlohmann::json&)>& on_iteration = nullptr);

/// One student update on a fresh synthetic batch; returns the loss before the step.
double train_step_student(RunState& state, const TrainConfig& cfg);

struct RunResult {
  GeneratorNet generator;
  LayerGraph student;
  nlohmann::json report;
};

/// Warm-up then alternating generator/student steps. With a test set,
/// the report carries teacher, calibrated-but-untrained student and final student accuracy.
RunResult run_acq(const TrainConfig& cfg, const LayerGraph& teacher, const Dataset* test = nullptr,
                  const std::function<void(const nlohmann::json&)>& on_iteration = nullptr);

/// Writes each iteration record as one compact JSON line.
std::function<void(const nlohmann::json&)> jsonl_writer(std::ostream& out);

}  // namespace acq
