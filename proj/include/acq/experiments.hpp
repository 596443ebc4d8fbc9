#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acq/data.hpp"
#include "acq/metrics.hpp"
#include "acq/training.hpp"

namespace acq {

/// The five component rows of the ablation table, in order:
/// none, cacm, cacm+ad, penalty, cacm+ad+penalty.
std::vector<AblationSwitches> ablation_rows();

/// Parses a comma list such as "cacm,ad,penalty" (or "none") into switches.
AblationSwitches parse_components(const std::string& text);

/// Mode-consistency audit of generator samples: synthesizes a pool, keeps the
/// teacher's eval-correct samples (up to `count`) and runs both BN modes.
ModeConsistencyReport audit_generator(const GeneratorNet& generator, const LayerGraph& teacher, int64_t count,
                                      uint64_t seed, int batch_size = 16);

struct ExperimentOptions {
  std::vector<uint64_t> seeds{1, 2, 3};
  // Generator-sample audit per run; 0 disables it.
  int64_t audit_samples = 960;
  std::function<void(const std::string&)> progress;
};

/// Runs run_acq per (row, seed); emits mean and sample std of final student accuracy per row.
nlohmann::json run_ablation(const TrainConfig& base, const LayerGraph& teacher, const Dataset& test,
                            const std::vector<AblationSwitches>& rows, const ExperimentOptions& options);

/// One row per value of a named hyperparameter.
nlohmann::json run_sweep(const TrainConfig& base, const LayerGraph& teacher, const Dataset& test,
                         const std::string& param, const std::vector<double>& values,
                         const ExperimentOptions& options);

double mean_of(const std::vector<double>& v);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double stddev_of(const std::vector<double>& v);

}  // namespace acq
