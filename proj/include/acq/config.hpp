#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "acq/training.hpp"

namespace acq {

nlohmann::json to_json(const LossWeights& w);
nlohmann::json to_json(const TrainConfig& cfg);

/// Overlays the keys present in j onto base; unknown keys are rejected.
LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = TrainConfig::desk());
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = TrainConfig::desk());

/// Named loss-weight profiles: cifar10, cifar100, imagenet.
LossWeights loss_profile(const std::string& name);

/// Sets one numeric hyperparameter by name (loss weights, learning rates, ...).
void set_hyperparameter(TrainConfig& cfg, const std::string& name, double value);

}  // namespace acq
