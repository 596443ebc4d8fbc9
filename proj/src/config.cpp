#include "acq/config.hpp"

#include <fstream>
#include <stdexcept>

namespace acq {

using nlohmann::json;

namespace {

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    if (!ok) throw std::invalid_argument(std::string("unknown key '") + k + "' in " + where);
  }
}

}  // namespace

json to_json(const LossWeights& w) {
  return {{"cacm_relax", w.cacm_relax},     {"penalty_relax", w.penalty_relax}, {"penalty_ce", w.penalty_ce},
          {"penalty_bns", w.penalty_bns},   {"penalty_cacm", w.penalty_cacm},   {"alpha", w.alpha},
          {"beta", w.beta},                 {"gamma", w.gamma},                 {"tau", w.tau},
          {"js_guard", w.js_guard}};
}

LossWeights loss_weights_from_json(const json& j, LossWeights w) {
  if (j.contains("profile")) w = loss_profile(j.at("profile"));
  reject_unknown(j,
                 {"profile", "cacm_relax", "penalty_relax", "penalty_ce", "penalty_bns", "penalty_cacm", "alpha",
                  "beta", "gamma", "tau", "js_guard"},
                 "weights");
  take(j, "cacm_relax", w.cacm_relax);
  take(j, "penalty_relax", w.penalty_relax);
  take(j, "penalty_ce", w.penalty_ce);
  take(j, "penalty_bns", w.penalty_bns);
  take(j, "penalty_cacm", w.penalty_cacm);
  take(j, "alpha", w.alpha);
  take(j, "beta", w.beta);
  take(j, "gamma", w.gamma);
  take(j, "tau", w.tau);
  take(j, "js_guard", w.js_guard);
  w.validate();
  return w;
}

json to_json(const TrainConfig& c) {
  const GeneratorConfig& g = c.generator;
  return {{"epochs", c.epochs},
          {"iters_per_epoch", c.iters_per_epoch},
          {"warmup_epochs", c.warmup_epochs},
          {"batch_size", c.batch_size},
          {"generator_lr", c.generator_lr},
          {"generator_beta1", c.generator_beta1},
          {"generator_beta2", c.generator_beta2},
          {"generator_clip_norm", c.generator_clip_norm},
          {"student_lr", c.student_lr},
          {"student_momentum", c.student_momentum},
          {"student_weight_decay", c.student_weight_decay},
          {"lr_decays", c.lr_decays},
          {"weights", to_json(c.weights)},
          {"switches", {{"cacm", c.switches.cacm}, {"adversarial", c.switches.adversarial},
                        {"penalty", c.switches.penalty}}},
          {"bits", format_bit_widths(c.bits)},
          {"quantize_first_last", c.quantize_first_last},
          {"generator", {{"z_dim", g.z_dim}, {"init_size", g.init_size}, {"stem_channels", g.stem_channels},
                         {"body_channels1", g.body_channels1}, {"body_channels2", g.body_channels2},
                         {"fusion", fusion_path_name(g.fusion)}, {"label_smoothing", g.label_smoothing},
                         {"max_pool_channels", g.max_pool_channels}, {"leaky_slope", g.leaky_slope}}},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"checkpoint_dir", c.checkpoint_dir}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw std::invalid_argument("train config must be a JSON object");
  if (j.contains("profile")) {
    const std::string p = j.at("profile");
    if (p == "desk") {
      c = TrainConfig::desk();
    } else if (p == "full") {
      c = TrainConfig::full_scale();
    } else {
      throw std::invalid_argument("unknown train profile '" + p + "' (expected desk or full)");
    }
  }
  reject_unknown(j,
                 {"profile", "epochs", "iters_per_epoch", "warmup_epochs", "batch_size", "generator_lr",
                  "generator_beta1", "generator_beta2", "generator_clip_norm", "student_lr", "student_momentum", "student_weight_decay",
                  "lr_decays", "weights", "switches", "bits", "quantize_first_last", "generator", "seed",
                  "checkpoint_every", "checkpoint_dir"},
                 "train config");
  take(j, "epochs", c.epochs);
  take(j, "iters_per_epoch", c.iters_per_epoch);
  take(j, "warmup_epochs", c.warmup_epochs);
  take(j, "batch_size", c.batch_size);
  take(j, "generator_lr", c.generator_lr);
  take(j, "generator_beta1", c.generator_beta1);
  take(j, "generator_beta2", c.generator_beta2);
  take(j, "generator_clip_norm", c.generator_clip_norm);
  take(j, "student_lr", c.student_lr);
  take(j, "student_momentum", c.student_momentum);
  take(j, "student_weight_decay", c.student_weight_decay);
  take(j, "lr_decays", c.lr_decays);
  if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"), c.weights);
  if (j.contains("switches")) {
    const json& s = j.at("switches");
    reject_unknown(s, {"cacm", "adversarial", "penalty"}, "switches");
    take(s, "cacm", c.switches.cacm);
    take(s, "adversarial", c.switches.adversarial);
    take(s, "penalty", c.switches.penalty);
  }
  if (j.contains("bits")) c.bits = parse_bit_widths(j.at("bits"));
  take(j, "quantize_first_last", c.quantize_first_last);
  if (j.contains("generator")) {
    const json& g = j.at("generator");
    reject_unknown(g,
                   {"z_dim", "init_size", "stem_channels", "body_channels1", "body_channels2", "fusion",
                    "label_smoothing", "max_pool_channels", "leaky_slope"},
                   "generator");
    take(g, "z_dim", c.generator.z_dim);
    take(g, "init_size", c.generator.init_size);
    take(g, "stem_channels", c.generator.stem_channels);
    take(g, "body_channels1", c.generator.body_channels1);
    take(g, "body_channels2", c.generator.body_channels2);
    if (g.contains("fusion")) c.generator.fusion = parse_fusion_path(g.at("fusion"));
    take(g, "label_smoothing", c.generator.label_smoothing);
    take(g, "max_pool_channels", c.generator.max_pool_channels);
    take(g, "leaky_slope", c.generator.leaky_slope);
  }
  take(j, "seed", c.seed);
  take(j, "checkpoint_every", c.checkpoint_every);
  take(j, "checkpoint_dir", c.checkpoint_dir);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return train_config_from_json(json::parse(in), base);
}

LossWeights loss_profile(const std::string& name) {
  if (name == "cifar10") return LossWeights::cifar10();
  if (name == "cifar100") return LossWeights::cifar100();
  if (name == "imagenet") return LossWeights::imagenet();
  throw std::invalid_argument("unknown loss profile '" + name + "' (expected cifar10, cifar100 or imagenet)");
}

void set_hyperparameter(TrainConfig& cfg, const std::string& name, double value) {
  LossWeights& w = cfg.weights;
  const float f = static_cast<float>(value);
  if (name == "gamma") w.gamma = f;
  else if (name == "alpha") w.alpha = f;
  else if (name == "beta") w.beta = f;
  else if (name == "tau") w.tau = f;
  else if (name == "penalty_ce" || name == "epsilon1") w.penalty_ce = f;
  else if (name == "penalty_bns" || name == "epsilon2") w.penalty_bns = f;
  else if (name == "penalty_cacm" || name == "epsilon3") w.penalty_cacm = f;
  else if (name == "cacm_relax") w.cacm_relax = f;
  else if (name == "penalty_relax") w.penalty_relax = f;
  else if (name == "generator_lr") cfg.generator_lr = value;
  else if (name == "student_lr") cfg.student_lr = value;
  else {
    throw std::invalid_argument("unknown sweep parameter '" + name +
                                "' (gamma, alpha, beta, tau, penalty_ce, penalty_bns, penalty_cacm, cacm_relax, "
                                "penalty_relax, generator_lr, student_lr)");
  }
  w.validate();
}

}  // namespace acq
