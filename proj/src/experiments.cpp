#include "acq/experiments.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "acq/config.hpp"

namespace acq {

using nlohmann::json;

std::vector<AblationSwitches> ablation_rows() {
  return {{false, false, false}, {true, false, false}, {true, true, false}, {false, false, true}, {true, true, true}};
}

AblationSwitches parse_components(const std::string& text) {
  AblationSwitches s{false, false, false};
  if (text.empty() || text == "none") return s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "cacm") {
      s.cacm = true;
    } else if (item == "ad" || item == "adversarial") {
      s.adversarial = true;
    } else if (item == "penalty") {
      s.penalty = true;
    } else {
      throw std::invalid_argument("unknown component '" + item + "' (expected cacm, ad, penalty or none)");
    }
  }
  return s;
}

ModeConsistencyReport audit_generator(const GeneratorNet& generator, const LayerGraph& teacher, int64_t count,
                                      uint64_t seed, int batch_size) {
  Rng rng(seed);
  LabeledSamples kept;
  // Draw pools until enough eval-correct samples exist (bounded effort).
  std::vector<Tensor> images;
  std::vector<int64_t> labels;
  for (int round = 0; round < 8 && static_cast<int64_t>(labels.size()) < count; ++round) {
    LabeledSamples pool = synthesize(generator, rng, count, batch_size);
    LabeledSamples sel = select_eval_correct(teacher, pool, count - static_cast<int64_t>(labels.size()));
    if (sel.size() == 0) continue;
    images.push_back(sel.images);
    labels.insert(labels.end(), sel.labels.begin(), sel.labels.end());
  }
  if (static_cast<int64_t>(labels.size()) < batch_size) {
    throw std::runtime_error("audit: only " + std::to_string(labels.size()) +
                             " generator samples are classified as their condition label");
  }
  kept.images = concat(images, 0);
  kept.labels = labels;
  return mode_consistency(teacher, kept, batch_size);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

namespace {

json run_row(const TrainConfig& cfg_base, const LayerGraph& teacher, const Dataset& test,
             const ExperimentOptions& opt, json row, const std::string& tag) {
  std::vector<double> acc, untrained, bns_eval, bns_train, acc_eval, acc_train;
  json runs = json::array();
  for (uint64_t seed : opt.seeds) {
    TrainConfig cfg = cfg_base;
    cfg.seed = seed;
    if (opt.progress) opt.progress(tag + " seed " + std::to_string(seed));
    RunResult r = run_acq(cfg, teacher, &test);
    json run = {{"seed", seed},
                {"student_accuracy", r.report["student_accuracy"]},
                {"untrained_student_accuracy", r.report["untrained_student_accuracy"]},
                {"final_student_loss", r.report["final_student_loss"]}};
    acc.push_back(r.report["student_accuracy"]);
    untrained.push_back(r.report["untrained_student_accuracy"]);
    if (opt.audit_samples > 0) {
      ModeConsistencyReport a = audit_generator(r.generator, teacher, opt.audit_samples, seed + 7919);
      run["audit"] = a.to_json();
      bns_eval.push_back(a.bns_err_eval);
      bns_train.push_back(a.bns_err_train);
      acc_eval.push_back(a.acc_eval);
      acc_train.push_back(a.acc_train);
    }
    runs.push_back(run);
  }
  row["runs"] = runs;
  row["accuracies"] = acc;
  row["mean"] = mean_of(acc);
  row["std"] = stddev_of(acc);
  row["untrained_mean"] = mean_of(untrained);
  if (opt.audit_samples > 0) {
    row["audit_mean"] = {{"bns_err_eval", mean_of(bns_eval)},
                         {"bns_err_train", mean_of(bns_train)},
                         {"acc_eval", mean_of(acc_eval)},
                         {"acc_train", mean_of(acc_train)}};
  }
  return row;
}

}  // namespace

json run_ablation(const TrainConfig& base, const LayerGraph& teacher, const Dataset& test,
                  const std::vector<AblationSwitches>& rows, const ExperimentOptions& options) {
  json out = {{"experiment", "ablation"}, {"seeds", options.seeds}, {"config", to_json(base)}};
  out["teacher_accuracy"] = accuracy(teacher, test, Mode::kEval);
  json table = json::array();
  for (const auto& sw : rows) {
    TrainConfig cfg = base;
    cfg.switches = sw;
    json row = {{"cacm", sw.cacm}, {"adversarial", sw.adversarial}, {"penalty", sw.penalty}, {"label", sw.label()}};
    table.push_back(run_row(cfg, teacher, test, options, row, "ablation " + sw.label()));
  }
  out["rows"] = table;
  return out;
}

json run_sweep(const TrainConfig& base, const LayerGraph& teacher, const Dataset& test, const std::string& param,
               const std::vector<double>& values, const ExperimentOptions& options) {
  json out = {{"experiment", "sweep"}, {"param", param}, {"seeds", options.seeds}, {"config", to_json(base)}};
  out["teacher_accuracy"] = accuracy(teacher, test, Mode::kEval);
  json table = json::array();
  for (double v : values) {
    TrainConfig cfg = base;
    set_hyperparameter(cfg, param, v);
    table.push_back(run_row(cfg, teacher, test, options, {{"param", param}, {"value", v}},
                            "sweep " + param + "=" + std::to_string(v)));
  }
  out["rows"] = table;
  return out;
}

}  // namespace acq
