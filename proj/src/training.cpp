#include "acq/training.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "acq/archive.hpp"
#include "acq/attention.hpp"
#include "acq/metrics.hpp"

namespace acq {

std::string AblationSwitches::label() const {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += "+";
    s += name;
  };
  add(cacm, "cacm");
  add(adversarial, "ad");
  add(penalty, "penalty");
  return s.empty() ? "none" : s;
}

TrainConfig TrainConfig::full_scale() { return TrainConfig{}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.epochs = 50;
  c.iters_per_epoch = 50;
  c.warmup_epochs = 2;
  c.batch_size = 16;
  c.generator_clip_norm = 1.0;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1 || iters_per_epoch < 1) throw std::invalid_argument("train config: epochs and iters must be >= 1");
  if (warmup_epochs < 1 || warmup_epochs >= epochs) {
    throw std::invalid_argument("train config: warmup_epochs must lie in [1, epochs)");
  }
  if (batch_size < 2) throw std::invalid_argument("train config: batch_size must be >= 2");
  if (!(generator_lr >= 0.0 && student_lr >= 0.0)) throw std::invalid_argument("train config: negative learning rate");
  if (!(generator_clip_norm >= 0.0)) throw std::invalid_argument("train config: generator_clip_norm must be >= 0");
  if (lr_decays < 0) throw std::invalid_argument("train config: lr_decays must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("train config: checkpoint_every must be >= 0");
  weights.validate();
}

RunState RunState::init(const LayerGraph& teacher, const TrainConfig& cfg) {
  cfg.validate();
  RunState s;
  s.teacher = teacher.clone();
  s.teacher.mode = Mode::kEval;
  for (auto& p : s.teacher.parameters()) p.set_requires_grad(false);
  s.teacher_digest = s.teacher.digest();
  s.teacher_stats = s.teacher.stored_stats();
  if (s.teacher.backbone_index < 0) throw std::invalid_argument("run: teacher has no backbone tap");

  GeneratorConfig g = cfg.generator;
  g.num_classes = s.teacher.num_classes;
  const Tensor probe = Tensor::zeros({2, g.out_channels, g.output_size(), g.output_size()});
  const Tensor backbone = s.teacher.forward(probe, Mode::kEval).backbone;
  if (backbone.dim(2) != backbone.dim(3)) throw std::invalid_argument("run: backbone grid must be square");
  g.grid = static_cast<int>(backbone.dim(2));
  s.generator = GeneratorNet(g, cfg.seed ^ 0x5851f42d4c957f2dULL);

  s.student = quantize_graph(s.teacher, cfg.bits, cfg.quantize_first_last);
  for (auto& p : s.student.parameters()) p.set_requires_grad(true);
  s.generator_opt =
      std::make_unique<Adam>(s.generator.parameters(), cfg.generator_lr, cfg.generator_beta1, cfg.generator_beta2);
  s.student_opt = std::make_unique<Sgd>(s.student.parameters(), cfg.student_lr, cfg.student_momentum,
                                        cfg.student_weight_decay);
  s.rng = Rng(cfg.seed);
  return s;
}

void RunState::apply_schedule(const TrainConfig& cfg) {
  const int e = std::min(epoch(cfg), cfg.epochs - 1);
  generator_opt->set_lr(scheduled_lr(cfg.generator_lr, e, cfg.epochs, cfg.lr_decays));
  student_opt->set_lr(scheduled_lr(cfg.student_lr, e, cfg.epochs, cfg.lr_decays));
}

void RunState::check_teacher() const {
  if (teacher.digest() != teacher_digest) throw std::logic_error("teacher parameters or BN statistics changed");
}

namespace {

template <class F>
Tensor named_term(const char* term, F&& compute) {
  try {
    return compute();
  } catch (const NumericError& e) {
    throw NumericError(std::string("generator loss term '") + term + "': " + e.what());
  }
}

Tensor rows(const Tensor& x, int64_t start, int64_t count) {
  std::vector<int64_t> idx(count);
  for (int64_t i = 0; i < count; ++i) idx[i] = start + i;
  return index_select(x, 0, idx);
}

struct Conditions {
  std::vector<int64_t> labels, positions;
};

Conditions draw_conditions(RunState& s, int64_t n) {
  Conditions c{std::vector<int64_t>(n), std::vector<int64_t>(n)};
  const auto& g = s.generator.config();
  for (auto& y : c.labels) y = s.rng.uniform_int(0, g.num_classes);
  for (auto& p : c.positions) p = s.rng.uniform_int(0, g.positions());
  return c;
}

}  // namespace

GeneratorLossParts generator_loss_parts(const LayerGraph& teacher, const StoredStats& stored, const Tensor& z1,
                                        const Tensor& z2, const Tensor& x1, const Tensor& x2,
                                        const std::vector<int64_t>& labels, const std::vector<int64_t>& positions,
                                        const TrainConfig& cfg) {
  const LossWeights& w = cfg.weights;
  const AblationSwitches& on = cfg.switches;
  const int64_t n = x1.dim(0);
  std::vector<int64_t> labels2 = labels, positions2 = positions;
  labels2.insert(labels2.end(), labels.begin(), labels.end());
  positions2.insert(positions2.end(), positions.begin(), positions.end());

  const Tensor x = concat({x1, x2}, 0);
  const ForwardResult fe = teacher.forward(x, Mode::kEval);
  const bool need_train = on.penalty && (w.penalty_ce > 0.0f || w.penalty_bns > 0.0f || w.penalty_cacm > 0.0f);
  ForwardResult ft;
  if (need_train) ft = teacher.forward(x, Mode::kTrain);

  GeneratorLossParts parts;
  parts.ce_eval = named_term("ce_eval", [&] { return ce_loss(fe.logits, labels2); });
  if (w.alpha > 0.0f) parts.bns_eval = named_term("bns_eval", [&] { return bns_loss(fe.stats, stored); });
  Tensor maps_eval;
  if ((on.cacm && w.beta > 0.0f) || (need_train && w.penalty_cacm > 0.0f && w.beta > 0.0f)) {
    maps_eval = named_term("attention_eval", [&] { return attention_tensor(fe.backbone); });
  }
  if (on.cacm && w.beta > 0.0f) {
    parts.cacm = named_term("cacm", [&] { return cacm_loss(maps_eval, positions2, w.cacm_relax); });
  }
  if (on.adversarial && w.gamma > 0.0f) {
    parts.adversarial = named_term("adversarial", [&] {
      return adversarial_loss(z1, z2, rows(fe.logits, 0, n), rows(fe.logits, n, n), w.js_guard);
    });
  }
  if (need_train) {
    if (w.penalty_ce > 0.0f) {
      parts.ce_train_penalty = named_term("ce_train_penalty", [&] { return ce_loss(ft.logits, labels2); });
    }
    if (w.penalty_bns > 0.0f && w.alpha > 0.0f) {
      parts.bns_train_penalty = named_term("bns_train_penalty", [&] { return bns_loss(ft.stats, stored); });
    }
    if (w.penalty_cacm > 0.0f && w.beta > 0.0f) {
      parts.cacm_penalty = named_term("cacm_penalty", [&] {
        return cacm_penalty(attention_tensor(ft.backbone), maps_eval, w.penalty_relax);
      });
    }
  }
  return parts;
}

GeneratorStep train_step_generator(RunState& s, const TrainConfig& cfg) {
  s.apply_schedule(cfg);
  const int64_t n = cfg.batch_size;
  const Conditions c = draw_conditions(s, n);
  const int64_t zd = s.generator.config().z_dim;
  const Tensor z1 = s.rng.normal_tensor({n, zd});
  const Tensor z2 = s.rng.normal_tensor({n, zd});
  const Tensor x1 = s.generator.generate(z1, c.labels, c.positions);
  const Tensor x2 = s.generator.generate(z2, c.labels, c.positions);
  const GeneratorLossParts parts =
      generator_loss_parts(s.teacher, s.teacher_stats, z1, z2, x1, x2, c.labels, c.positions, cfg);
  GeneratorObjective obj = generator_objective(parts, cfg.weights);
  if (!std::isfinite(obj.breakdown.total)) throw NumericError("generator loss term 'total' is not finite");
  s.generator_opt->zero_grad();
  obj.total.backward();
  if (cfg.generator_clip_norm > 0.0) s.generator_opt->clip_grad_norm(cfg.generator_clip_norm);
  s.generator_opt->step();
  s.generator_opt->zero_grad();
  return {obj.breakdown, concat({x1, x2}, 0).detach()};
}

double train_step_student(RunState& s, const TrainConfig& cfg) {
  const auto open = open_activation_sites(s.student);
  if (!open.empty()) throw std::logic_error("student step before warm-up froze '" + open.front() + "'");
  s.apply_schedule(cfg);
  const int64_t n = cfg.batch_size;
  const Conditions c = draw_conditions(s, n);
  const Tensor z = s.rng.normal_tensor({n, s.generator.config().z_dim});
  const Tensor x = s.generator.generate(z, c.labels, c.positions).detach();
  const Tensor teacher_logits = s.teacher.forward(x, Mode::kEval).logits;
  const Tensor loss = student_objective(s.student.forward(x, Mode::kEval).logits, teacher_logits, cfg.weights.tau);
  const double value = loss.item();
  if (!std::isfinite(value)) throw NumericError("student loss is not finite");
  s.student_opt->zero_grad();
  loss.backward();
  s.student_opt->step();
  s.student_opt->zero_grad();
  ++s.student_steps;
  return value;
}

namespace {

nlohmann::json breakdown_json(const GeneratorLossBreakdown& b) {
  return {{"ce_eval", b.ce_eval},
          {"ce_train_penalty", b.ce_train_penalty},
          {"bns_eval", b.bns_eval},
          {"bns_train_penalty", b.bns_train_penalty},
          {"cacm", b.cacm},
          {"cacm_penalty", b.cacm_penalty},
          {"adversarial", b.adversarial},
          {"total", b.total}};
}

nlohmann::json iteration_record(const RunState& s, const TrainConfig& cfg, const char* phase,
                                const GeneratorLossBreakdown& b, const double* student_loss) {
  nlohmann::json j = breakdown_json(b);
  j["t"] = s.t;
  j["epoch"] = s.epoch(cfg);
  j["phase"] = phase;
  j["lr_generator"] = s.generator_opt->lr();
  j["lr_student"] = s.student_opt->lr();
  j["student_loss"] = student_loss ? nlohmann::json(*student_loss) : nlohmann::json(nullptr);
  return j;
}

void end_of_iteration(RunState& s, const TrainConfig& cfg) {
  ++s.t;
  if (s.t % cfg.iters_per_epoch == 0) s.check_teacher();
}

}  // namespace

void warmup_calibrate(RunState& s, const TrainConfig& cfg, const std::function<void(const nlohmann::json&)>& on_iteration) {
  const int64_t start_steps = s.student_steps;
  while (s.t < cfg.warmup_iterations()) {
    GeneratorStep g = train_step_generator(s, cfg);
    s.student.calibrate(g.samples);
    if (on_iteration) on_iteration(iteration_record(s, cfg, "warmup", g.breakdown, nullptr));
    end_of_iteration(s, cfg);
  }
  if (s.student_steps != start_steps) throw std::logic_error("student was updated during warm-up");
  freeze_activation_quantizers(s.student);
}

std::function<void(const nlohmann::json&)> jsonl_writer(std::ostream& out) {
  return [&out](const nlohmann::json& j) { out << j.dump() << '\n'; };
}

RunResult run_acq(const TrainConfig& cfg, const LayerGraph& teacher, const Dataset* test,
                  const std::function<void(const nlohmann::json&)>& on_iteration) {
  RunState s = RunState::init(teacher, cfg);
  nlohmann::json report;
  report["switches"] = {{"cacm", cfg.switches.cacm},
                        {"adversarial", cfg.switches.adversarial},
                        {"penalty", cfg.switches.penalty},
                        {"label", cfg.switches.label()}};
  report["bits"] = format_bit_widths(cfg.bits);
  report["seed"] = cfg.seed;
  report["iterations"] = cfg.total_iterations();
  report["warmup_iterations"] = cfg.warmup_iterations();
  report["teacher_digest"] = s.teacher_digest;

  struct EpochAcc {
    GeneratorLossBreakdown sum;
    double student = 0.0;
    int gen = 0, stud = 0;
  };
  std::vector<EpochAcc> epochs(cfg.epochs);
  auto accumulate = [&](const GeneratorLossBreakdown& b, const double* student_loss) {
    EpochAcc& e = epochs[s.epoch(cfg)];
    e.sum.ce_eval += b.ce_eval;
    e.sum.ce_train_penalty += b.ce_train_penalty;
    e.sum.bns_eval += b.bns_eval;
    e.sum.bns_train_penalty += b.bns_train_penalty;
    e.sum.cacm += b.cacm;
    e.sum.cacm_penalty += b.cacm_penalty;
    e.sum.adversarial += b.adversarial;
    e.sum.total += b.total;
    ++e.gen;
    if (student_loss) {
      e.student += *student_loss;
      ++e.stud;
    }
  };

  warmup_calibrate(s, cfg, [&](const nlohmann::json& j) {
    GeneratorLossBreakdown b;
    b.ce_eval = j["ce_eval"];
    b.ce_train_penalty = j["ce_train_penalty"];
    b.bns_eval = j["bns_eval"];
    b.bns_train_penalty = j["bns_train_penalty"];
    b.cacm = j["cacm"];
    b.cacm_penalty = j["cacm_penalty"];
    b.adversarial = j["adversarial"];
    b.total = j["total"];
    accumulate(b, nullptr);
    if (on_iteration) on_iteration(j);
  });
  if (test) {
    report["teacher_accuracy"] = accuracy(s.teacher, *test, Mode::kEval);
    report["untrained_student_accuracy"] = accuracy(s.student, *test, Mode::kEval);
  }

  GeneratorLossBreakdown last;
  double last_student = 0.0;
  while (s.t < cfg.total_iterations()) {
    GeneratorStep g = train_step_generator(s, cfg);
    const double sl = train_step_student(s, cfg);
    accumulate(g.breakdown, &sl);
    if (on_iteration) on_iteration(iteration_record(s, cfg, "train", g.breakdown, &sl));
    last = g.breakdown;
    last_student = sl;
    end_of_iteration(s, cfg);
    if (cfg.checkpoint_every > 0 && s.t % cfg.iters_per_epoch == 0 &&
        (s.t / cfg.iters_per_epoch) % cfg.checkpoint_every == 0 && !cfg.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d", static_cast<int>(s.t / cfg.iters_per_epoch));
      const std::filesystem::path dir = std::filesystem::path(cfg.checkpoint_dir) / name;
      save_generator(s.generator, dir / "generator");
      save_model(s.student, dir / "student");
    }
  }
  s.check_teacher();

  nlohmann::json per_epoch = nlohmann::json::array();
  for (int e = 0; e < cfg.epochs; ++e) {
    const EpochAcc& a = epochs[e];
    if (a.gen == 0) continue;
    GeneratorLossBreakdown m = a.sum;
    for (double* v : {&m.ce_eval, &m.ce_train_penalty, &m.bns_eval, &m.bns_train_penalty, &m.cacm, &m.cacm_penalty,
                      &m.adversarial, &m.total}) {
      *v /= a.gen;
    }
    nlohmann::json j = breakdown_json(m);
    j["epoch"] = e;
    j["student_loss"] = a.stud ? nlohmann::json(a.student / a.stud) : nlohmann::json(nullptr);
    per_epoch.push_back(j);
  }
  report["epochs"] = per_epoch;
  report["final_generator_loss"] = breakdown_json(last);
  report["final_student_loss"] = last_student;
  report["student_steps"] = s.student_steps;
  if (test) report["student_accuracy"] = accuracy(s.student, *test, Mode::kEval);
  report["generator_digest"] = s.generator.digest();
  report["student_digest"] = s.student.digest();
  report["teacher_digest_end"] = s.teacher.digest();
  return {std::move(s.generator), std::move(s.student), std::move(report)};
}

}  // namespace acq
