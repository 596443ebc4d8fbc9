#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "acq/config.hpp"
#include "acq/experiments.hpp"
#include "acq/optim.hpp"
#include "acq/training.hpp"

using namespace acq;

namespace {

TrainConfig tiny_config(uint64_t seed = 0) {
  TrainConfig c = TrainConfig::desk();
  c.epochs = 3;
  c.iters_per_epoch = 2;
  c.warmup_epochs = 1;
  c.batch_size = 4;
  c.seed = seed;
  return c;
}

const LayerGraph& teacher() {
  static const LayerGraph t = build_target_net("tiny-plain", 10, 42);
  return t;
}

std::vector<std::vector<float>> snapshot(const std::vector<Tensor>& ps) {
  std::vector<std::vector<float>> out;
  for (const auto& p : ps) out.push_back(p.to_vector());
  return out;
}

}  // namespace

TEST(ExampleTraining, GeneratorStepMovesGeneratorOnly) {
  TrainConfig cfg = tiny_config();
  RunState s = RunState::init(teacher(), cfg);
  const std::string gen_before = s.generator.digest();
  const std::string teacher_before = s.teacher.digest();
  train_step_generator(s, cfg);
  EXPECT_NE(s.generator.digest(), gen_before);
  EXPECT_EQ(s.teacher.digest(), teacher_before);
  EXPECT_EQ(teacher().digest(), teacher_before);
}

TEST(ExampleTraining, OnlyCrossEntropyWeighted) {
  TrainConfig cfg = tiny_config();
  cfg.weights.alpha = cfg.weights.beta = cfg.weights.gamma = 0.0f;
  cfg.weights.penalty_ce = cfg.weights.penalty_bns = cfg.weights.penalty_cacm = 0.0f;
  RunState s = RunState::init(teacher(), cfg);
  Rng rng(3);
  const std::vector<int64_t> y{0, 1, 2, 3}, p{0, 9, 18, 63};
  Tensor z1 = rng.normal_tensor({4, 100}), z2 = rng.normal_tensor({4, 100});
  Tensor x1 = s.generator.generate(z1, y, p), x2 = s.generator.generate(z2, y, p);
  GeneratorLossParts parts = generator_loss_parts(s.teacher, s.teacher_stats, z1, z2, x1, x2, y, p, cfg);
  GeneratorObjective o = generator_objective(parts, cfg.weights);
  std::vector<int64_t> y2 = y;
  y2.insert(y2.end(), y.begin(), y.end());
  const float ce = ce_loss(s.teacher.forward(concat({x1, x2}, 0), Mode::kEval).logits, y2).item();
  EXPECT_NEAR(o.total.item(), ce, 1e-6);
}

TEST(ExampleTraining, BreakdownRecombinesEveryStep) {
  TrainConfig cfg = tiny_config(1);
  RunState s = RunState::init(teacher(), cfg);
  for (int i = 0; i < 4; ++i) {
    const GeneratorStep g = train_step_generator(s, cfg);
    EXPECT_NEAR(g.breakdown.recombine(cfg.weights), g.breakdown.total, 1e-6 * std::max(1.0, std::abs(g.breakdown.total)));
  }
}

TEST(ExampleTraining, WarmupFreezesEveryActivationSite) {
  TrainConfig cfg = tiny_config(2);
  RunState s = RunState::init(teacher(), cfg);
  const auto before = snapshot(s.student.parameters());
  warmup_calibrate(s, cfg);
  EXPECT_TRUE(open_activation_sites(s.student).empty());
  for (const auto& l : s.student.layers) {
    if (!l.act_quant) continue;
    EXPECT_TRUE(l.act_quant->frozen()) << l.name;
    EXPECT_GT(l.act_quant->upper()[0], l.act_quant->lower()[0]) << l.name;
  }
  EXPECT_EQ(snapshot(s.student.parameters()), before);
  EXPECT_EQ(s.student_steps, 0);
}

// Replays the warm-up sample stream and recomputes every site's extrema by hand.
TEST(ExampleTraining, WarmupBoundsMatchReplayedExtrema) {
  TrainConfig cfg = tiny_config(3);
  RunState a = RunState::init(teacher(), cfg);
  warmup_calibrate(a, cfg);

  RunState b = RunState::init(teacher(), cfg);
  std::map<std::string, std::pair<float, float>> ext;
  auto fold = [&](const std::string& site, const Tensor& t) {
    const auto [lo, hi] = std::minmax_element(t.data().begin(), t.data().end());
    auto it = ext.find(site);
    if (it == ext.end()) {
      ext[site] = {*lo, *hi};
    } else {
      it->second.first = std::min(it->second.first, *lo);
      it->second.second = std::max(it->second.second, *hi);
    }
  };
  const LayerGraph& q = b.student;
  while (b.t < cfg.warmup_iterations()) {
    Tensor x = train_step_generator(b, cfg).samples;
    ++b.t;
    // tiny-plain: conv -> bn -> relu blocks, then pool and fc.
    ForwardResult r = q.forward(x, Mode::kEval, {.capture_bn_inputs = true});
    fold("block1.conv", x);
    const char* next[] = {"block2.conv", "block3.conv", "block4.conv", "fc"};
    for (int k = 0; k < 4; ++k) {
      const std::string bn_name = "block" + std::to_string(k + 1) + ".bn";
      const Layer& l = q.layer(bn_name);
      Tensor h = relu(batch_norm(r.bn_inputs[k], l.params.at("gamma"), l.params.at("beta"),
                                 l.buffers.at("running_mean"), l.buffers.at("running_std"), Mode::kEval));
      fold(next[k], k == 3 ? mean(h, {2, 3}) : h);
    }
  }
  for (const auto& [site, lu] : ext) {
    const auto& aq = *a.student.layer(site).act_quant;
    EXPECT_EQ(aq.lower()[0], lu.first) << site;
    EXPECT_EQ(aq.upper()[0], lu.second) << site;
  }
}

TEST(ExampleTraining, StudentStepKeepsTeacherAndStoredStats) {
  TrainConfig cfg = tiny_config(4);
  RunState s = RunState::init(teacher(), cfg);
  warmup_calibrate(s, cfg);
  const std::string teacher_before = s.teacher.digest();
  const std::string bn_before = s.student.bn_digest();
  const auto params_before = snapshot(s.student.parameters());
  train_step_student(s, cfg);
  EXPECT_EQ(s.teacher.digest(), teacher_before);
  EXPECT_EQ(s.student.bn_digest(), bn_before);
  EXPECT_NE(snapshot(s.student.parameters()), params_before);
}

TEST(ExampleTraining, StudentStepDescendsOnItsBatch) {
  int decreased = 0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    TrainConfig cfg = tiny_config(seed);
    cfg.student_lr = 1e-3;
    cfg.student_momentum = 0.0;
    RunState s = RunState::init(teacher(), cfg);
    warmup_calibrate(s, cfg);
    Rng replay = s.rng;
    const double before = train_step_student(s, cfg);
    // Same draw order as the step: labels, positions, then noise.
    std::vector<int64_t> y(cfg.batch_size), p(cfg.batch_size);
    for (auto& v : y) v = replay.uniform_int(0, s.generator.config().num_classes);
    for (auto& v : p) v = replay.uniform_int(0, s.generator.config().positions());
    Tensor z = replay.normal_tensor({cfg.batch_size, s.generator.config().z_dim});
    Tensor x = s.generator.generate(z, y, p).detach();
    const double after = student_objective(s.student.forward(x, Mode::kEval).logits,
                                           s.teacher.forward(x, Mode::kEval).logits, cfg.weights.tau)
                             .item();
    decreased += after < before;
  }
  EXPECT_GE(decreased, 3);
}

TEST(ExampleTraining, SameSeedRunsAreBitwiseIdentical) {
  TrainConfig cfg = tiny_config(5);
  RunResult a = run_acq(cfg, teacher());
  RunResult b = run_acq(cfg, teacher());
  EXPECT_EQ(a.report.dump(), b.report.dump());
  EXPECT_EQ(a.report["final_student_loss"].get<double>(), b.report["final_student_loss"].get<double>());
  cfg.seed = 6;
  EXPECT_NE(run_acq(cfg, teacher()).report["generator_digest"], a.report["generator_digest"]);
}

TEST(ExampleTraining, AblationRowsFollowComponentStructure) {
  const auto rows = ablation_rows();
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0].label(), "none");
  EXPECT_EQ(rows[1].label(), "cacm");
  EXPECT_EQ(rows[2].label(), "cacm+ad");
  EXPECT_EQ(rows[3].label(), "penalty");
  EXPECT_EQ(rows[4].label(), "cacm+ad+penalty");
  TrainConfig cfg = tiny_config(7);
  cfg.switches = rows[0];
  RunResult r = run_acq(cfg, teacher());
  EXPECT_EQ(r.report["switches"]["label"], "none");
  EXPECT_EQ(r.report["final_generator_loss"]["cacm"], 0.0);
  EXPECT_EQ(r.report["final_generator_loss"]["adversarial"], 0.0);
  EXPECT_EQ(r.report["final_generator_loss"]["ce_train_penalty"], 0.0);
  EXPECT_EQ(r.report["final_generator_loss"]["bns_train_penalty"], 0.0);
}

TEST(Training, AllOffRowIsBaselineObjective) {
  TrainConfig cfg = tiny_config();
  cfg.switches = {false, false, false};
  RunState s = RunState::init(teacher(), cfg);
  Rng rng(8);
  const std::vector<int64_t> y{0, 1}, p{0, 1};
  Tensor z1 = rng.normal_tensor({2, 100}), z2 = rng.normal_tensor({2, 100});
  GeneratorLossParts parts = generator_loss_parts(s.teacher, s.teacher_stats, z1, z2, s.generator.generate(z1, y, p),
                                                  s.generator.generate(z2, y, p), y, p, cfg);
  EXPECT_TRUE(parts.ce_eval.defined());
  EXPECT_TRUE(parts.bns_eval.defined());
  EXPECT_FALSE(parts.cacm.defined());
  EXPECT_FALSE(parts.adversarial.defined());
  EXPECT_FALSE(parts.ce_train_penalty.defined());
  EXPECT_FALSE(parts.bns_train_penalty.defined());
  EXPECT_FALSE(parts.cacm_penalty.defined());
}

TEST(Training, PenaltySwitchAddsTrainModeParts) {
  TrainConfig cfg = tiny_config();
  cfg.switches = {false, false, true};
  RunState s = RunState::init(teacher(), cfg);
  Rng rng(9);
  const std::vector<int64_t> y{0, 1}, p{0, 1};
  Tensor z1 = rng.normal_tensor({2, 100}), z2 = rng.normal_tensor({2, 100});
  GeneratorLossParts parts = generator_loss_parts(s.teacher, s.teacher_stats, z1, z2, s.generator.generate(z1, y, p),
                                                  s.generator.generate(z2, y, p), y, p, cfg);
  EXPECT_TRUE(parts.ce_train_penalty.defined());
  EXPECT_TRUE(parts.bns_train_penalty.defined());
  EXPECT_TRUE(parts.cacm_penalty.defined());
  EXPECT_FALSE(parts.cacm.defined());
}

TEST(Training, ConfigInvariants) {
  TrainConfig c = tiny_config();
  c.warmup_epochs = c.epochs;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(TrainConfig::full_scale().epochs, 400);
  EXPECT_EQ(TrainConfig::full_scale().iters_per_epoch, 200);
  EXPECT_DOUBLE_EQ(TrainConfig::full_scale().generator_lr, 1e-3);
  EXPECT_EQ(TrainConfig::desk().total_iterations(), 2500);
  EXPECT_EQ(TrainConfig::desk().batch_size, 16);
}

TEST(Training, StudentStepBeforeWarmupThrows) {
  TrainConfig cfg = tiny_config();
  RunState s = RunState::init(teacher(), cfg);
  EXPECT_THROW(train_step_student(s, cfg), std::logic_error);
}

TEST(Training, CheckpointsAndIterationLog) {
  TrainConfig cfg = tiny_config(10);
  const auto dir = std::filesystem::temp_directory_path() / "acq_tests" / "ckpt";
  std::filesystem::remove_all(dir);
  cfg.checkpoint_every = 1;
  cfg.checkpoint_dir = dir.string();
  std::vector<nlohmann::json> lines;
  run_acq(cfg, teacher(), nullptr, [&](const nlohmann::json& j) { lines.push_back(j); });
  ASSERT_EQ(static_cast<int64_t>(lines.size()), cfg.total_iterations());
  for (const char* key : {"t", "ce_eval", "bns_eval", "cacm", "adversarial", "total", "lr_generator", "lr_student"}) {
    EXPECT_TRUE(lines.back().contains(key)) << key;
  }
  EXPECT_EQ(lines.front()["phase"], "warmup");
  EXPECT_EQ(lines.back()["phase"], "train");
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0002" / "generator" / "model.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "epoch_0003" / "student" / "model.json"));
}

TEST(Training, TeacherTamperingIsDetected) {
  TrainConfig cfg = tiny_config();
  RunState s = RunState::init(teacher(), cfg);
  s.teacher.layer("fc").params.at("bias").mutable_data()[0] += 1.0f;
  EXPECT_THROW(s.check_teacher(), std::logic_error);
}

TEST(Training, ConfigJsonRoundTrip) {
  TrainConfig c = tiny_config(12);
  c.weights = LossWeights::imagenet();
  c.switches = {true, false, true};
  c.generator.fusion = FusionPath::kHighDim;
  const nlohmann::json j = to_json(c);
  TrainConfig back = train_config_from_json(j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"epochz", 3}}), std::invalid_argument);
  EXPECT_EQ(train_config_from_json(nlohmann::json{{"profile", "full"}}).epochs, 400);
  EXPECT_FLOAT_EQ(train_config_from_json(nlohmann::json{{"weights", {{"profile", "imagenet"}}}}).weights.alpha, 0.1f);
}

TEST(Training, SetHyperparameterByName) {
  TrainConfig c = tiny_config();
  set_hyperparameter(c, "gamma", 0.25);
  set_hyperparameter(c, "epsilon1", 0.05);
  EXPECT_FLOAT_EQ(c.weights.gamma, 0.25f);
  EXPECT_FLOAT_EQ(c.weights.penalty_ce, 0.05f);
  EXPECT_THROW(set_hyperparameter(c, "delta", 1), std::invalid_argument);
  EXPECT_THROW(set_hyperparameter(c, "gamma", -1), std::invalid_argument);
}

TEST(Training, AblationHarnessEmitsFiveRows) {
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  Dataset test;
  test.channels = 3;
  test.height = test.width = 32;
  Rng rng(13);
  Tensor imgs = rng.uniform_tensor({20, 3, 32, 32}, -1, 1);
  test.pixels = imgs.to_vector();
  for (int i = 0; i < 20; ++i) test.labels.push_back(i % 10);
  ExperimentOptions opt;
  opt.seeds = {1, 2};
  opt.audit_samples = 0;
  const nlohmann::json r = run_ablation(cfg, teacher(), test, ablation_rows(), opt);
  ASSERT_EQ(r["rows"].size(), 5u);
  EXPECT_EQ(r["rows"][0]["label"], "none");
  EXPECT_EQ(r["rows"][4]["label"], "cacm+ad+penalty");
  EXPECT_EQ(r["rows"][2]["accuracies"].size(), 2u);
  EXPECT_EQ(nlohmann::json::parse(r.dump()), r);
  const nlohmann::json sw = run_sweep(cfg, teacher(), test, "gamma", {0.0, 0.5}, opt);
  ASSERT_EQ(sw["rows"].size(), 2u);
  EXPECT_EQ(sw["rows"][1]["value"], 0.5);
}

TEST(Optim, ScheduledLearningRate) {
  EXPECT_DOUBLE_EQ(scheduled_lr(1e-3, 0, 400, 4), 1e-3);
  EXPECT_NEAR(scheduled_lr(1e-3, 99, 400, 4), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_lr(1e-3, 100, 400, 4), 1e-4, 1e-15);
  EXPECT_NEAR(scheduled_lr(1e-3, 399, 400, 4), 1e-6, 1e-18);
  EXPECT_DOUBLE_EQ(scheduled_lr(0.5, 30, 50, 0), 0.5);
}

TEST(Optim, SgdMomentumByHand) {
  Tensor w = Tensor::from({1}, {1.0f}, true);
  Sgd opt({w}, 0.1, 0.9, 0.0);
  for (int i = 0; i < 2; ++i) {
    opt.zero_grad();
    (w * w).backward();  // grad 2w
    opt.step();
  }
  // v1 = 2, w1 = 0.8; v2 = 0.9 * 2 + 1.6 = 3.4, w2 = 0.8 - 0.34
  EXPECT_NEAR(w.data()[0], 0.46, 1e-6);
}

TEST(Optim, AdamFirstStepIsLearningRate) {
  Tensor w = Tensor::from({2}, {1.0f, -3.0f}, true);
  Adam opt({w}, 0.01, 0.5, 0.999);
  sum(w * w).backward();
  opt.step();
  EXPECT_NEAR(w.data()[0], 0.99, 1e-6);
  EXPECT_NEAR(w.data()[1], -2.99, 1e-6);
}

TEST(Optim, AdamMinimisesQuadratic) {
  Tensor w = Tensor::from({3}, {2, -1, 4}, true);
  Adam opt({w}, 0.05);
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    sum(square(w - 1.0f)).backward();
    opt.step();
  }
  for (float v : w.data()) EXPECT_NEAR(v, 1.0, 1e-2);
}
