// acq command-line entry point.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "acq/archive.hpp"
#include "acq/attention.hpp"
#include "acq/config.hpp"
#include "acq/data.hpp"
#include "acq/experiments.hpp"
#include "acq/image_io.hpp"
#include "acq/metrics.hpp"
#include "acq/training.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct DataSplit {
  acq::Dataset train;
  acq::Dataset test;
};

// "shapes" or "cifar10:<dir>".
DataSplit load_data(const std::string& source, uint64_t data_seed) {
  if (source == "shapes") {
    acq::ShapesConfig sc;
    sc.seed = data_seed;
    acq::ShapesDataset s = acq::generate_shapes(sc);
    return {std::move(s.train), std::move(s.test)};
  }
  const std::string prefix = "cifar10:";
  if (source.rfind(prefix, 0) == 0) {
    const fs::path dir = source.substr(prefix.size());
    DataSplit d;
    d.test = acq::read_cifar10(dir, "test");
    if (fs::exists(dir / "data_batch_1.bin")) d.train = acq::read_cifar10(dir, "train");
    return d;
  }
  throw std::invalid_argument("unknown data source '" + source + "' (expected shapes or cifar10:<dir>)");
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path);
}

std::vector<double> parse_doubles(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument("bad number '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty value list");
  return out;
}

std::vector<uint64_t> parse_seeds(const std::string& text) {
  std::vector<uint64_t> out;
  for (double v : parse_doubles(text)) out.push_back(static_cast<uint64_t>(v));
  return out;
}

acq::TrainConfig make_config(const std::string& path, uint64_t seed, bool seed_given) {
  acq::TrainConfig cfg = path.empty() ? acq::TrainConfig::desk() : acq::load_train_config(path);
  if (seed_given) cfg.seed = seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acq: data-free low-bit quantization with a conditional generator"};
  app.require_subcommand(1);
  uint64_t seed = 0;
  uint64_t data_seed = 0;

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Train a floating-point teacher");
  std::string pre_spec = "tiny-resnet", pre_data = "shapes", pre_out;
  acq::PretrainConfig pre_cfg;
  pre->add_option("--spec", pre_spec, "Architecture (tiny-resnet, tiny-plain)");
  pre->add_option("--data", pre_data, "shapes or cifar10:<dir>");
  pre->add_option("--epochs", pre_cfg.epochs, "Training epochs");
  pre->add_option("--batch-size", pre_cfg.batch_size);
  pre->add_option("--lr", pre_cfg.lr);
  pre->add_option("--out", pre_out, "Output archive directory")->required();
  pre->add_option("--seed", seed);
  pre->add_option("--data-seed", data_seed);

  // quantize
  auto* quant = app.add_subcommand("quantize", "Train a generator and a quantized student");
  std::string q_model, q_bits = "4w4a", q_config, q_out, q_report, q_log, q_data = "shapes";
  quant->add_option("--model", q_model, "Teacher archive")->required();
  quant->add_option("--bits", q_bits, "Bit widths, e.g. 4w4a");
  quant->add_option("--config", q_config, "TrainConfig JSON (defaults to the desk profile)");
  quant->add_option("--out", q_out, "Output directory (student/ and generator/)")->required();
  quant->add_option("--report", q_report, "Report JSON path");
  quant->add_option("--log", q_log, "Per-iteration JSON lines");
  quant->add_option("--data", q_data, "Test data for accuracy: shapes, cifar10:<dir> or none");
  auto* q_seed = quant->add_option("--seed", seed);
  quant->add_option("--data-seed", data_seed);

  // audit
  auto* aud = app.add_subcommand("audit", "Mode-consistency report (BNS error, mode accuracy)");
  std::string a_model, a_samples = "shapes", a_report;
  int64_t a_count = 960;
  aud->add_option("--model", a_model, "Teacher archive")->required();
  aud->add_option("--samples", a_samples, "Generator archive, shapes or cifar10:<dir>");
  aud->add_option("--count", a_count, "Samples kept after eval-correct preselection");
  aud->add_option("--report", a_report, "Report JSON path (stdout when omitted)");
  aud->add_option("--seed", seed);
  aud->add_option("--data-seed", data_seed);

  // eval
  auto* ev = app.add_subcommand("eval", "Top-1 accuracy of a model archive");
  std::string e_model, e_data = "shapes", e_mode = "eval", e_logits;
  int64_t e_logit_rows = 16;
  ev->add_option("--model", e_model, "Model archive")->required();
  ev->add_option("--data", e_data, "shapes or cifar10:<dir>");
  ev->add_option("--mode", e_mode, "BN mode: eval or train")->check(CLI::IsMember({"eval", "train"}));
  ev->add_option("--logits", e_logits, "Write logits of the first test samples as little-endian f32");
  ev->add_option("--logit-rows", e_logit_rows, "Rows written by --logits");
  ev->add_option("--seed", seed);
  ev->add_option("--data-seed", data_seed);

  // gen-samples
  auto* gen = app.add_subcommand("gen-samples", "Export generator samples and teacher attention maps");
  std::string g_gen, g_teacher, g_out;
  int64_t g_count = 16;
  gen->add_option("--generator", g_gen, "Generator archive")->required();
  gen->add_option("--teacher", g_teacher, "Teacher archive for attention maps");
  gen->add_option("--count", g_count, "Number of samples");
  gen->add_option("--out-dir", g_out, "Output directory")->required();
  gen->add_option("--seed", seed);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Accuracy versus one hyperparameter");
  std::string s_model, s_param, s_values, s_config, s_out, s_seeds = "1,2,3", s_data = "shapes";
  sw->add_option("--model", s_model, "Teacher archive")->required();
  sw->add_option("--param", s_param, "Hyperparameter name, e.g. gamma or penalty_ce")->required();
  sw->add_option("--values", s_values, "Comma-separated values")->required();
  sw->add_option("--config", s_config, "TrainConfig JSON");
  sw->add_option("--seeds", s_seeds, "Comma-separated run seeds");
  sw->add_option("--data", s_data, "Test data");
  sw->add_option("--out", s_out, "Report JSON path (stdout when omitted)");
  sw->add_option("--seed", seed);
  sw->add_option("--data-seed", data_seed);

  // ablate
  auto* ab = app.add_subcommand("ablate", "Component ablation table");
  std::string b_model, b_components = "cacm,ad,penalty", b_config, b_out, b_seeds = "1,2,3", b_data = "shapes";
  ab->add_option("--model", b_model, "Teacher archive")->required();
  ab->add_option("--components", b_components, "Components to ablate (subset of cacm,ad,penalty)");
  ab->add_option("--config", b_config, "TrainConfig JSON");
  ab->add_option("--seeds", b_seeds, "Comma-separated run seeds");
  ab->add_option("--data", b_data, "Test data");
  ab->add_option("--out", b_out, "Report JSON path (stdout when omitted)");
  ab->add_option("--seed", seed);
  ab->add_option("--data-seed", data_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help() << std::endl;
    return 2;
  }

  try {
    if (pre->parsed()) {
      pre_cfg.seed = seed;
      DataSplit d = load_data(pre_data, data_seed);
      if (d.train.size() == 0) throw std::runtime_error("no training data in " + pre_data);
      acq::LayerGraph g = acq::pretrain_teacher(d.train, pre_spec, pre_cfg, [](const acq::PretrainEpoch& e) {
        std::cerr << "epoch " << e.epoch << " loss " << e.loss << " train_acc " << e.train_accuracy << '\n';
      });
      acq::save_model(g, pre_out);
      json r = {{"spec", pre_spec}, {"parameters", g.parameter_count()},
                {"test_accuracy", acq::accuracy(g, d.test, acq::Mode::kEval)}};
      write_json(r, "");
    } else if (quant->parsed()) {
      acq::TrainConfig cfg = make_config(q_config, seed, q_seed->count() > 0);
      cfg.bits = acq::parse_bit_widths(q_bits);
      const acq::LayerGraph teacher = acq::load_model(q_model);
      DataSplit d;
      if (q_data != "none") d = load_data(q_data, data_seed);
      std::ofstream log;
      std::function<void(const json&)> on_iter;
      if (!q_log.empty()) {
        log.open(q_log);
        if (!log) throw std::runtime_error("cannot write " + q_log);
        on_iter = acq::jsonl_writer(log);
      }
      const auto t0 = std::chrono::steady_clock::now();
      acq::RunResult r = acq::run_acq(cfg, teacher, q_data == "none" ? nullptr : &d.test, on_iter);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      acq::save_model(r.student, fs::path(q_out) / "student");
      acq::save_generator(r.generator, fs::path(q_out) / "generator");
      r.report["config"] = acq::to_json(cfg);
      if (!q_report.empty()) write_json(r.report, q_report);
      json summary = {{"seconds", secs}, {"student_accuracy", r.report.value("student_accuracy", json(nullptr))},
                      {"teacher_accuracy", r.report.value("teacher_accuracy", json(nullptr))}};
      write_json(summary, "");
    } else if (aud->parsed()) {
      const acq::LayerGraph teacher = acq::load_model(a_model);
      acq::ModeConsistencyReport rep;
      if (fs::is_directory(a_samples) && acq::archive_kind(a_samples) == "generator") {
        rep = acq::audit_generator(acq::load_generator(a_samples), teacher, a_count, seed);
      } else {
        DataSplit d = load_data(a_samples, data_seed);
        acq::LabeledSamples pool{d.test.images(), d.test.labels};
        rep = acq::mode_consistency(teacher, acq::select_eval_correct(teacher, pool, a_count));
      }
      write_json(rep.to_json(), a_report);
    } else if (ev->parsed()) {
      const acq::LayerGraph g = acq::load_model(e_model);
      DataSplit d = load_data(e_data, data_seed);
      const acq::Mode mode = e_mode == "train" ? acq::Mode::kTrain : acq::Mode::kEval;
      json r = {{"accuracy", acq::accuracy(g, d.test, mode)}, {"samples", d.test.size()}, {"mode", e_mode}};
      if (!e_logits.empty()) {
        std::vector<int64_t> idx;
        for (int64_t i = 0; i < std::min(e_logit_rows, d.test.size()); ++i) idx.push_back(i);
        const acq::Tensor logits = g.forward(d.test.batch(idx), mode).logits;
        std::ofstream out(e_logits, std::ios::binary);
        for (float v : logits.data()) {
          const uint32_t u = std::bit_cast<uint32_t>(v);
          for (int b = 0; b < 4; ++b) out.put(static_cast<char>(u >> (8 * b)));
        }
        if (!out) throw std::runtime_error("cannot write " + e_logits);
      }
      write_json(r, "");
    } else if (gen->parsed()) {
      const acq::GeneratorNet g = acq::load_generator(g_gen);
      acq::Rng rng(seed);
      std::vector<int64_t> positions;
      acq::LabeledSamples s = acq::synthesize(g, rng, g_count, 16, &positions);
      fs::create_directories(g_out);
      std::vector<acq::AttentionMap> maps;
      if (!g_teacher.empty()) {
        maps = acq::attention_maps(acq::load_model(g_teacher).forward(s.images, acq::Mode::kEval).backbone);
      }
      json index = json::array();
      for (int64_t i = 0; i < s.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "sample_%04lld", static_cast<long long>(i));
        acq::export_sample_ppm(s.images, i, fs::path(g_out) / (std::string(name) + ".ppm"));
        json e = {{"image", std::string(name) + ".ppm"}, {"label", s.labels[i]}, {"position", positions[i]}};
        if (!maps.empty()) {
          const int size = static_cast<int>(s.images.dim(2));
          acq::export_heatmap(maps[i], size, size, fs::path(g_out) / (std::string(name) + "_attention.pgm"));
          e["attention"] = std::string(name) + "_attention.pgm";
          e["center"] = {maps[i].center.row, maps[i].center.col};
        }
        index.push_back(e);
      }
      write_json(index, (fs::path(g_out) / "index.json").string());
    } else if (sw->parsed()) {
      acq::TrainConfig cfg = make_config(s_config, seed, false);
      const acq::LayerGraph teacher = acq::load_model(s_model);
      DataSplit d = load_data(s_data, data_seed);
      acq::ExperimentOptions opt;
      opt.seeds = parse_seeds(s_seeds);
      opt.audit_samples = 0;
      opt.progress = [](const std::string& m) { std::cerr << m << '\n'; };
      write_json(acq::run_sweep(cfg, teacher, d.test, s_param, parse_doubles(s_values), opt), s_out);
    } else if (ab->parsed()) {
      acq::TrainConfig cfg = make_config(b_config, seed, false);
      const acq::AblationSwitches allowed = acq::parse_components(b_components);
      std::vector<acq::AblationSwitches> rows;
      for (const auto& r : acq::ablation_rows()) {
        if ((!r.cacm || allowed.cacm) && (!r.adversarial || allowed.adversarial) && (!r.penalty || allowed.penalty)) {
          rows.push_back(r);
        }
      }
      const acq::LayerGraph teacher = acq::load_model(b_model);
      DataSplit d = load_data(b_data, data_seed);
      acq::ExperimentOptions opt;
      opt.seeds = parse_seeds(b_seeds);
      opt.progress = [](const std::string& m) { std::cerr << m << '\n'; };
      write_json(acq::run_ablation(cfg, teacher, d.test, rows, opt), b_out);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
