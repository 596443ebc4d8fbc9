#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "acq/archive.hpp"
#include "acq/config.hpp"
#include "acq/data.hpp"
#include "acq/metrics.hpp"

using namespace acq;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Proc {
  int code = -1;
  std::string out;
};

Proc run(const std::string& args, bool merge_stderr = false) {
  const std::string cmd = std::string(ACQ_CLI_PATH) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  Proc p;
  FILE* f = popen(cmd.c_str(), "r");
  if (!f) return p;
  std::array<char, 4096> buf{};
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), f)) > 0) p.out.append(buf.data(), n);
  const int status = pclose(f);
  p.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return p;
}

fs::path work() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / "acq_tests" / "cli";
    fs::remove_all(p);
    fs::create_directories(p);
    save_model(build_target_net("tiny-plain", 10, 0), p / "teacher");
    TrainConfig c = TrainConfig::desk();
    c.epochs = 2;
    c.iters_per_epoch = 2;
    c.warmup_epochs = 1;
    c.batch_size = 4;
    std::ofstream(p / "tiny.json") << to_json(c).dump(2);
    return p;
  }();
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(ExampleCli, UnknownFlagExitsTwoWithUsage) {
  Proc p = run("quantize --no-such-flag", true);
  EXPECT_EQ(p.code, 2);
  EXPECT_NE(p.out.find("Usage"), std::string::npos) << p.out;
}

TEST(Cli, MissingSubcommandAndBadValuesAreUsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("eval --model " + (work() / "teacher").string() + " --data nowhere").code, 2);
  EXPECT_EQ(run("quantize --model " + (work() / "teacher").string() + " --bits 4x4 --out " +
                (work() / "bad").string() + " --data none")
                .code,
            2);
}

TEST(Cli, RuntimeFailureExitsOne) {
  EXPECT_EQ(run("eval --model " + (work() / "absent").string()).code, 1);
}

TEST(ExampleCli, QuantizeWritesArchivesAndReport) {
  const fs::path out = work() / "q";
  Proc p = run("quantize --model " + (work() / "teacher").string() + " --bits 4w4a --config " +
               (work() / "tiny.json").string() + " --out " + out.string() + " --report " +
               (out / "report.json").string() + " --data none --seed 3");
  ASSERT_EQ(p.code, 0) << p.out;
  EXPECT_EQ(archive_kind(out / "student"), "layer_graph");
  EXPECT_EQ(archive_kind(out / "generator"), "generator");
  const json r = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(r["config"]["bits"], "4w4a");
  EXPECT_EQ(r["config"]["seed"], 3);
  EXPECT_EQ(json::parse(r.dump()), r);
}

TEST(ExampleCli, SweepEmitsOneRowPerValue) {
  const fs::path out = work() / "sweep.json";
  Proc p = run("sweep --model " + (work() / "teacher").string() + " --param gamma --values 0,0.1,0.5,1 --seeds 1 " +
               "--config " + (work() / "tiny.json").string() + " --out " + out.string());
  ASSERT_EQ(p.code, 0);
  const json r = json::parse(slurp(out));
  ASSERT_EQ(r["rows"].size(), 4u);
  EXPECT_EQ(json::parse(r.dump()), r);
}

TEST(ExampleCli, AblateReportIsValidJson) {
  const fs::path out = work() / "ablate.json";
  Proc p = run("ablate --model " + (work() / "teacher").string() + " --components none --seeds 1 --config " +
               (work() / "tiny.json").string() + " --out " + out.string());
  ASSERT_EQ(p.code, 0);
  const json r = json::parse(slurp(out));
  ASSERT_EQ(r["rows"].size(), 1u);
  EXPECT_EQ(json::parse(r.dump()), r);
}

TEST(Cli, EvalLogitsMatchInProcessForward) {
  const fs::path bin = work() / "logits.bin";
  Proc p = run("eval --model " + (work() / "teacher").string() + " --logits " + bin.string() + " --logit-rows 4");
  ASSERT_EQ(p.code, 0);
  const std::string bytes = slurp(bin);
  ASSERT_EQ(bytes.size(), 4u * 10u * 4u);
  ShapesConfig sc;
  const ShapesDataset s = generate_shapes(sc);
  const LayerGraph g = load_model(work() / "teacher");
  const auto logits = g.forward(s.test.batch({0, 1, 2, 3}), Mode::kEval).logits.to_vector();
  for (size_t i = 0; i < logits.size(); ++i) {
    uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[4 * i + b])) << (8 * b);
    EXPECT_EQ(std::bit_cast<float>(u), logits[i]) << i;
  }
  EXPECT_DOUBLE_EQ(json::parse(p.out)["accuracy"].get<double>(), accuracy(g, s.test, Mode::kEval));
}

TEST(Cli, AuditOfShapesIsDeterministic) {
  const std::string cmd = "audit --model " + (work() / "teacher").string() + " --samples shapes --count 32";
  Proc a = run(cmd), b = run(cmd);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_TRUE(json::parse(a.out).contains("bns_err_train"));
}

TEST(Cli, GenSamplesWritesImagesAndIndex) {
  const fs::path gen = work() / "fresh_generator";
  save_generator(GeneratorNet(GeneratorConfig{}, 2), gen);
  const fs::path out = work() / "samples";
  Proc p = run("gen-samples --generator " + gen.string() + " --teacher " +
               (work() / "teacher").string() + " --count 3 --out-dir " + out.string());
  ASSERT_EQ(p.code, 0);
  EXPECT_TRUE(fs::exists(out / "sample_0002.ppm"));
  EXPECT_TRUE(fs::exists(out / "sample_0002_attention.pgm"));
  EXPECT_EQ(json::parse(slurp(out / "index.json")).size(), 3u);
}

TEST(Cli, PretrainOneEpoch) {
  const fs::path out = work() / "pre";
  Proc p = run("pretrain --spec tiny-plain --data shapes --epochs 1 --out " + out.string());
  ASSERT_EQ(p.code, 0);
  const json r = json::parse(p.out);
  EXPECT_EQ(r["spec"], "tiny-plain");
  EXPECT_GT(r["test_accuracy"].get<double>(), 0.1);
  EXPECT_EQ(archive_kind(out), "layer_graph");
}
