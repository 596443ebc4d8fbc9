#include <gtest/gtest.h>

#include <cmath>

#include "acq/metrics.hpp"

using namespace acq;

namespace {

StoredStats one_channel(float mu, float sigma) {
  StoredStats s;
  s.names = {"bn"};
  s.mean = {{mu}};
  s.std = {{sigma}};
  return s;
}

StoredStats random_stats(uint64_t seed) {
  Rng rng(seed);
  StoredStats s;
  for (int l = 0; l < 3; ++l) {
    s.names.push_back("bn" + std::to_string(l));
    s.mean.emplace_back();
    s.std.emplace_back();
    for (int c = 0; c < 4 + l; ++c) {
      s.mean.back().push_back(static_cast<float>(rng.normal()));
      s.std.back().push_back(static_cast<float>(0.5 + rng.uniform()));
    }
  }
  return s;
}

LabeledSamples labeled_noise(const LayerGraph& g, int64_t n, uint64_t seed) {
  Rng rng(seed);
  LabeledSamples s;
  s.images = rng.uniform_tensor({n, 3, 32, 32}, -1, 1);
  s.labels = argmax_rows(g.forward(s.images, Mode::kEval).logits);
  return s;
}

}  // namespace

TEST(ExampleMetrics, BnsErrorOfIdenticalStatsIsZero) {
  const StoredStats s = random_stats(1);
  EXPECT_EQ(bns_error(s, s), 0.0);
}

TEST(ExampleMetrics, BnsErrorOneMeanDeviation) {
  EXPECT_DOUBLE_EQ(bns_error(one_channel(1.0f, 2.0f), one_channel(0.0f, 2.0f)), 0.5);
}

TEST(ExampleMetrics, BnsErrorScalesLinearly) {
  const StoredStats a = random_stats(2), b = random_stats(3);
  StoredStats scaled = a;
  const double k = 3.0;
  for (size_t l = 0; l < a.mean.size(); ++l)
    for (size_t c = 0; c < a.mean[l].size(); ++c) {
      scaled.mean[l][c] = static_cast<float>(b.mean[l][c] + k * (a.mean[l][c] - b.mean[l][c]));
      scaled.std[l][c] = static_cast<float>(b.std[l][c] + k * (a.std[l][c] - b.std[l][c]));
    }
  EXPECT_NEAR(bns_error(scaled, b), k * bns_error(a, b), 1e-5);
}

TEST(Metrics, BnsErrorSymmetricAndStructureChecked) {
  const StoredStats a = random_stats(4), b = random_stats(5);
  EXPECT_DOUBLE_EQ(bns_error(a, b), bns_error(b, a));
  StoredStats c = b;
  c.mean.pop_back();
  c.std.pop_back();
  c.names.pop_back();
  EXPECT_ANY_THROW(bns_error(a, c));
}

TEST(Metrics, BnsErrorOfRecordMatchesStoredForm) {
  LayerGraph g = build_target_net("tiny-plain", 10, 0);
  Rng rng(6);
  ForwardResult r = g.forward(rng.uniform_tensor({8, 3, 32, 32}, -1, 1), Mode::kTrain);
  EXPECT_DOUBLE_EQ(bns_error(r.stats, g.stored_stats()), bns_error(to_stored(r.stats), g.stored_stats()));
}

TEST(ExampleMetrics, PreselectedSetIsEvalCorrect) {
  LayerGraph g = build_target_net("tiny-plain", 10, 0);
  LabeledSamples pool = labeled_noise(g, 48, 7);
  // Flip a third of the labels so selection has something to drop.
  for (int64_t i = 0; i < pool.size(); i += 3) pool.labels[i] = (pool.labels[i] + 1) % 10;
  LabeledSamples sel = select_eval_correct(g, pool, 32);
  EXPECT_EQ(sel.size(), 32);
  ModeConsistencyReport rep = mode_consistency(g, sel, 16);
  EXPECT_EQ(rep.acc_eval, 1.0);
  EXPECT_GE(rep.acc_train, 0.0);
  EXPECT_LE(rep.acc_train, 1.0);
  EXPECT_EQ(rep.samples, 32);
  EXPECT_GE(rep.attention_mae, 0.0);
}

TEST(Metrics, ModeConsistencyNeedsOneFullBatch) {
  LayerGraph g = build_target_net("tiny-plain", 10, 0);
  EXPECT_ANY_THROW(mode_consistency(g, labeled_noise(g, 8, 1), 16));
}

TEST(Metrics, AuditIsDeterministic) {
  LayerGraph g = build_target_net("tiny-plain", 10, 0);
  LabeledSamples s = labeled_noise(g, 32, 8);
  EXPECT_EQ(mode_consistency(g, s).to_json().dump(), mode_consistency(g, s).to_json().dump());
}

TEST(Metrics, SynthesizeCountsAndLabels) {
  GeneratorNet gen(GeneratorConfig{}, 0);
  Rng rng(3);
  std::vector<int64_t> pos;
  LabeledSamples s = synthesize(gen, rng, 37, 16, &pos);
  EXPECT_EQ(s.size(), 37);
  EXPECT_EQ(s.images.shape(), (Shape{37, 3, 32, 32}));
  EXPECT_EQ(pos.size(), 37u);
  for (size_t i = 0; i < pos.size(); ++i) {
    EXPECT_GE(s.labels[i], 0);
    EXPECT_LT(s.labels[i], 10);
    EXPECT_GE(pos[i], 0);
    EXPECT_LT(pos[i], 64);
  }
}

TEST(Metrics, ControllabilityReportFields) {
  GeneratorNet gen(GeneratorConfig{}, 0);
  LayerGraph t = build_target_net("tiny-plain", 10, 0);
  ControllabilityReport r = attention_controllability(gen, t, 32, 1);
  EXPECT_EQ(r.samples, 32);
  EXPECT_EQ(r.radius, 1);
  for (double v : {r.hit_rate, r.control_rate}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto j = r.to_json();
  EXPECT_TRUE(j.contains("hit_rate"));
  EXPECT_TRUE(j.contains("control_rate"));
  EXPECT_EQ(attention_controllability(gen, t, 32, 1).to_json(), j);
}

TEST(Metrics, AccuracyOnTrivialData) {
  LayerGraph g = build_target_net("tiny-plain", 10, 0);
  LabeledSamples s = labeled_noise(g, 20, 2);
  Dataset d;
  d.pixels = s.images.to_vector();
  d.labels = s.labels;
  EXPECT_DOUBLE_EQ(accuracy(g, d, Mode::kEval, 10), 1.0);
}
