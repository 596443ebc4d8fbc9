#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <queue>

#include "acq/data.hpp"
#include "acq/metrics.hpp"

using namespace acq;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / "acq_tests" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ShapesConfig small_shapes(uint64_t seed = 0) {
  ShapesConfig c;
  c.train_size = 200;
  c.test_size = 100;
  c.seed = seed;
  return c;
}

// Centroid of the largest 4-connected bright region of the channel-mean image.
std::array<double, 2> bright_centroid(const Dataset& d, int64_t i) {
  const int64_t s = d.height, hw = s * s;
  const float* img = d.pixels.data() + i * d.sample_numel();
  std::vector<uint8_t> on(hw);
  for (int64_t p = 0; p < hw; ++p) on[p] = (img[p] + img[hw + p] + img[2 * hw + p]) / 3.0f > -0.4f;
  std::vector<int> comp(hw, -1);
  std::vector<std::array<double, 3>> acc;
  for (int64_t p = 0; p < hw; ++p) {
    if (!on[p] || comp[p] >= 0) continue;
    const int id = static_cast<int>(acc.size());
    acc.push_back({0, 0, 0});
    std::queue<int64_t> q;
    q.push(p);
    comp[p] = id;
    while (!q.empty()) {
      const int64_t c = q.front();
      q.pop();
      const int64_t r = c / s, col = c % s;
      acc[id][0] += r;
      acc[id][1] += col;
      acc[id][2] += 1;
      const int64_t nb[4][2] = {{r - 1, col}, {r + 1, col}, {r, col - 1}, {r, col + 1}};
      for (const auto& n : nb) {
        if (n[0] < 0 || n[0] >= s || n[1] < 0 || n[1] >= s) continue;
        const int64_t k = n[0] * s + n[1];
        if (on[k] && comp[k] < 0) {
          comp[k] = id;
          q.push(k);
        }
      }
    }
  }
  const auto best = std::max_element(acc.begin(), acc.end(), [](auto& a, auto& b) { return a[2] < b[2]; });
  return {(*best)[0] / (*best)[2], (*best)[1] / (*best)[2]};
}

}  // namespace

TEST(ExampleShapes, SameSeedSamePixels) {
  ShapesDataset a = generate_shapes(small_shapes(3)), b = generate_shapes(small_shapes(3));
  EXPECT_EQ(a.train.pixels, b.train.pixels);
  EXPECT_EQ(a.test.pixels, b.test.pixels);
  EXPECT_NE(generate_shapes(small_shapes(4)).train.pixels, a.train.pixels);
}

TEST(ExampleShapes, BrightRegionCentroidMatchesRecord) {
  ShapesDataset s = generate_shapes(small_shapes(5));
  for (const Dataset* d : {&s.train, &s.test}) {
    for (int64_t i = 0; i < d->size(); ++i) {
      const auto c = bright_centroid(*d, i);
      EXPECT_LE(std::abs(c[0] - d->centroids[i][0]), 2.0) << i;
      EXPECT_LE(std::abs(c[1] - d->centroids[i][1]), 2.0) << i;
    }
  }
}

TEST(ExampleShapes, ClassHistogramBalanced) {
  ShapesDataset s = generate_shapes(small_shapes());
  for (int64_t n : s.train.class_histogram()) EXPECT_EQ(n, 20);
  for (int64_t n : s.test.class_histogram()) EXPECT_EQ(n, 10);
}

TEST(Shapes, CentroidsInsideAndPixelsInRange) {
  ShapesDataset s = generate_shapes(small_shapes(6));
  for (const auto& c : s.train.centroids) {
    EXPECT_GE(c[0], 0);
    EXPECT_LT(c[0], 32);
    EXPECT_GE(c[1], 0);
    EXPECT_LT(c[1], 32);
  }
  for (float v : s.train.pixels) {
    ASSERT_GE(v, -1.0f);
    ASSERT_LE(v, 1.0f);
  }
  for (int k = 0; k < kShapeKinds; ++k) EXPECT_STRNE(shape_name(k), "");
}

TEST(Shapes, ConfigValidated) {
  ShapesConfig c = small_shapes();
  c.num_classes = 11;
  EXPECT_THROW(generate_shapes(c), std::invalid_argument);
  c = small_shapes();
  c.max_radius = 20;
  EXPECT_THROW(generate_shapes(c), std::invalid_argument);
}

TEST(ExampleCifar, TestBatchHasTenThousandRecords) {
  const fs::path dir = temp_dir("cifar_full");
  std::vector<uint8_t> labels(10000), pixels(10000 * 3072);
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<uint8_t>(i % 10);
  for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<uint8_t>((i * 31) % 256);
  write_cifar10_file(dir / "test_batch.bin", labels, pixels);
  EXPECT_EQ(fs::file_size(dir / "test_batch.bin"), 10000u * 3073u);
  Dataset d = read_cifar10(dir, "test");
  EXPECT_EQ(d.size(), 10000);
  for (int64_t y : d.labels) {
    ASSERT_GE(y, 0);
    ASSERT_LE(y, 9);
  }
  EXPECT_EQ(d.labels, std::vector<int64_t>(labels.begin(), labels.end()));
}

TEST(ExampleCifar, PixelAffineContract) {
  const fs::path dir = temp_dir("cifar_affine");
  std::vector<uint8_t> pixels(3072, 0);
  pixels[0] = 255;         // red channel, first pixel
  pixels[1024 + 5] = 255;  // green channel
  write_cifar10_file(dir / "b.bin", {3}, pixels);
  Cifar10Normalization norm;
  norm.mean = {0.4914f, 0.4822f, 0.4465f};
  norm.std = {0.247f, 0.243f, 0.261f};
  Dataset d = read_cifar10_file(dir / "b.bin", norm);
  EXPECT_EQ(d.pixels[0], (1.0f - norm.mean[0]) / norm.std[0]);
  EXPECT_EQ(d.pixels[1024 + 5], (1.0f - norm.mean[1]) / norm.std[1]);
  EXPECT_EQ(d.pixels[1], (0.0f - norm.mean[0]) / norm.std[0]);
  EXPECT_EQ(read_cifar10_file(dir / "b.bin").pixels[0], 1.0f);
}

TEST(Cifar, TruncatedFileNamesOffset) {
  const fs::path dir = temp_dir("cifar_trunc");
  write_cifar10_file(dir / "b.bin", {1, 2}, std::vector<uint8_t>(2 * 3072, 7));
  fs::resize_file(dir / "b.bin", 3073 + 100);
  try {
    read_cifar10_file(dir / "b.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("3073"), std::string::npos) << e.what();
  }
}

TEST(Cifar, BadLabelRejected) {
  const fs::path dir = temp_dir("cifar_label");
  write_cifar10_file(dir / "b.bin", {10}, std::vector<uint8_t>(3072, 0));
  EXPECT_THROW(read_cifar10_file(dir / "b.bin"), FormatError);
}

TEST(Cifar, TrainSplitConcatenatesFiveBatches) {
  const fs::path dir = temp_dir("cifar_train");
  for (int b = 1; b <= 5; ++b) {
    write_cifar10_file(dir / ("data_batch_" + std::to_string(b) + ".bin"), {static_cast<uint8_t>(b)},
                       std::vector<uint8_t>(3072, static_cast<uint8_t>(b)));
  }
  Dataset d = read_cifar10(dir, "train");
  EXPECT_EQ(d.labels, (std::vector<int64_t>{1, 2, 3, 4, 5}));
  EXPECT_THROW(read_cifar10(dir, "valid"), std::invalid_argument);
}

TEST(Pretrain, RunningStatsTrackFullDataStatistics) {
  ShapesConfig c = small_shapes(7);
  c.train_size = 640;
  ShapesDataset s = generate_shapes(c);
  PretrainConfig pc;
  pc.epochs = 2;
  pc.batch_size = 32;
  LayerGraph g = pretrain_teacher(s.train, "tiny-plain", pc);
  // Full-data batch statistics under the final weights.
  ForwardResult r = g.forward(s.train.images(), Mode::kTrain);
  const StoredStats stored = g.stored_stats();
  const StoredStats full = to_stored(r.stats);
  double num_m = 0, den_m = 0, num_s = 0, den_s = 0;
  for (size_t l = 0; l < full.mean.size(); ++l) {
    for (size_t ch = 0; ch < full.mean[l].size(); ++ch) {
      num_m += std::abs(stored.mean[l][ch] - full.mean[l][ch]);
      den_m += std::abs(full.mean[l][ch]);
      num_s += std::abs(stored.std[l][ch] - full.std[l][ch]);
      den_s += std::abs(full.std[l][ch]);
    }
  }
  EXPECT_LE(num_m / den_m, 0.1);
  EXPECT_LE(num_s / den_s, 0.1);
}

TEST(Pretrain, EmaUpdateByHand) {
  LayerGraph g = build_target_net("tiny-plain", 10, 0);
  BatchStatsRecord r;
  for (const auto& l : g.layers) {
    if (l.kind != LayerKind::kBatchNorm) continue;
    const int64_t c = l.params.at("gamma").numel();
    r.layers.push_back({l.name, Tensor::full({c}, 2.0f), Tensor::full({c}, 3.0f)});
  }
  update_running_stats(g, r, 0.1f);
  const Layer& bn = g.layer("block1.bn");
  EXPECT_NEAR(bn.buffers.at("running_mean").data()[0], 0.2, 1e-6);
  EXPECT_NEAR(bn.buffers.at("running_std").data()[0], 1.2, 1e-6);
  r.layers.pop_back();
  EXPECT_THROW(update_running_stats(g, r, 0.1f), ShapeError);
}

TEST(Dataset, BatchAndImagesViews) {
  ShapesDataset s = generate_shapes(small_shapes());
  Tensor b = s.test.batch({3, 0});
  EXPECT_EQ(b.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(b.data()[0], s.test.pixels[3 * 3072]);
  EXPECT_EQ(s.test.images().numel(), 100 * 3072);
  EXPECT_THROW(s.test.batch({100}), std::out_of_range);
}

TEST(Dataset, SampleExportIsPlainPpm) {
  const fs::path dir = temp_dir("ppm");
  ShapesDataset s = generate_shapes(small_shapes());
  export_sample_ppm(s.test.images(), 1, dir / "s.ppm");
  std::ifstream in(dir / "s.ppm");
  std::string magic;
  in >> magic;
  EXPECT_EQ(magic, "P3");
}
