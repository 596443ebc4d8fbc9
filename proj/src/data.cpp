#include "acq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "acq/image_io.hpp"
#include "acq/losses.hpp"
#include "acq/optim.hpp"
#include "acq/rng.hpp"

namespace acq {

Tensor Dataset::batch(const std::vector<int64_t>& indices) const {
  const int64_t per = sample_numel();
  std::vector<float> out(indices.size() * per);
  for (size_t k = 0; k < indices.size(); ++k) {
    const int64_t i = indices[k];
    if (i < 0 || i >= size()) throw std::out_of_range("dataset index " + std::to_string(i) + " out of range");
    std::copy_n(pixels.begin() + i * per, per, out.begin() + static_cast<int64_t>(k) * per);
  }
  return Tensor::from({static_cast<int64_t>(indices.size()), channels, height, width}, std::move(out));
}

Tensor Dataset::images() const { return Tensor::from({size(), channels, height, width}, pixels); }

std::vector<int64_t> Dataset::batch_labels(const std::vector<int64_t>& indices) const {
  std::vector<int64_t> out;
  out.reserve(indices.size());
  for (int64_t i : indices) out.push_back(labels.at(i));
  return out;
}

std::vector<int64_t> Dataset::class_histogram() const {
  std::vector<int64_t> h(num_classes, 0);
  for (int64_t y : labels) ++h.at(y);
  return h;
}

namespace {

constexpr const char* kShapeNames[kShapeKinds] = {"disk",    "square",  "plus",  "triangle", "ring",
                                                  "diamond", "saltire", "frame", "h-ellipse", "v-ellipse"};

bool inside(int kind, float dy, float dx, float r) {
  const float ay = std::abs(dy), ax = std::abs(dx);
  const float d2 = dx * dx + dy * dy;
  switch (kind) {
    case 0:
      return d2 <= r * r;
    case 1:
      return std::max(ax, ay) <= 0.8f * r;
    case 2:
      return (ax <= r / 3.0f && ay <= r) || (ay <= r / 3.0f && ax <= r);
    case 3:
      return dy >= -r && dy <= 0.75f * r && ax <= 0.55f * (dy + r);
    case 4:
      return d2 <= r * r && d2 >= 0.3f * r * r;
    case 5:
      return ax + ay <= r;
    case 6:
      return std::abs(ax - ay) <= r / 4.0f && std::max(ax, ay) <= 0.85f * r;
    case 7:
      return std::max(ax, ay) <= 0.85f * r && std::max(ax, ay) >= 0.85f * r - 2.0f;
    case 8:
      return (dx / r) * (dx / r) + (dy / (0.5f * r)) * (dy / (0.5f * r)) <= 1.0f;
    case 9:
      return (dx / (0.5f * r)) * (dx / (0.5f * r)) + (dy / r) * (dy / r) <= 1.0f;
    default:
      throw std::out_of_range("unknown shape kind " + std::to_string(kind));
  }
}

Dataset render_shapes(int64_t count, const ShapesConfig& cfg, Rng& rng) {
  Dataset d;
  const int s = cfg.image_size;
  d.channels = 3;
  d.height = d.width = s;
  d.num_classes = cfg.num_classes;
  d.pixels.resize(count * 3 * s * s);
  d.labels.resize(count);
  d.centroids.resize(count);
  for (int64_t i = 0; i < count; ++i) {
    const int kind = static_cast<int>(i % cfg.num_classes);
    const float r = static_cast<float>(rng.uniform(cfg.min_radius, cfg.max_radius));
    const float lo = r + 1.0f, hi = static_cast<float>(s) - 2.0f - r;
    const float cy = static_cast<float>(rng.uniform(lo, hi));
    const float cx = static_cast<float>(rng.uniform(lo, hi));
    std::array<float, 3> color{};
    for (auto& c : color) c = static_cast<float>(rng.uniform(0.55, 1.0));
    const auto mask = shape_mask(kind, s, cy, cx, r);
    double sr = 0.0, sc = 0.0;
    int64_t on = 0;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        if (!mask[y * s + x]) continue;
        sr += y;
        sc += x;
        ++on;
      }
    }
    if (on == 0) throw std::logic_error("render_shapes: empty shape mask");
    d.labels[i] = kind;
    d.centroids[i] = {static_cast<float>(sr / on), static_cast<float>(sc / on)};
    float* img = d.pixels.data() + i * 3 * s * s;
    for (int c = 0; c < 3; ++c) {
      for (int p = 0; p < s * s; ++p) {
        const float v = (mask[p] ? color[c] : 0.0f) + cfg.noise_std * static_cast<float>(rng.normal());
        img[c * s * s + p] = std::clamp(2.0f * v - 1.0f, -1.0f, 1.0f);
      }
    }
  }
  return d;
}

}  // namespace

const char* shape_name(int kind) {
  if (kind < 0 || kind >= kShapeKinds) throw std::out_of_range("unknown shape kind " + std::to_string(kind));
  return kShapeNames[kind];
}

std::vector<uint8_t> shape_mask(int kind, int size, float cy, float cx, float radius) {
  std::vector<uint8_t> m(static_cast<size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) m[y * size + x] = inside(kind, y - cy, x - cx, radius) ? 1 : 0;
  }
  return m;
}

ShapesDataset generate_shapes(const ShapesConfig& config) {
  if (config.num_classes < 2 || config.num_classes > kShapeKinds) {
    throw std::invalid_argument("generate_shapes: num_classes must lie in [2, " + std::to_string(kShapeKinds) + "]");
  }
  if (config.train_size < 0 || config.test_size < 0) throw std::invalid_argument("generate_shapes: negative size");
  if (!(config.min_radius > 0.0f && config.max_radius >= config.min_radius) ||
      config.image_size < 2.0f * config.max_radius + 4.0f) {
    throw std::invalid_argument("generate_shapes: radius range does not fit the image");
  }
  Rng rng(config.seed);
  ShapesDataset out;
  out.train = render_shapes(config.train_size, config, rng);
  out.test = render_shapes(config.test_size, config, rng);
  return out;
}

// ---------------------------------------------------------------------------

Dataset read_cifar10_file(const std::filesystem::path& path, const Cifar10Normalization& norm) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const int64_t total = static_cast<int64_t>(bytes.size());
  if (total % kCifarRecordBytes != 0) {
    const int64_t offset = total / kCifarRecordBytes * kCifarRecordBytes;
    throw FormatError(path.string() + ": truncated record at byte offset " + std::to_string(offset) + " (" +
                      std::to_string(total - offset) + " of " + std::to_string(kCifarRecordBytes) + " bytes)");
  }
  Dataset d;
  const int64_t n = total / kCifarRecordBytes;
  d.pixels.resize(n * 3072);
  d.labels.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError(path.string() + ": label " + std::to_string(rec[0]) + " at byte offset " +
                        std::to_string(i * kCifarRecordBytes) + " is outside [0, 9]");
    }
    d.labels[i] = rec[0];
    for (int c = 0; c < 3; ++c) {
      for (int p = 0; p < 1024; ++p) {
        const float v = static_cast<float>(rec[1 + c * 1024 + p]) / 255.0f;
        d.pixels[i * 3072 + c * 1024 + p] = (v - norm.mean[c]) / norm.std[c];
      }
    }
  }
  return d;
}

Dataset read_cifar10(const std::filesystem::path& dir, const std::string& split, const Cifar10Normalization& norm) {
  std::vector<std::string> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
  } else if (split == "test") {
    files.push_back("test_batch.bin");
  } else {
    throw std::invalid_argument("read_cifar10: split must be 'train' or 'test', got '" + split + "'");
  }
  Dataset all;
  for (const auto& f : files) {
    Dataset part = read_cifar10_file(dir / f, norm);
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  return all;
}

void write_cifar10_file(const std::filesystem::path& path, const std::vector<uint8_t>& labels,
                        const std::vector<uint8_t>& pixels) {
  if (pixels.size() != labels.size() * 3072) throw std::invalid_argument("write_cifar10_file: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (size_t i = 0; i < labels.size(); ++i) {
    out.put(static_cast<char>(labels[i]));
    out.write(reinterpret_cast<const char*>(pixels.data() + i * 3072), 3072);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

void update_running_stats(LayerGraph& graph, const BatchStatsRecord& stats, float momentum) {
  size_t k = 0;
  for (auto& l : graph.layers) {
    if (l.kind != LayerKind::kBatchNorm) continue;
    if (k >= stats.layers.size()) throw ShapeError("update_running_stats: fewer records than BN layers");
    const BnStats& s = stats.layers[k++];
    auto rm = l.buffers.at("running_mean").mutable_data();
    auto rs = l.buffers.at("running_std").mutable_data();
    const auto bm = s.mean.data();
    const auto bs = s.std.data();
    for (size_t c = 0; c < rm.size(); ++c) {
      rm[c] = (1.0f - momentum) * rm[c] + momentum * bm[c];
      rs[c] = (1.0f - momentum) * rs[c] + momentum * bs[c];
    }
  }
  if (k != stats.layers.size()) throw ShapeError("update_running_stats: more records than BN layers");
}

LayerGraph pretrain_teacher(const Dataset& train, const std::string& spec, const PretrainConfig& config,
                            const std::function<void(const PretrainEpoch&)>& on_epoch) {
  if (train.size() < 2) throw std::invalid_argument("pretrain_teacher: need at least 2 samples");
  if (config.batch_size < 2) throw std::invalid_argument("pretrain_teacher: batch_size must be >= 2");
  LayerGraph g = build_target_net(spec, train.num_classes, config.seed);
  Sgd opt(g.parameters(), config.lr, config.momentum, config.weight_decay);
  Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int64_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_lr(scheduled_lr(config.lr, epoch, config.epochs, 2));
    rng.shuffle(order);
    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0, batches = 0;
    for (int64_t start = 0; start + config.batch_size <= train.size(); start += config.batch_size) {
      std::vector<int64_t> idx(order.begin() + start, order.begin() + start + config.batch_size);
      const auto y = train.batch_labels(idx);
      ForwardResult r = g.forward(train.batch(idx), Mode::kTrain);
      Tensor loss = ce_loss(r.logits, y);
      opt.zero_grad();
      loss.backward();
      opt.step();
      update_running_stats(g, r.stats, config.bn_momentum);
      loss_sum += loss.item();
      ++batches;
      const auto pred = argmax_rows(r.logits);
      for (size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
      seen += static_cast<int64_t>(y.size());
    }
    if (on_epoch) {
      on_epoch({epoch, batches ? loss_sum / batches : 0.0, seen ? static_cast<double>(correct) / seen : 0.0});
    }
  }
  opt.zero_grad();
  g.mode = Mode::kEval;
  return g;
}

void export_sample_ppm(const Tensor& images, int64_t index, const std::filesystem::path& path) {
  if (images.ndim() != 4 || images.dim(1) != 3) throw ShapeError("export_sample_ppm: expects N x 3 x H x W");
  const int64_t h = images.dim(2), w = images.dim(3);
  Image8 img{static_cast<int>(w), static_cast<int>(h), 3, std::vector<uint8_t>(h * w * 3)};
  const auto v = images.data().subspan(index * 3 * h * w, 3 * h * w);
  for (int64_t c = 0; c < 3; ++c) {
    for (int64_t p = 0; p < h * w; ++p) {
      const float u = std::clamp((v[c * h * w + p] + 1.0f) * 0.5f, 0.0f, 1.0f);
      img.pixels[p * 3 + c] = static_cast<uint8_t>(std::lround(u * 255.0f));
    }
  }
  write_ppm(img, path);
}

}  // namespace acq
