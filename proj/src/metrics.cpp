#include "acq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "acq/attention.hpp"

namespace acq {

StoredStats to_stored(const BatchStatsRecord& stats) {
  StoredStats s;
  for (const auto& l : stats.layers) {
    s.names.push_back(l.layer);
    s.mean.push_back(l.mean.to_vector());
    s.std.push_back(l.std.to_vector());
  }
  return s;
}

double bns_error(const StoredStats& a, const StoredStats& b) {
  if (a.mean.size() != b.mean.size() || a.std.size() != b.std.size() || a.mean.size() != a.std.size()) {
    throw ShapeError("bns_error: " + std::to_string(a.mean.size()) + " vs " + std::to_string(b.mean.size()) +
                     " BN layers");
  }
  double acc = 0.0;
  int64_t count = 0;
  for (size_t l = 0; l < a.mean.size(); ++l) {
    if (a.mean[l].size() != b.mean[l].size() || a.std[l].size() != b.std[l].size()) {
      throw ShapeError("bns_error: channel mismatch at BN layer " + std::to_string(l));
    }
    for (size_t c = 0; c < a.mean[l].size(); ++c) acc += std::abs(static_cast<double>(a.mean[l][c]) - b.mean[l][c]);
    for (size_t c = 0; c < a.std[l].size(); ++c) acc += std::abs(static_cast<double>(a.std[l][c]) - b.std[l][c]);
    count += static_cast<int64_t>(a.mean[l].size() + a.std[l].size());
  }
  if (count == 0) throw ShapeError("bns_error: no statistics");
  return acc / static_cast<double>(count);
}

double bns_error(const BatchStatsRecord& stats, const StoredStats& stored) { return bns_error(to_stored(stats), stored); }

double accuracy(const LayerGraph& graph, const Dataset& data, Mode mode, int batch_size) {
  if (batch_size < 1 || (mode == Mode::kTrain && batch_size < 2)) throw std::invalid_argument("accuracy: bad batch size");
  int64_t correct = 0, seen = 0;
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const int64_t end = std::min<int64_t>(start + batch_size, data.size());
    if (mode == Mode::kTrain && end - start < 2) break;
    std::vector<int64_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = argmax_rows(graph.forward(data.batch(idx), mode).logits);
    for (size_t i = 0; i < idx.size(); ++i) correct += pred[i] == data.labels[idx[i]];
    seen += end - start;
  }
  if (seen == 0) throw std::invalid_argument("accuracy: empty dataset");
  return static_cast<double>(correct) / static_cast<double>(seen);
}

namespace {

Tensor slice_rows(const Tensor& x, int64_t start, int64_t end) {
  std::vector<int64_t> idx(end - start);
  std::iota(idx.begin(), idx.end(), start);
  return index_select(x, 0, idx);
}

}  // namespace

LabeledSamples select_eval_correct(const LayerGraph& teacher, const LabeledSamples& pool, int64_t max_count,
                                   int batch_size) {
  std::vector<int64_t> keep;
  for (int64_t start = 0; start < pool.size() && static_cast<int64_t>(keep.size()) < max_count; start += batch_size) {
    const int64_t end = std::min<int64_t>(start + batch_size, pool.size());
    const auto pred = argmax_rows(teacher.forward(slice_rows(pool.images, start, end), Mode::kEval).logits);
    for (int64_t i = start; i < end && static_cast<int64_t>(keep.size()) < max_count; ++i) {
      if (pred[i - start] == pool.labels[i]) keep.push_back(i);
    }
  }
  LabeledSamples out;
  if (keep.empty()) return out;
  out.images = index_select(pool.images, 0, keep);
  for (int64_t i : keep) out.labels.push_back(pool.labels[i]);
  return out;
}

LabeledSamples synthesize(const GeneratorNet& generator, Rng& rng, int64_t count, int batch_size,
                          std::vector<int64_t>* positions) {
  const auto& cfg = generator.config();
  std::vector<Tensor> parts;
  LabeledSamples out;
  for (int64_t done = 0; done < count;) {
    // Class-conditional BN needs two samples; a lone trailing sample is drawn in a pair.
    const int64_t n = std::min<int64_t>(batch_size, count - done);
    const int64_t drawn = std::max<int64_t>(n, 2);
    std::vector<int64_t> y(drawn), p(drawn);
    for (auto& v : y) v = rng.uniform_int(0, cfg.num_classes);
    for (auto& v : p) v = rng.uniform_int(0, cfg.positions());
    Tensor z = rng.normal_tensor({drawn, cfg.z_dim});
    Tensor x = generator.generate(z, y, p).detach();
    if (drawn != n) {
      x = index_select(x, 0, {0});
      y.resize(n);
      p.resize(n);
    }
    parts.push_back(x);
    out.labels.insert(out.labels.end(), y.begin(), y.end());
    if (positions) positions->insert(positions->end(), p.begin(), p.end());
    done += n;
  }
  if (!parts.empty()) out.images = concat(parts, 0);
  return out;
}

nlohmann::json ModeConsistencyReport::to_json() const {
  return {{"acc_eval", acc_eval},           {"acc_train", acc_train},         {"bns_err_eval", bns_err_eval},
          {"bns_err_train", bns_err_train}, {"attention_mae", attention_mae}, {"samples", samples},
          {"batch_size", batch_size}};
}

ModeConsistencyReport mode_consistency(const LayerGraph& teacher, const LabeledSamples& samples, int batch_size) {
  if (batch_size < 2) throw std::invalid_argument("mode_consistency: batch_size must be >= 2");
  if (samples.size() < batch_size) {
    throw std::invalid_argument("mode_consistency: " + std::to_string(samples.size()) +
                                " samples is fewer than one batch of " + std::to_string(batch_size));
  }
  const StoredStats stored = teacher.stored_stats();
  ModeConsistencyReport r;
  r.batch_size = batch_size;
  const int64_t batches = samples.size() / batch_size;
  int64_t correct_eval = 0, correct_train = 0;
  double map_mae = 0.0;
  for (int64_t b = 0; b < batches; ++b) {
    Tensor x = slice_rows(samples.images, b * batch_size, (b + 1) * batch_size);
    ForwardResult fe = teacher.forward(x, Mode::kEval);
    ForwardResult ft = teacher.forward(x, Mode::kTrain);
    const auto pe = argmax_rows(fe.logits), pt = argmax_rows(ft.logits);
    for (int64_t i = 0; i < batch_size; ++i) {
      const int64_t y = samples.labels[b * batch_size + i];
      correct_eval += pe[i] == y;
      correct_train += pt[i] == y;
    }
    r.bns_err_eval += bns_error(fe.stats, stored);
    r.bns_err_train += bns_error(ft.stats, stored);
    const auto me = attention_maps(fe.backbone, Mode::kEval);
    const auto mt = attention_maps(ft.backbone, Mode::kTrain);
    for (size_t i = 0; i < me.size(); ++i) map_mae += map_distance(mt[i], me[i]);
  }
  r.samples = batches * batch_size;
  r.acc_eval = static_cast<double>(correct_eval) / static_cast<double>(r.samples);
  r.acc_train = static_cast<double>(correct_train) / static_cast<double>(r.samples);
  r.bns_err_eval /= static_cast<double>(batches);
  r.bns_err_train /= static_cast<double>(batches);
  r.attention_mae = map_mae / static_cast<double>(r.samples);
  return r;
}

nlohmann::json ControllabilityReport::to_json() const {
  return {{"hit_rate", hit_rate}, {"control_rate", control_rate}, {"samples", samples}, {"radius", radius}};
}

ControllabilityReport attention_controllability(const GeneratorNet& generator, const LayerGraph& teacher,
                                                int64_t count, uint64_t seed, int batch_size, int radius) {
  if (count < 1) throw std::invalid_argument("attention_controllability: count must be positive");
  Rng rng(seed);
  std::vector<int64_t> positions;
  LabeledSamples s = synthesize(generator, rng, count, batch_size, &positions);
  std::vector<Cell> centers;
  for (int64_t start = 0; start < count; start += batch_size) {
    const int64_t end = std::min<int64_t>(start + batch_size, count);
    const auto maps = attention_maps(teacher.forward(slice_rows(s.images, start, end), Mode::kEval).backbone);
    for (const auto& m : maps) centers.push_back(m.center);
  }
  std::vector<int64_t> shuffled = positions;
  rng.shuffle(shuffled);
  const int g = generator.config().grid;
  auto hit = [&](Cell c, int64_t p) {
    const Cell t = p_to_cell(p, g, g);
    return std::max(std::abs(c.row - t.row), std::abs(c.col - t.col)) <= radius;
  };
  int64_t hits = 0, control = 0;
  for (int64_t i = 0; i < count; ++i) {
    hits += hit(centers[i], positions[i]);
    control += hit(centers[i], shuffled[i]);
  }
  ControllabilityReport r;
  r.samples = count;
  r.radius = radius;
  r.hit_rate = static_cast<double>(hits) / static_cast<double>(count);
  r.control_rate = static_cast<double>(control) / static_cast<double>(count);
  return r;
}

}  // namespace acq
