#include "acq/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "acq/digest.hpp"
#include "acq/rng.hpp"

namespace acq {

const char* mode_name(Mode mode) { return mode == Mode::kEval ? "eval" : "train"; }

namespace {

constexpr std::pair<LayerKind, const char*> kKindNames[] = {
    {LayerKind::kConv, "conv"},         {LayerKind::kLinear, "linear"}, {LayerKind::kBatchNorm, "batchnorm"},
    {LayerKind::kRelu, "relu"},         {LayerKind::kAdd, "add"},       {LayerKind::kGlobalAvgPool, "global_avg_pool"},
};

}  // namespace

const char* layer_kind_name(LayerKind kind) {
  for (const auto& [k, n] : kKindNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& name) {
  for (const auto& [k, n] : kKindNames) {
    if (name == n) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                  const Tensor& running_std, Mode mode, BnStats* stats) {
  if (x.ndim() != 4) throw ShapeError("batch_norm: expects N x C x H x W, got " + shape_str(x.shape()));
  const int64_t c = x.dim(1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batch_norm: affine parameters " + shape_str(gamma.shape()) + " do not match " +
                     shape_str(x.shape()));
  }
  if (mode == Mode::kTrain && x.dim(0) < 2) throw std::invalid_argument("batch_norm: train mode needs batch size >= 2");
  Tensor mu = mean(x, {0, 2, 3});
  Tensor sd = sqrt(variance(x, {0, 2, 3}) + kBnEpsilon);
  if (stats) {
    stats->mean = mu;
    stats->std = sd;
  }
  Tensor center = mode == Mode::kTrain ? mu : running_mean;
  Tensor spread = mode == Mode::kTrain ? sd : running_std;
  Tensor scale = gamma / spread;
  Tensor shift = beta - center * scale;
  return x * reshape(scale, {1, c, 1, 1}) + reshape(shift, {1, c, 1, 1});
}

Tensor class_conditional_bn(const Tensor& x, const Tensor& gamma_table, const Tensor& beta_table,
                            const std::vector<int64_t>& labels) {
  if (x.ndim() != 4) throw ShapeError("class_conditional_bn: expects N x C x H x W, got " + shape_str(x.shape()));
  const int64_t n = x.dim(0), c = x.dim(1);
  if (gamma_table.ndim() != 2 || gamma_table.dim(1) != c || beta_table.shape() != gamma_table.shape()) {
    throw ShapeError("class_conditional_bn: tables " + shape_str(gamma_table.shape()) + " do not match " +
                     shape_str(x.shape()));
  }
  if (static_cast<int64_t>(labels.size()) != n) throw ShapeError("class_conditional_bn: one label per sample");
  for (int64_t y : labels) {
    if (y < 0 || y >= gamma_table.dim(0)) {
      throw std::out_of_range("class_conditional_bn: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(gamma_table.dim(0)) + ")");
    }
  }
  if (n < 2) throw std::invalid_argument("class_conditional_bn: needs batch size >= 2");
  Tensor mu = reshape(mean(x, {0, 2, 3}), {1, c});
  Tensor sd = reshape(sqrt(variance(x, {0, 2, 3}) + kBnEpsilon), {1, c});
  Tensor scale = embedding(gamma_table, labels) / sd;
  Tensor shift = embedding(beta_table, labels) - mu * scale;
  return x * reshape(scale, {n, c, 1, 1}) + reshape(shift, {n, c, 1, 1});
}

// ---------------------------------------------------------------------------

ForwardResult LayerGraph::run(const Tensor& x, Mode run_mode, ForwardOptions opt,
                              const std::function<void(size_t, const Tensor&)>& on_activation) const {
  if (x.ndim() != 4) throw ShapeError("forward: expects N x C x H x W input, got " + shape_str(x.shape()));
  if (run_mode == Mode::kTrain && x.dim(0) < 2) throw std::invalid_argument("forward: train mode needs batch size >= 2");
  std::vector<Tensor> outs(layers.size());
  ForwardResult res;
  auto input_of = [&](const Layer& l, size_t k) -> const Tensor& { return l.inputs[k] < 0 ? x : outs[l.inputs[k]]; };
  auto quantized_input = [&](size_t i, const Layer& l) {
    const Tensor& in = input_of(l, 0);
    if (!l.act_quant) return in;
    if (on_activation) {
      on_activation(i, in);
      return in;
    }
    return l.act_quant->frozen() ? fake_quantize(in, *l.act_quant) : in;
  };
  auto weight_of = [](const Layer& l) {
    const Tensor& w = l.params.at("weight");
    return l.weight_quant && l.weight_quant->frozen() ? fake_quantize(w, *l.weight_quant) : w;
  };

  for (size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    switch (l.kind) {
      case LayerKind::kConv: {
        auto it = l.params.find("bias");
        outs[i] = conv2d(quantized_input(i, l), weight_of(l), it == l.params.end() ? Tensor() : it->second,
                         {l.stride, l.padding});
        break;
      }
      case LayerKind::kLinear: {
        Tensor in = quantized_input(i, l);
        if (in.ndim() != 2) in = reshape(in, {in.dim(0), in.numel() / in.dim(0)});
        outs[i] = matmul(in, weight_of(l), true) + l.params.at("bias");
        break;
      }
      case LayerKind::kBatchNorm: {
        const Tensor& in = input_of(l, 0);
        if (opt.capture_bn_inputs) res.bn_inputs.push_back(in);
        BnStats st{l.name, {}, {}};
        outs[i] = batch_norm(in, l.params.at("gamma"), l.params.at("beta"), l.buffers.at("running_mean"),
                             l.buffers.at("running_std"), run_mode, &st);
        res.stats.layers.push_back(std::move(st));
        break;
      }
      case LayerKind::kRelu:
        outs[i] = relu(input_of(l, 0));
        break;
      case LayerKind::kAdd:
        outs[i] = input_of(l, 0) + input_of(l, 1);
        break;
      case LayerKind::kGlobalAvgPool:
        outs[i] = mean(input_of(l, 0), {2, 3});
        break;
    }
  }
  res.logits = outs.back();
  if (backbone_index >= 0) res.backbone = outs[backbone_index];
  return res;
}

ForwardResult LayerGraph::forward(const Tensor& x, Mode run_mode, ForwardOptions opt) const {
  return run(x, run_mode, opt, nullptr);
}

ForwardResult LayerGraph::calibrate(const Tensor& x) {
  return run(x, Mode::kEval, {}, [this](size_t i, const Tensor& in) {
    auto& q = layers[i].act_quant;
    if (!q->frozen()) q->observe(in);
  });
}

std::vector<Tensor> LayerGraph::parameters() const {
  std::vector<Tensor> ps;
  for (const auto& l : layers) {
    for (const auto& [_, t] : l.params) ps.push_back(t);
  }
  return ps;
}

int64_t LayerGraph::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

StoredStats LayerGraph::stored_stats() const {
  StoredStats s;
  for (const auto& l : layers) {
    if (l.kind != LayerKind::kBatchNorm) continue;
    s.names.push_back(l.name);
    s.mean.push_back(l.buffers.at("running_mean").to_vector());
    s.std.push_back(l.buffers.at("running_std").to_vector());
  }
  return s;
}

std::string LayerGraph::bn_digest() const {
  Sha256 h;
  for (const auto& l : layers) {
    if (l.kind != LayerKind::kBatchNorm) continue;
    h.update(l.name);
    h.update(l.buffers.at("running_mean").data());
    h.update(l.buffers.at("running_std").data());
  }
  return h.hex();
}

std::string LayerGraph::digest() const {
  Sha256 h;
  for (const auto& l : layers) {
    h.update(l.name);
    for (const auto& [k, t] : l.params) {
      h.update(k);
      h.update(t.data());
    }
    for (const auto& [k, t] : l.buffers) {
      h.update(k);
      h.update(t.data());
    }
    for (const auto* q : {&l.weight_quant, &l.act_quant}) {
      if (*q && (*q)->frozen()) {
        h.update(std::span<const float>((*q)->lower()));
        h.update(std::span<const float>((*q)->upper()));
      }
    }
  }
  return h.hex();
}

LayerGraph LayerGraph::clone() const {
  LayerGraph g = *this;
  for (auto& l : g.layers) {
    for (auto& [_, t] : l.params) t = t.clone();
    for (auto& [_, t] : l.buffers) t = t.clone();
  }
  return g;
}

int LayerGraph::bn_count() const {
  return static_cast<int>(std::count_if(layers.begin(), layers.end(),
                                        [](const Layer& l) { return l.kind == LayerKind::kBatchNorm; }));
}

const Layer& LayerGraph::layer(const std::string& name) const {
  for (const auto& l : layers) {
    if (l.name == name) return l;
  }
  throw std::out_of_range("no layer named '" + name + "'");
}

Layer& LayerGraph::layer(const std::string& name) {
  return const_cast<Layer&>(static_cast<const LayerGraph&>(*this).layer(name));
}

// ---------------------------------------------------------------------------
// Architectures

namespace {

class NetBuilder {
 public:
  explicit NetBuilder(uint64_t seed) : rng_(seed) {}

  int conv(const std::string& name, int from, int64_t cin, int64_t cout, int k, int stride) {
    Layer l{LayerKind::kConv, name, {from}};
    const float std = std::sqrt(2.0f / static_cast<float>(cin * k * k));
    l.params["weight"] = rng_.normal_tensor({cout, cin, k, k}, 0.0f, std).set_requires_grad(true);
    l.stride = stride;
    l.padding = k / 2;
    return push(std::move(l));
  }

  int bn(const std::string& name, int from, int64_t c) {
    Layer l{LayerKind::kBatchNorm, name, {from}};
    l.params["gamma"] = Tensor::full({c}, 1.0f, true);
    l.params["beta"] = Tensor::zeros({c}, true);
    l.buffers["running_mean"] = Tensor::zeros({c});
    l.buffers["running_std"] = Tensor::full({c}, 1.0f);
    return push(std::move(l));
  }

  int relu(const std::string& name, int from) { return push(Layer{LayerKind::kRelu, name, {from}}); }
  int add(const std::string& name, int a, int b) { return push(Layer{LayerKind::kAdd, name, {a, b}}); }
  int gap(const std::string& name, int from) { return push(Layer{LayerKind::kGlobalAvgPool, name, {from}}); }

  int linear(const std::string& name, int from, int64_t in, int64_t out) {
    Layer l{LayerKind::kLinear, name, {from}};
    const float bound = 1.0f / std::sqrt(static_cast<float>(in));
    l.params["weight"] = rng_.uniform_tensor({out, in}, -bound, bound).set_requires_grad(true);
    l.params["bias"] = rng_.uniform_tensor({out}, -bound, bound).set_requires_grad(true);
    return push(std::move(l));
  }

  int conv_bn_relu(const std::string& name, int from, int64_t cin, int64_t cout, int stride) {
    int c = conv(name + ".conv", from, cin, cout, 3, stride);
    int b = bn(name + ".bn", c, cout);
    return relu(name + ".relu", b);
  }

  // Basic residual block; 1x1 projection only when the channel count changes.
  int residual(const std::string& name, int from, int64_t cin, int64_t cout, int stride) {
    int h = conv_bn_relu(name + ".a", from, cin, cout, stride);
    int c2 = conv(name + ".b.conv", h, cout, cout, 3, 1);
    int b2 = bn(name + ".b.bn", c2, cout);
    int shortcut = from;
    if (cin != cout) {
      int p = conv(name + ".proj.conv", from, cin, cout, 1, stride);
      shortcut = bn(name + ".proj.bn", p, cout);
    } else if (stride != 1) {
      throw std::logic_error("residual: stride without channel change is not supported");
    }
    int s = add(name + ".add", b2, shortcut);
    return relu(name + ".relu", s);
  }

  std::vector<Layer> take() { return std::move(layers_); }

 private:
  int push(Layer l) {
    layers_.push_back(std::move(l));
    return static_cast<int>(layers_.size()) - 1;
  }
  Rng rng_;
  std::vector<Layer> layers_;
};

}  // namespace

std::vector<std::string> known_specs() { return {"tiny-resnet", "tiny-plain"}; }

LayerGraph build_target_net(const std::string& spec, int num_classes, uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("build_target_net: need at least 2 classes");
  NetBuilder b(seed);
  LayerGraph g;
  g.spec = spec;
  g.num_classes = num_classes;
  int tap = -1;
  int64_t width = 0;
  if (spec == "tiny-resnet") {
    // 32x32 input -> 16x16 after the stem -> 8x8 backbone grid.
    int x = b.conv_bn_relu("stem", -1, 3, 16, 2);
    x = b.residual("stage1", x, 16, 16, 1);
    x = b.residual("stage2", x, 16, 32, 2);
    tap = b.residual("stage3", x, 32, 32, 1);
    width = 32;
  } else if (spec == "tiny-plain") {
    int x = b.conv_bn_relu("block1", -1, 3, 16, 2);
    x = b.conv_bn_relu("block2", x, 16, 16, 1);
    x = b.conv_bn_relu("block3", x, 16, 32, 2);
    tap = b.conv_bn_relu("block4", x, 32, 32, 1);
    width = 32;
  } else {
    std::string known;
    for (const auto& s : known_specs()) known += (known.empty() ? "" : ", ") + s;
    throw std::invalid_argument("unknown architecture spec '" + spec + "' (known: " + known + ")");
  }
  int pooled = b.gap("pool", tap);
  b.linear("fc", pooled, width, num_classes);
  g.layers = b.take();
  g.backbone_index = tap;
  g.mode = Mode::kEval;
  return g;
}

LayerGraph quantize_graph(const LayerGraph& fp, BitWidths bits, bool quantize_first_last) {
  for (int b : {bits.weight, bits.activation}) {
    if (b < 2 || b > 8) {
      throw std::invalid_argument("quantize_graph: bit width " + std::to_string(b) + " outside [2, 8]");
    }
  }
  LayerGraph q = fp.clone();
  int first = -1, last = -1;
  for (size_t i = 0; i < q.layers.size(); ++i) {
    const LayerKind k = q.layers[i].kind;
    if (k == LayerKind::kConv || k == LayerKind::kLinear) {
      if (first < 0) first = static_cast<int>(i);
      last = static_cast<int>(i);
    }
  }
  for (size_t i = 0; i < q.layers.size(); ++i) {
    Layer& l = q.layers[i];
    if (l.kind != LayerKind::kConv && l.kind != LayerKind::kLinear) continue;
    if (!quantize_first_last && (static_cast<int>(i) == first || static_cast<int>(i) == last)) continue;
    const Tensor& w = l.params.at("weight");
    QuantizerState wq(bits.weight, Granularity::kPerChannel, w.dim(0));
    wq.observe(w);
    wq.freeze(l.name + ".weight");
    l.weight_quant = std::move(wq);
    l.act_quant = QuantizerState(bits.activation, Granularity::kPerLayer);
  }
  return q;
}

std::vector<std::string> open_activation_sites(const LayerGraph& graph) {
  std::vector<std::string> out;
  for (const auto& l : graph.layers) {
    if (l.act_quant && !l.act_quant->frozen()) out.push_back(l.name);
  }
  return out;
}

void freeze_activation_quantizers(LayerGraph& graph) {
  for (auto& l : graph.layers) {
    if (!l.act_quant || l.act_quant->frozen()) continue;
    if (!l.act_quant->observed()) {
      throw std::runtime_error("activation quantizer at '" + l.name + "' was never observed");
    }
    l.act_quant->freeze(l.name + ".input");
  }
}

int64_t argmax_row(std::span<const float> row) {
  return static_cast<int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<int64_t> argmax_rows(const Tensor& logits) {
  const int64_t n = logits.dim(0), c = logits.dim(1);
  std::vector<int64_t> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = argmax_row(logits.data().subspan(i * c, c));
  return out;
}

}  // namespace acq
