#include "acq/generator.hpp"

#include <cmath>
#include <stdexcept>

#include "acq/digest.hpp"
#include "acq/nn.hpp"
#include "acq/rng.hpp"

namespace acq {

const char* fusion_path_name(FusionPath path) { return path == FusionPath::kLowDim ? "lowdim" : "highdim"; }

FusionPath parse_fusion_path(const std::string& name) {
  if (name == "lowdim") return FusionPath::kLowDim;
  if (name == "highdim") return FusionPath::kHighDim;
  throw std::invalid_argument("unknown fusion path '" + name + "' (expected lowdim or highdim)");
}

void GeneratorConfig::validate() const {
  if (num_classes < 2) throw std::invalid_argument("generator: num_classes must be >= 2");
  if (z_dim < 1 || grid < 1 || init_size < 1) throw std::invalid_argument("generator: sizes must be positive");
  if (stem_channels < 1 || body_channels1 < 1 || body_channels2 < 1 || out_channels < 1) {
    throw std::invalid_argument("generator: channel counts must be positive");
  }
  if (!(label_smoothing >= 0.0f && label_smoothing < 1.0f)) {
    throw std::invalid_argument("generator: label_smoothing must lie in [0, 1)");
  }
  if (fusion == FusionPath::kHighDim) {
    if (init_size % grid != 0 || init_size / grid < 1) {
      throw std::invalid_argument("generator: stem size " + std::to_string(init_size) +
                                  " is not divisible by the position grid " + std::to_string(grid));
    }
    const int c1 = max_pool_channels < 0 ? stem_channels / 2 : max_pool_channels;
    if (c1 < 1 || c1 >= stem_channels) {
      throw std::invalid_argument("generator: max_pool_channels must split the stem channels");
    }
  }
}

GeneratorNet::GeneratorNet(const GeneratorConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int64_t c0 = config_.stem_channels, c1 = config_.body_channels1, c2 = config_.body_channels2;
  const int64_t s = config_.init_size, z = config_.z_dim, classes = config_.num_classes;
  auto kaiming = [&](int64_t cout, int64_t cin, int64_t k) {
    return rng.normal_tensor({cout, cin, k, k}, 0.0f, std::sqrt(2.0f / static_cast<float>(cin * k * k)))
        .set_requires_grad(true);
  };
  params_["class_embedding"] = rng.normal_tensor({classes, z}).set_requires_grad(true);
  if (config_.fusion == FusionPath::kLowDim) {
    params_["position_embedding"] = rng.normal_tensor({config_.positions(), z}).set_requires_grad(true);
  }
  const float bound = 1.0f / std::sqrt(static_cast<float>(z));
  params_["stem.weight"] = rng.uniform_tensor({c0 * s * s, z}, -bound, bound).set_requires_grad(true);
  params_["stem.bias"] = rng.uniform_tensor({c0 * s * s}, -bound, bound).set_requires_grad(true);
  if (config_.fusion == FusionPath::kHighDim) {
    params_["fusion.weight"] = kaiming(c0, c0 + 1, 3);
    params_["fusion.bias"] = Tensor::zeros({c0}, true);
  }
  params_["body1.conv.weight"] = kaiming(c1, c0, 3);
  params_["body1.ccbn.gamma"] = Tensor::full({classes, c1}, 1.0f, true);
  params_["body1.ccbn.beta"] = Tensor::zeros({classes, c1}, true);
  params_["body2.conv.weight"] = kaiming(c2, c1, 3);
  params_["body2.ccbn.gamma"] = Tensor::full({classes, c2}, 1.0f, true);
  params_["body2.ccbn.beta"] = Tensor::zeros({classes, c2}, true);
  params_["out.conv.weight"] = kaiming(config_.out_channels, c2, 3);
  params_["out.conv.bias"] = Tensor::zeros({config_.out_channels}, true);
}

const Tensor& GeneratorNet::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("generator has no parameter '" + name + "'");
  return it->second;
}

void GeneratorNet::check_conditions(int64_t n, const std::vector<int64_t>& labels,
                                    const std::vector<int64_t>& positions) const {
  if (static_cast<int64_t>(labels.size()) != n || static_cast<int64_t>(positions.size()) != n) {
    throw ShapeError("generator: " + std::to_string(n) + " noise rows but " + std::to_string(labels.size()) +
                     " labels and " + std::to_string(positions.size()) + " positions");
  }
  for (int64_t y : labels) {
    if (y < 0 || y >= config_.num_classes) {
      throw std::out_of_range("generator: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(config_.num_classes) + ")");
    }
  }
  for (int64_t p : positions) {
    if (p < 0 || p >= config_.positions()) {
      throw std::out_of_range("generator: position " + std::to_string(p) + " outside [0, " +
                              std::to_string(config_.positions()) + ")");
    }
  }
}

Tensor GeneratorNet::fuse_lowdim(const Tensor& z, const std::vector<int64_t>& labels,
                                 const std::vector<int64_t>& positions) const {
  if (z.ndim() != 2 || z.dim(1) != config_.z_dim) {
    throw ShapeError("generator: noise must be N x " + std::to_string(config_.z_dim) + ", got " + shape_str(z.shape()));
  }
  check_conditions(z.dim(0), labels, positions);
  if (config_.fusion != FusionPath::kLowDim) throw std::logic_error("generator: low-dim fusion is not configured");
  return (embedding(param("class_embedding"), labels) + z) * embedding(param("position_embedding"), positions);
}

Tensor GeneratorNet::stem(const Tensor& i) const {
  const int64_t s = config_.init_size;
  return reshape(matmul(i, param("stem.weight"), true) + param("stem.bias"), {i.dim(0), config_.stem_channels, s, s});
}

Tensor position_grid(const std::vector<int64_t>& positions, int h, int w, float smoothing) {
  if (!(smoothing >= 0.0f && smoothing < 1.0f)) throw std::invalid_argument("position_grid: smoothing outside [0, 1)");
  const int64_t cells = static_cast<int64_t>(h) * w, n = static_cast<int64_t>(positions.size());
  const float off = smoothing / static_cast<float>(cells);
  std::vector<float> v(n * cells, off);
  for (int64_t i = 0; i < n; ++i) {
    if (positions[i] < 0 || positions[i] >= cells) {
      throw std::out_of_range("position_grid: position " + std::to_string(positions[i]) + " outside [0, " +
                              std::to_string(cells) + ")");
    }
    v[i * cells + positions[i]] = 1.0f - smoothing + off;
  }
  return Tensor::from({n, 1, h, w}, std::move(v));
}

Tensor GeneratorNet::fuse_highdim(const Tensor& f, const std::vector<int64_t>& positions) const {
  if (config_.fusion != FusionPath::kHighDim) throw std::logic_error("generator: high-dim fusion is not configured");
  const int64_t c0 = config_.stem_channels, s = config_.init_size;
  if (f.shape() != Shape{f.dim(0), c0, s, s}) {
    throw ShapeError("generator: stem features " + shape_str(f.shape()) + " do not match the configured stem");
  }
  if (static_cast<int64_t>(positions.size()) != f.dim(0)) throw ShapeError("generator: one position per sample");
  const int g = config_.grid;
  const int64_t c1 = config_.max_pool_channels < 0 ? c0 / 2 : config_.max_pool_channels;
  std::vector<int64_t> first, second;
  for (int64_t c = 0; c < c0; ++c) (c < c1 ? first : second).push_back(c);
  Tensor f1 = adaptive_max_pool2d(index_select(f, 1, first), g, g);
  Tensor f2 = adaptive_avg_pool2d(index_select(f, 1, second), g, g);
  Tensor grid = position_grid(positions, g, g, config_.label_smoothing);
  Tensor fused = conv2d(concat({f1, f2, grid}, 1), param("fusion.weight"), param("fusion.bias"), {1, 1});
  return upsample_nearest(fused, static_cast<int>(s / g)) + f;
}

Tensor GeneratorNet::generate(const Tensor& z, const std::vector<int64_t>& labels,
                              const std::vector<int64_t>& positions) const {
  if (z.ndim() != 2 || z.dim(1) != config_.z_dim) {
    throw ShapeError("generator: noise must be N x " + std::to_string(config_.z_dim) + ", got " + shape_str(z.shape()));
  }
  check_conditions(z.dim(0), labels, positions);
  Tensor f;
  if (config_.fusion == FusionPath::kLowDim) {
    f = stem(fuse_lowdim(z, labels, positions));
  } else {
    f = fuse_highdim(stem(embedding(param("class_embedding"), labels) + z), positions);
  }
  const float slope = config_.leaky_slope;
  Tensor h = conv2d(upsample_nearest(f, 2), param("body1.conv.weight"), Tensor(), {1, 1});
  h = leaky_relu(class_conditional_bn(h, param("body1.ccbn.gamma"), param("body1.ccbn.beta"), labels), slope);
  h = conv2d(upsample_nearest(h, 2), param("body2.conv.weight"), Tensor(), {1, 1});
  h = leaky_relu(class_conditional_bn(h, param("body2.ccbn.gamma"), param("body2.ccbn.beta"), labels), slope);
  return tanh(conv2d(h, param("out.conv.weight"), param("out.conv.bias"), {1, 1}));
}

std::vector<Tensor> GeneratorNet::parameters() const {
  std::vector<Tensor> ps;
  for (const auto& [_, t] : params_) ps.push_back(t);
  return ps;
}

int64_t GeneratorNet::parameter_count() const {
  int64_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

std::string GeneratorNet::digest() const {
  Sha256 h;
  for (const auto& [k, t] : params_) {
    h.update(k);
    h.update(t.data());
  }
  return h.hex();
}

GeneratorNet GeneratorNet::clone() const {
  GeneratorNet g = *this;
  for (auto& [_, t] : g.params_) t = t.clone();
  return g;
}

}  // namespace acq
