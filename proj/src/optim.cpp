#include "acq/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace acq {

Optimizer::Optimizer(std::vector<Tensor> params, double lr) : params_(std::move(params)), lr_(lr) {
  for (const auto& p : params_) {
    if (!p.defined() || !p.requires_grad()) throw std::invalid_argument("optimizer: parameters must require grad");
  }
  if (!(lr >= 0.0)) throw std::invalid_argument("optimizer: learning rate must be nonnegative");
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double Optimizer::clip_grad_norm(double max_norm) {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (float g : p.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (float& g : p.mutable_grad()) g = static_cast<float>(g * k);
    }
  }
  return norm;
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : Optimizer(std::move(params), lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * g[i];
      w[i] = static_cast<float>(w[i] - lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  }
}

Sgd::Sgd(std::vector<Tensor> params, double lr, double momentum, double weight_decay)
    : Optimizer(std::move(params), lr), momentum_(momentum), weight_decay_(weight_decay) {
  for (const auto& p : params_) velocity_.emplace_back(p.numel(), 0.0);
}

void Sgd::step() {
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& vel = velocity_[k];
    for (size_t i = 0; i < w.size(); ++i) {
      const double d = g[i] + weight_decay_ * w[i];
      vel[i] = momentum_ * vel[i] + d;
      w[i] = static_cast<float>(w[i] - lr_ * vel[i]);
    }
  }
}

double scheduled_lr(double base, int epoch, int epochs, int decays) {
  if (epochs < 1 || epoch < 0 || decays < 0) throw std::invalid_argument("scheduled_lr: invalid schedule");
  const long k = static_cast<long>(epoch) * decays / epochs;
  return base * std::pow(0.1, static_cast<double>(k));
}

}  // namespace acq
