#pragma once

#include <vector>

#include "acq/tensor.hpp"

namespace acq {

/// First-order optimizer over a fixed list of leaf tensors.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, double lr);
  virtual ~Optimizer() = default;

  /// Applies one update from the accumulated gradients (missing grads count as zero).
  virtual void step() = 0;
  void zero_grad();
  /// Rescales all gradients so their joint L2 norm is at most max_norm; returns the norm before scaling.
  double clip_grad_norm(double max_norm);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const std::vector<Tensor>& params() const { return params_; }

 protected:
  std::vector<Tensor> params_;
  double lr_;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step() override;

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Gradient descent with heavy-ball momentum.
class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<Tensor> params, double lr, double momentum = 0.9, double weight_decay = 0.0);
  void step() override;

 private:
  double momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

/// base * 0.1^floor(epoch * decays / epochs): `decays` tenfold drops spread evenly over the run.
double scheduled_lr(double base, int epoch, int epochs, int decays = 4);

}  // namespace acq
