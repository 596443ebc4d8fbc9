#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "acq/rng.hpp"
#include "acq/tensor.hpp"

namespace acq::testutil {

/// Norm-wise relative error between the analytic gradient of f and central
/// differences, over every element of every leaf.
inline double grad_rel_error(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double h = 1e-3) {
  for (auto& t : leaves) t.zero_grad();
  f().backward();
  std::vector<double> analytic, numeric;
  for (auto& t : leaves) {
    if (t.has_grad()) {
      for (float g : t.grad()) analytic.push_back(g);
    } else {
      analytic.insert(analytic.end(), static_cast<size_t>(t.numel()), 0.0);
    }
  }
  for (auto& t : leaves) {
    auto d = t.mutable_data();
    for (size_t i = 0; i < d.size(); ++i) {
      const float v = d[i];
      const float vp = static_cast<float>(v + h), vm = static_cast<float>(v - h);
      d[i] = vp;
      const double fp = f().item();
      d[i] = vm;
      const double fm = f().item();
      d[i] = v;
      numeric.push_back((fp - fm) / (static_cast<double>(vp) - vm));
    }
  }
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-12);
  return std::sqrt(diff) / scale;
}

/// Random weights w so that sum(w * x) turns any output into a scalar root.
inline Tensor project(const Tensor& x, uint64_t seed) {
  Rng rng(seed);
  return sum(x * rng.uniform_tensor(x.shape(), -1.0f, 1.0f));
}

/// Normal tensor whose entries stay at least `gap` away from zero.
inline Tensor away_from_zero(Rng& rng, Shape shape, float gap = 0.05f, bool requires_grad = true) {
  Tensor t = rng.normal_tensor(std::move(shape));
  for (auto& v : t.mutable_data()) {
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  }
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace acq::testutil
