#include "acq/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace acq {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (hi <= lo) throw std::invalid_argument("uniform_int: empty range");
  const uint64_t span = static_cast<uint64_t>(hi - lo);
  // Rejection sampling keeps the draw unbiased.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return lo + static_cast<int64_t>(v % span);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

Tensor Rng::normal_tensor(Shape shape, float mean, float std) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(mean + std * normal());
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor Rng::uniform_tensor(Shape shape, float lo, float hi) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(uniform(lo, hi));
  return Tensor::from(std::move(shape), std::move(v));
}

Rng Rng::fork() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

}  // namespace acq
