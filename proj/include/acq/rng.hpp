#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "acq/tensor.hpp"

namespace acq {

/// Seeded random stream. The engine's output sequence is fixed by the C++
/// standard and the float conversions below are hand-written, so a seed yields
/// the same draws on every conforming platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi).
  int64_t uniform_int(int64_t lo, int64_t hi);
  /// Standard normal via the Marsaglia polar method.
  double normal();

  Tensor normal_tensor(Shape shape, float mean = 0.0f, float std = 1.0f);
  Tensor uniform_tensor(Shape shape, float lo, float hi);

  /// Derives an independent stream (for per-run or per-worker use).
  Rng fork();

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i)))]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace acq
