#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acq/tensor.hpp"

namespace acq {

enum class Granularity { kPerLayer, kPerChannel };

/// Asymmetric uniform quantizer parameters for one quantization site.
///
/// q = clip(round(x / s - b), -2^(n-1), 2^(n-1) - 1) and x_fake = (q + b) * s,
/// with s = (u - l) / (2^n - 1) and b = l / s + 2^(n-1). Per-channel sites keep
/// one (l, u) pair per slice along axis 0.
class QuantizerState {
 public:
  QuantizerState() = default;
  QuantizerState(int bits, Granularity granularity, int64_t channels = 1);

  /// Frozen quantizer with explicit bounds (one pair per channel).
  static QuantizerState with_bounds(int bits, Granularity granularity, std::vector<float> lower,
                                    std::vector<float> upper);

  /// Folds x into the running min/max. Per-channel sites slice along axis 0.
  void observe(const Tensor& x);
  /// Fixes (l, u) from the observers. Throws when nothing was observed or u <= l.
  void freeze(const std::string& site = "quantizer");

  bool frozen() const { return frozen_; }
  bool observed() const { return observed_; }
  int bits() const { return bits_; }
  Granularity granularity() const { return granularity_; }
  int64_t channels() const { return static_cast<int64_t>(lower_.size()); }
  int qmin() const { return -(1 << (bits_ - 1)); }
  int qmax() const { return (1 << (bits_ - 1)) - 1; }

  const std::vector<float>& lower() const { return lower_; }
  const std::vector<float>& upper() const { return upper_; }
  const std::vector<float>& observer_min() const { return obs_min_; }
  const std::vector<float>& observer_max() const { return obs_max_; }
  double scale(int64_t channel = 0) const;
  double offset(int64_t channel = 0) const;

  /// Restores a state verbatim (archive loading).
  static QuantizerState restore(int bits, Granularity granularity, bool frozen, bool observed,
                                std::vector<float> lower, std::vector<float> upper, std::vector<float> obs_min,
                                std::vector<float> obs_max);

 private:
  int bits_ = 8;
  Granularity granularity_ = Granularity::kPerLayer;
  bool frozen_ = false;
  bool observed_ = false;
  std::vector<float> lower_, upper_;
  std::vector<float> obs_min_, obs_max_;
};

/// Fake quantization with a straight-through gradient: 1 where l <= x <= u, else 0.
Tensor fake_quantize(const Tensor& x, const QuantizerState& state);

/// Parsed `NwMa` bit-width string.
struct BitWidths {
  int weight = 4;
  int activation = 4;
};

/// Parses e.g. "4w4a". Throws std::invalid_argument on malformed input.
BitWidths parse_bit_widths(const std::string& text);
std::string format_bit_widths(BitWidths bits);

}  // namespace acq
