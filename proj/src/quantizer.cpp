#include "acq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <regex>
#include <stdexcept>

namespace acq {

QuantizerState::QuantizerState(int bits, Granularity granularity, int64_t channels)
    : bits_(bits), granularity_(granularity) {
  if (bits < 2 || bits > 16) throw std::invalid_argument("quantizer: bit width must be in [2, 16]");
  if (channels < 1 || (granularity == Granularity::kPerLayer && channels != 1)) {
    throw std::invalid_argument("quantizer: invalid channel count");
  }
  lower_.assign(channels, 0.0f);
  upper_.assign(channels, 0.0f);
  obs_min_.assign(channels, std::numeric_limits<float>::infinity());
  obs_max_.assign(channels, -std::numeric_limits<float>::infinity());
}

QuantizerState QuantizerState::with_bounds(int bits, Granularity granularity, std::vector<float> lower,
                                           std::vector<float> upper) {
  if (lower.size() != upper.size() || lower.empty()) throw std::invalid_argument("quantizer: bound size mismatch");
  QuantizerState st(bits, granularity, static_cast<int64_t>(lower.size()));
  st.obs_min_ = std::move(lower);
  st.obs_max_ = std::move(upper);
  st.observed_ = true;
  st.freeze();
  return st;
}

QuantizerState QuantizerState::restore(int bits, Granularity granularity, bool frozen, bool observed,
                                       std::vector<float> lower, std::vector<float> upper,
                                       std::vector<float> obs_min, std::vector<float> obs_max) {
  QuantizerState st(bits, granularity, static_cast<int64_t>(lower.size()));
  if (upper.size() != lower.size() || obs_min.size() != lower.size() || obs_max.size() != lower.size()) {
    throw std::invalid_argument("quantizer: inconsistent restored state");
  }
  st.frozen_ = frozen;
  st.observed_ = observed;
  st.lower_ = std::move(lower);
  st.upper_ = std::move(upper);
  st.obs_min_ = std::move(obs_min);
  st.obs_max_ = std::move(obs_max);
  return st;
}

void QuantizerState::observe(const Tensor& x) {
  if (frozen_) throw std::logic_error("quantizer: cannot observe a frozen state");
  const auto v = x.data();
  const int64_t ch = channels();
  if (granularity_ == Granularity::kPerChannel && x.dim(0) != ch) {
    throw ShapeError("quantizer: per-channel observe expects " + std::to_string(ch) + " slices, got " +
                     shape_str(x.shape()));
  }
  const int64_t per = static_cast<int64_t>(v.size()) / ch;
  for (int64_t c = 0; c < ch; ++c) {
    const auto [lo, hi] = std::minmax_element(v.begin() + c * per, v.begin() + (c + 1) * per);
    obs_min_[c] = std::min(obs_min_[c], *lo);
    obs_max_[c] = std::max(obs_max_[c], *hi);
  }
  observed_ = true;
}

void QuantizerState::freeze(const std::string& site) {
  if (frozen_) return;
  if (!observed_) throw std::logic_error(site + ": freezing a quantizer that observed no data");
  for (size_t c = 0; c < obs_min_.size(); ++c) {
    if (!(obs_max_[c] > obs_min_[c])) {
      throw std::domain_error(site + ": degenerate bounds u <= l on channel " + std::to_string(c));
    }
  }
  lower_ = obs_min_;
  upper_ = obs_max_;
  frozen_ = true;
}

double QuantizerState::scale(int64_t channel) const {
  return (static_cast<double>(upper_.at(channel)) - lower_.at(channel)) / (std::ldexp(1.0, bits_) - 1.0);
}

double QuantizerState::offset(int64_t channel) const {
  return lower_.at(channel) / scale(channel) + std::ldexp(1.0, bits_ - 1);
}

Tensor fake_quantize(const Tensor& x, const QuantizerState& state) {
  if (!state.frozen()) throw std::logic_error("fake_quantize: quantizer state is not frozen");
  const int64_t ch = state.channels();
  if (state.granularity() == Granularity::kPerChannel && x.dim(0) != ch) {
    throw ShapeError("fake_quantize: expected " + std::to_string(ch) + " channels, got " + shape_str(x.shape()));
  }
  const auto in = x.data();
  const int64_t per = x.numel() / ch;
  const double qmin = state.qmin(), qmax = state.qmax();
  std::vector<float> out(in.size());
  for (int64_t c = 0; c < ch; ++c) {
    const double s = state.scale(c), b = state.offset(c);
    for (int64_t i = c * per; i < (c + 1) * per; ++i) {
      const double q = std::clamp(std::round(in[i] / s - b), qmin, qmax);
      out[i] = static_cast<float>((q + b) * s);
    }
  }
  return Tensor::make_result("fake_quantize", x.shape(), std::move(out), {x},
                             [lo = state.lower(), hi = state.upper(), per](detail::Node& self) {
                               detail::Node& a = *self.inputs[0];
                               a.ensure_grad();
                               for (size_t i = 0; i < self.grad.size(); ++i) {
                                 const size_t c = i / per;
                                 const float v = a.data[i];
                                 if (v >= lo[c] && v <= hi[c]) a.grad[i] += self.grad[i];
                               }
                             });
}

BitWidths parse_bit_widths(const std::string& text) {
  static const std::regex re("^([0-9]+)w([0-9]+)a$");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw std::invalid_argument("bit widths must look like 4w4a, got '" + text + "'");
  }
  return BitWidths{std::stoi(m[1]), std::stoi(m[2])};
}

std::string format_bit_widths(BitWidths bits) {
  return std::to_string(bits.weight) + "w" + std::to_string(bits.activation) + "a";
}

}  // namespace acq
