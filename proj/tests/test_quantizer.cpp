#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "acq/quantizer.hpp"
#include "acq/rng.hpp"

using namespace acq;

namespace {

float fq(float x, const QuantizerState& q) { return fake_quantize(Tensor::from({1}, {x}), q).item(); }

QuantizerState layer_bounds(int n, float l, float u) {
  return QuantizerState::with_bounds(n, Granularity::kPerLayer, {l}, {u});
}

}  // namespace

TEST(ExampleQuantizer, ExactGridPoint) {
  QuantizerState q = layer_bounds(4, 0.0f, 15.0f);
  EXPECT_NEAR(q.scale(), 1.0, 1e-12);
  EXPECT_NEAR(q.offset(), 8.0, 1e-12);
  // q = round(0 / 1 - 8) = -8
  EXPECT_NEAR(std::round(0.0 / q.scale() - q.offset()), -8.0, 0);
  EXPECT_NEAR(fq(0.0f, q), 0.0, 1e-6);
}

TEST(ExampleQuantizer, SymmetricRangeUpperEdge) {
  QuantizerState q = layer_bounds(4, -1.0f, 1.0f);
  EXPECT_NEAR(q.scale(), 2.0 / 15.0, 1e-9);
  EXPECT_NEAR(q.offset(), 0.5, 1e-6);
  EXPECT_NEAR(std::round(1.0 / q.scale() - q.offset()), 7.0, 0);
  EXPECT_NEAR(fq(1.0f, q), 1.0, 1e-6);
}

TEST(ExampleQuantizer, OutOfRangeClipsToTopLevel) {
  QuantizerState q = layer_bounds(4, -1.0f, 1.0f);
  EXPECT_NEAR(fq(2.0f, q), 1.0, 1e-6);
}

TEST(ExampleQuantizer, ObserverTracksRunningExtrema) {
  QuantizerState q(4, Granularity::kPerLayer);
  q.observe(Tensor::from({2}, {-2, 3}));
  q.observe(Tensor::from({2}, {-1, 5}));
  q.freeze();
  EXPECT_EQ(q.lower()[0], -2.0f);
  EXPECT_EQ(q.upper()[0], 5.0f);
}

TEST(ExampleQuantizer, PerChannelIndependentBounds) {
  QuantizerState q(4, Granularity::kPerChannel, 2);
  q.observe(Tensor::from({2, 3}, {-1, 0, 1, 10, 20, 30}));
  q.freeze();
  EXPECT_EQ(q.channels(), 2);
  EXPECT_EQ(q.lower(), (std::vector<float>{-1, 10}));
  EXPECT_EQ(q.upper(), (std::vector<float>{1, 30}));
}

TEST(ExampleQuantizer, DegenerateFreezeRejected) {
  QuantizerState q(4, Granularity::kPerLayer);
  q.observe(Tensor::from({3}, {2, 2, 2}));
  EXPECT_THROW(q.freeze("site"), std::domain_error);
  QuantizerState empty(4, Granularity::kPerLayer);
  EXPECT_THROW(empty.freeze("site"), std::logic_error);
}

TEST(ExampleQuantizer, WeightCodebookCardinality) {
  Rng rng(2);
  Tensor w = rng.normal_tensor({4, 3, 3, 3});
  for (int n : {2, 3, 4}) {
    QuantizerState q(n, Granularity::kPerChannel, 4);
    q.observe(w);
    q.freeze();
    Tensor f = fake_quantize(w, q);
    for (int64_t c = 0; c < 4; ++c) {
      std::set<float> levels(f.data().begin() + c * 27, f.data().begin() + (c + 1) * 27);
      EXPECT_LE(levels.size(), size_t{1} << n);
    }
  }
}

TEST(ExampleQuantizer, ParseBitWidths) {
  const BitWidths b = parse_bit_widths("4w4a");
  EXPECT_EQ(b.weight, 4);
  EXPECT_EQ(b.activation, 4);
  EXPECT_EQ(format_bit_widths({5, 8}), "5w8a");
  EXPECT_THROW(parse_bit_widths("4a4w"), std::invalid_argument);
  EXPECT_THROW(parse_bit_widths("w4a"), std::invalid_argument);
}

TEST(Quantizer, UnfrozenStateCannotQuantize) {
  QuantizerState q(4, Granularity::kPerLayer);
  EXPECT_THROW(fake_quantize(Tensor::zeros({2}), q), std::logic_error);
}

TEST(Quantizer, FrozenStateCannotObserve) {
  QuantizerState q = layer_bounds(4, -1, 1);
  EXPECT_THROW(q.observe(Tensor::zeros({2})), std::logic_error);
}

TEST(Quantizer, PerChannelShapeChecked) {
  QuantizerState q(4, Granularity::kPerChannel, 3);
  EXPECT_THROW(q.observe(Tensor::zeros({2, 4})), ShapeError);
}

TEST(Quantizer, BitWidthRangeEnforced) {
  EXPECT_THROW(QuantizerState(1, Granularity::kPerLayer), std::invalid_argument);
  EXPECT_THROW(QuantizerState(17, Granularity::kPerLayer), std::invalid_argument);
}

// Dense grids of x over [l, u] for every supported bit width.
TEST(QuantizerProperty, RoundTripBoundOnExhaustiveGrids) {
  const std::vector<std::pair<float, float>> ranges{{0, 15}, {-1, 1}, {-3.5f, 0.25f}, {0.1f, 0.2f}, {-100, 7}};
  for (int n : {2, 3, 4, 5, 8}) {
    for (auto [l, u] : ranges) {
      QuantizerState q = layer_bounds(n, l, u);
      const double s = q.scale();
      const int steps = 16 * ((1 << n) - 1);
      std::vector<float> xs;
      for (int k = 0; k <= steps; ++k) xs.push_back(static_cast<float>(l + (u - l) * k / static_cast<double>(steps)));
      Tensor f = fake_quantize(Tensor::from({static_cast<int64_t>(xs.size())}, xs), q);
      for (size_t i = 0; i < xs.size(); ++i) {
        ASSERT_LE(std::abs(static_cast<double>(f.data()[i]) - xs[i]), s / 2 + 1e-6 * std::max(1.0f, std::abs(u)))
            << "n=" << n << " l=" << l << " u=" << u << " x=" << xs[i];
      }
    }
  }
}

TEST(QuantizerProperty, IdempotentAndMonotoneOnRandomConfigs) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 9));
    const float l = static_cast<float>(rng.uniform(-10, 10));
    const float u = l + static_cast<float>(rng.uniform(0.01, 20));
    QuantizerState q = layer_bounds(n, l, u);
    std::vector<float> xs(64);
    for (auto& x : xs) x = static_cast<float>(rng.uniform(l - (u - l) * 0.5, u + (u - l) * 0.5));
    std::sort(xs.begin(), xs.end());
    Tensor f1 = fake_quantize(Tensor::from({64}, xs), q);
    Tensor f2 = fake_quantize(f1, q);
    const double tol = 1e-5 * std::max({1.0f, std::abs(l), std::abs(u)});
    for (int i = 0; i < 64; ++i) {
      ASSERT_NEAR(f2.data()[i], f1.data()[i], tol) << "trial " << trial;
      if (i > 0) ASSERT_GE(f1.data()[i], f1.data()[i - 1]) << "trial " << trial;
      ASSERT_GE(f1.data()[i], l - tol);
      ASSERT_LE(f1.data()[i], u + tol);
    }
  }
}

TEST(QuantizerProperty, IntegerCodesStayInRange) {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(2, 9));
    const double l = rng.uniform(-5, 5);
    const double u = l + rng.uniform(0.01, 10);
    QuantizerState q = layer_bounds(n, static_cast<float>(l), static_cast<float>(u));
    EXPECT_GT(q.scale(), 0.0);
    for (int k = 0; k < 8; ++k) {
      const double x = rng.uniform(l - 5, u + 5);
      const double code = std::clamp(std::round(x / q.scale() - q.offset()), double(q.qmin()), double(q.qmax()));
      const double back = static_cast<double>(fq(static_cast<float>(x), q)) / q.scale() - q.offset();
      ASSERT_NEAR(back, code, 1e-3);
      ASSERT_GE(code, q.qmin());
      ASSERT_LE(code, q.qmax());
    }
  }
}
