#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace acq {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible for an op.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an op would produce NaN/Inf or leaves its mathematical domain.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this->grad into inputs[i]->grad. Empty for leaves.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
  }
};

}  // namespace detail

/// Dense row-major float tensor with an optional gradient slot.
///
/// Tensors produced by ops are immutable; leaves (parameters, inputs) may be
/// updated in place through mutable_data(). Copies share the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t dim(int axis) const;
  int ndim() const { return static_cast<int>(shape().size()); }
  int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  std::vector<float> to_vector() const;
  float item() const;
  float at(std::initializer_list<int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// Copy of the values with no history.
  Tensor detach() const;
  /// Deep copy that keeps requires_grad but drops history and gradient.
  Tensor clone() const;

  /// Reverse-mode sweep from this scalar. Leaf gradients accumulate.
  void backward() const;

  const char* op_name() const;

  // Construction hook for ops, including ones defined outside this module.
  using BackwardFn = std::function<void(detail::Node& self)>;
  static Tensor make_result(const char* op, Shape shape, std::vector<float> values,
                            const std::vector<Tensor>& inputs, BackwardFn backward);

  detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Binary ops broadcast numpy-style (right aligned).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor neg(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, float s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, float s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, float s) { return mul_scalar(a, s); }
inline Tensor operator*(float s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float slope);
/// Clamp to [lo, hi]; gradient passes only where the input was inside.
Tensor clip(const Tensor& x, float lo, float hi);
/// Round half away from zero with an identity (straight-through) gradient.
Tensor round_ste(const Tensor& x);

// ---------------------------------------------------------------------------
// Reductions. Accumulate in double, sequential index order.

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, const std::vector<int>& axes);
Tensor mean(const Tensor& x, const std::vector<int>& axes);
/// Biased (population) variance over the given axes.
Tensor variance(const Tensor& x, const std::vector<int>& axes);

// ---------------------------------------------------------------------------
// Shape and indexing.

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor index_select(const Tensor& x, int axis, const std::vector<int64_t>& indices);
/// out[i] = x[i, cols[i]] for a 2-D x.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& cols);
/// Rows of table[V, D] selected by ids -> [ids.size(), D].
Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids);

// ---------------------------------------------------------------------------
// Dense layers.

/// a[M,K] x b[K,N]; with transpose_b, b is [N,K].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// Row-wise softmax over the last axis of a 2-D tensor.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

/// x[N,Cin,H,W] * w[Cout,Cin,k,k] (+ bias[Cout]).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt = {});
Tensor upsample_nearest(const Tensor& x, int factor);
Tensor max_pool2d(const Tensor& x, int kernel, int stride);
/// Output size must divide the input size exactly.
Tensor adaptive_max_pool2d(const Tensor& x, int out_h, int out_w);
Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w);

}  // namespace acq
