#include "acq/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace acq {

namespace {

using detail::Node;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::atomic<uint64_t> g_seq{0};

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

[[noreturn]] void shape_fail(const char* op, const std::string& what, const Shape& a) {
  throw ShapeError(std::string(op) + ": " + what + " (got " + shape_str(a) + ")");
}

void check_finite(const char* op, const std::vector<float>& v) {
  for (float f : v) {
    if (!std::isfinite(f)) throw NumericError(std::string(op) + ": produced a non-finite value");
  }
}

int norm_axis(int axis, int nd, const char* op) {
  int a = axis < 0 ? axis + nd : axis;
  if (a < 0 || a >= nd) throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  return a;
}

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int d = static_cast<int>(s.size()) - 2; d >= 0; --d) st[d] = st[d + 1] * s[d + 1];
  return st;
}

// Strides of `in` viewed with the rank and extents of `out`; broadcast dims get 0.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  const auto cs = contiguous_strides(in);
  const size_t off = out.size() - in.size();
  for (size_t d = 0; d < in.size(); ++d) st[off + d] = in[d] == 1 ? 0 : cs[d];
  return st;
}

bool broadcast_shape(const Shape& a, const Shape& b, Shape& out) {
  const size_t nd = std::max(a.size(), b.size());
  out.assign(nd, 1);
  for (size_t i = 0; i < nd; ++i) {
    int64_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    int64_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) return false;
    out[i] = std::max(da, db);
  }
  return true;
}

// Visits every output element with the matching offsets into the two operands.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, F&& f) {
  const int nd = static_cast<int>(out.size());
  const int64_t total = shape_numel(out);
  if (nd == 0) {
    f(0, 0, 0);
    return;
  }
  const int64_t inner = out[nd - 1];
  const int64_t ia = sa[nd - 1], ib = sb[nd - 1];
  std::vector<int64_t> idx(nd, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t o = 0; o < total; o += inner) {
    for (int64_t j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
    for (int d = nd - 2; d >= 0; --d) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Adds a double accumulator into a node's gradient.
void accumulate(Node& n, const std::vector<double>& g) {
  n.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) n.grad[i] += static_cast<float>(g[i]);
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<float> out(in.size());
  for (size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  check_finite(op, out);
  return Tensor::make_result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i] * deriv(a.data[i], self.data[i]);
  });
}

enum class BinOp { kAdd, kSub, kMul, kDiv };

Tensor binary(const char* op, BinOp kind, const Tensor& a, const Tensor& b) {
  Shape out_shape;
  if (!broadcast_shape(a.shape(), b.shape(), out_shape)) shape_fail(op, a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const auto da = a.data();
  const auto db = b.data();
  std::vector<float> out(shape_numel(out_shape));
  if (kind == BinOp::kDiv) {
    for (float v : db) {
      if (v == 0.0f) throw NumericError(std::string(op) + ": division by zero");
    }
  }
  auto apply = [&](int64_t o, int64_t ia, int64_t ib) {
    switch (kind) {
      case BinOp::kAdd: out[o] = da[ia] + db[ib]; break;
      case BinOp::kSub: out[o] = da[ia] - db[ib]; break;
      case BinOp::kMul: out[o] = da[ia] * db[ib]; break;
      case BinOp::kDiv: out[o] = da[ia] / db[ib]; break;
    }
  };
  if (a.shape() == b.shape()) {
    for (size_t i = 0; i < out.size(); ++i) apply(static_cast<int64_t>(i), static_cast<int64_t>(i), static_cast<int64_t>(i));
  } else {
    for_each_broadcast(out_shape, sa, sb, apply);
  }
  check_finite(op, out);
  return Tensor::make_result(op, out_shape, std::move(out), {a, b}, [kind, sa, sb](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    std::vector<double> ga(na.requires_grad ? na.data.size() : 0, 0.0);
    std::vector<double> gb(nb.requires_grad ? nb.data.size() : 0, 0.0);
    const bool wa = na.requires_grad, wb = nb.requires_grad;
    for_each_broadcast(self.shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
      const double g = self.grad[o];
      switch (kind) {
        case BinOp::kAdd:
          if (wa) ga[ia] += g;
          if (wb) gb[ib] += g;
          break;
        case BinOp::kSub:
          if (wa) ga[ia] += g;
          if (wb) gb[ib] -= g;
          break;
        case BinOp::kMul:
          if (wa) ga[ia] += g * nb.data[ib];
          if (wb) gb[ib] += g * na.data[ia];
          break;
        case BinOp::kDiv: {
          const double bv = nb.data[ib];
          if (wa) ga[ia] += g / bv;
          if (wb) gb[ib] -= g * na.data[ia] / (bv * bv);
          break;
        }
      }
    });
    if (wa) accumulate(na, ga);
    if (wb) accumulate(nb, gb);
  });
}

// Reduction plan: output keeps non-reduced dims in order.
struct ReducePlan {
  Shape out_shape;
  std::vector<int64_t> out_strides;  // in input rank, 0 on reduced axes
  int64_t count = 1;
};

ReducePlan make_reduce_plan(const Shape& in, const std::vector<int>& axes, const char* op) {
  const int nd = static_cast<int>(in.size());
  std::vector<bool> reduced(nd, false);
  for (int ax : axes) reduced[norm_axis(ax, nd, op)] = true;
  ReducePlan p;
  for (int d = 0; d < nd; ++d) {
    if (reduced[d]) p.count *= in[d];
    else p.out_shape.push_back(in[d]);
  }
  const auto ost = contiguous_strides(p.out_shape);
  p.out_strides.assign(nd, 0);
  int k = 0;
  for (int d = 0; d < nd; ++d) {
    if (!reduced[d]) p.out_strides[d] = ost[k++];
  }
  return p;
}

template <class F>
void for_each_reduce(const Shape& in, const std::vector<int64_t>& out_strides, F&& f) {
  const auto ident = contiguous_strides(in);
  for_each_broadcast(in, ident, out_strides, [&](int64_t i, int64_t, int64_t o) { f(i, o); });
}

struct PoolGeom {
  int64_t n, c, h, w, oh, ow;
  int kh, kw, sh, sw;
};

Tensor pool2d(const char* op, const Tensor& x, PoolGeom g, bool is_max) {
  if (x.ndim() != 4) shape_fail(op, "expects an N x C x H x W input", x.shape());
  const auto in = x.data();
  const int64_t planes = g.n * g.c;
  std::vector<float> out(planes * g.oh * g.ow);
  std::vector<int64_t> arg(is_max ? out.size() : 0);
  for (int64_t p = 0; p < planes; ++p) {
    const float* src = in.data() + p * g.h * g.w;
    for (int64_t i = 0; i < g.oh; ++i) {
      for (int64_t j = 0; j < g.ow; ++j) {
        const int64_t o = (p * g.oh + i) * g.ow + j;
        if (is_max) {
          int64_t best = (i * g.sh) * g.w + j * g.sw;
          for (int a = 0; a < g.kh; ++a) {
            for (int b = 0; b < g.kw; ++b) {
              const int64_t idx = (i * g.sh + a) * g.w + j * g.sw + b;
              if (src[idx] > src[best]) best = idx;
            }
          }
          out[o] = src[best];
          arg[o] = p * g.h * g.w + best;
        } else {
          double acc = 0.0;
          for (int a = 0; a < g.kh; ++a) {
            for (int b = 0; b < g.kw; ++b) acc += src[(i * g.sh + a) * g.w + j * g.sw + b];
          }
          out[o] = static_cast<float>(acc / (g.kh * g.kw));
        }
      }
    }
  }
  Shape shape{g.n, g.c, g.oh, g.ow};
  return Tensor::make_result(op, shape, std::move(out), {x}, [g, is_max, arg = std::move(arg)](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    if (is_max) {
      for (size_t o = 0; o < self.grad.size(); ++o) a.grad[arg[o]] += self.grad[o];
      return;
    }
    const float inv = 1.0f / static_cast<float>(g.kh * g.kw);
    for (int64_t p = 0; p < g.n * g.c; ++p) {
      float* dst = a.grad.data() + p * g.h * g.w;
      for (int64_t i = 0; i < g.oh; ++i) {
        for (int64_t j = 0; j < g.ow; ++j) {
          const float v = self.grad[(p * g.oh + i) * g.ow + j] * inv;
          for (int ka = 0; ka < g.kh; ++ka) {
            for (int kb = 0; kb < g.kw; ++kb) dst[(i * g.sh + ka) * g.w + j * g.sw + kb] += v;
          }
        }
      }
    }
  });
}

struct ConvGeom {
  int64_t n, ci, h, w, co, k, oh, ow;
  int stride, pad;
};

// Writes sample columns [col0, col0 + oh*ow) of cols, which is [ci*k*k, ld] row-major.
void im2col(const float* src, const ConvGeom& g, double* cols, int64_t ld, int64_t col0) {
  for (int64_t c = 0; c < g.ci; ++c) {
    const float* plane = src + c * g.h * g.w;
    for (int64_t ki = 0; ki < g.k; ++ki) {
      for (int64_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((c * g.k + ki) * g.k + kj) * ld + col0;
        // Valid output columns j satisfy 0 <= j*stride - pad + kj < w.
        const int64_t off = kj - g.pad;
        int64_t j0 = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
        int64_t j1 = (g.w - 1 - off) >= 0 ? (g.w - 1 - off) / g.stride + 1 : 0;
        j0 = std::min(j0, g.ow);
        j1 = std::clamp(j1, j0, g.ow);
        for (int64_t i = 0; i < g.oh; ++i) {
          const int64_t y = i * g.stride - g.pad + ki;
          double* out = row + i * g.ow;
          if (y < 0 || y >= g.h) {
            std::fill(out, out + g.ow, 0.0);
            continue;
          }
          const float* line = plane + y * g.w + off;
          for (int64_t j = 0; j < j0; ++j) out[j] = 0.0;
          if (g.stride == 1) {
            for (int64_t j = j0; j < j1; ++j) out[j] = line[j];
          } else {
            for (int64_t j = j0; j < j1; ++j) out[j] = line[j * g.stride];
          }
          for (int64_t j = j1; j < g.ow; ++j) out[j] = 0.0;
        }
      }
    }
  }
}

void col2im(const double* cols, int64_t ld, int64_t col0, const ConvGeom& g, float* dst) {
  for (int64_t c = 0; c < g.ci; ++c) {
    float* plane = dst + c * g.h * g.w;
    for (int64_t ki = 0; ki < g.k; ++ki) {
      for (int64_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((c * g.k + ki) * g.k + kj) * ld + col0;
        const int64_t off = kj - g.pad;
        int64_t j0 = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
        int64_t j1 = (g.w - 1 - off) >= 0 ? (g.w - 1 - off) / g.stride + 1 : 0;
        j0 = std::min(j0, g.ow);
        j1 = std::clamp(j1, j0, g.ow);
        for (int64_t i = 0; i < g.oh; ++i) {
          const int64_t y = i * g.stride - g.pad + ki;
          if (y < 0 || y >= g.h) continue;
          float* line = plane + y * g.w + off;
          const double* in = row + i * g.ow;
          for (int64_t j = j0; j < j1; ++j) line[j * g.stride] += static_cast<float>(in[j]);
        }
      }
    }
  }
}

// Samples per GEMM so that an im2col buffer stays near 2M doubles.
int64_t conv_chunk(const ConvGeom& g) {
  const int64_t per = g.ci * g.k * g.k * g.oh * g.ow;
  return std::clamp<int64_t>((int64_t{1} << 16) / std::max<int64_t>(per, 1), 1, g.n);
}

MatD to_matd(std::span<const float> v, int64_t rows, int64_t cols) {
  MatD m(rows, cols);
  for (int64_t i = 0; i < rows * cols; ++i) m.data()[i] = v[i];
  return m;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const int64_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor: extents must be positive, got " + shape_str(shape));
  }
  if (static_cast<int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values do not fill shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  node->seq = g_seq.fetch_add(1);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("tensor: use of an undefined tensor");
  return node_->shape;
}

int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  return s.at(norm_axis(axis, static_cast<int>(s.size()), "dim"));
}

int64_t Tensor::numel() const { return static_cast<int64_t>(node_ ? node_->data.size() : 0); }

std::span<const float> Tensor::data() const {
  shape();
  return node_->data;
}

std::span<float> Tensor::mutable_data() {
  shape();
  if (node_->backward) throw std::logic_error("tensor: only leaves may be mutated in place");
  return node_->data;
}

std::vector<float> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor is not a scalar " + shape_str(shape()));
  return node_->data[0];
}

float Tensor::at(std::initializer_list<int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("at: index rank mismatch for " + shape_str(s));
  int64_t off = 0;
  size_t d = 0;
  for (int64_t i : index) {
    if (i < 0 || i >= s[d]) throw std::out_of_range("at: index out of range for " + shape_str(s));
    off = off * s[d++] + i;
  }
  return node_->data[off];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  shape();
  if (node_->backward) throw std::logic_error("tensor: requires_grad can only be set on leaves");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  shape();
  if (node_->grad.empty()) throw std::logic_error("tensor: no gradient has been accumulated");
  return node_->grad;
}

std::span<float> Tensor::mutable_grad() {
  shape();
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

Tensor Tensor::clone() const { return from(shape(), node_->data, node_->requires_grad && !node_->backward); }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::make_result(const char* op, Shape shape, std::vector<float> values, const std::vector<Tensor>& inputs,
                           BackwardFn backward) {
  Tensor out = from(std::move(shape), std::move(values), false);
  out.node_->op = op;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (const auto& t : inputs) out.node_->inputs.push_back(t.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) throw std::logic_error("backward: root has no gradient history");

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

  node_->ensure_grad();
  node_->grad[0] += 1.0f;
  for (Node* n : order) {
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->backward) n->grad.clear();
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) { return binary("add", BinOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary("sub", BinOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary("mul", BinOp::kMul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary("div", BinOp::kDiv, a, b); }

Tensor add_scalar(const Tensor& a, float s) {
  return unary("add_scalar", a, [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& a, float s) {
  return unary("mul_scalar", a, [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

Tensor abs(const Tensor& x) {
  return unary("abs", x, [](float v) { return std::fabs(v); },
               [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor sqrt(const Tensor& x) {
  for (float v : x.data()) {
    if (v < 0.0f) throw NumericError("sqrt: negative input");
  }
  return unary("sqrt", x, [](float v) { return std::sqrt(v); }, [](float, float y) { return 0.5f / y; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor log(const Tensor& x) {
  for (float v : x.data()) {
    if (!(v > 0.0f)) throw NumericError("log: non-positive input");
  }
  return unary("log", x, [](float v) { return std::log(v); }, [](float v, float) { return 1.0f / v; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](float v) { return v > 0.0f ? v : 0.0f; },
               [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float slope) {
  return unary("leaky_relu", x, [slope](float v) { return v > 0.0f ? v : slope * v; },
               [slope](float v, float) { return v > 0.0f ? 1.0f : slope; });
}

Tensor clip(const Tensor& x, float lo, float hi) {
  if (lo > hi) throw std::invalid_argument("clip: lower bound exceeds upper bound");
  return unary("clip", x, [lo, hi](float v) { return std::min(std::max(v, lo), hi); },
               [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

Tensor round_ste(const Tensor& x) {
  return unary("round_ste", x, [](float v) { return std::round(v); }, [](float, float) { return 1.0f; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  std::vector<float> out{static_cast<float>(acc)};
  check_finite("sum", out);
  return Tensor::make_result("sum", {1}, std::move(out), {x}, [](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    for (float& g : a.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  std::vector<float> out{static_cast<float>(acc / n)};
  check_finite("mean", out);
  return Tensor::make_result("mean", {1}, std::move(out), {x}, [n](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    const float g = static_cast<float>(self.grad[0] / n);
    for (float& v : a.grad) v += g;
  });
}

namespace {

Tensor reduce_axes(const char* op, const Tensor& x, const std::vector<int>& axes, bool average) {
  ReducePlan p = make_reduce_plan(x.shape(), axes, op);
  std::vector<double> acc(shape_numel(p.out_shape), 0.0);
  const auto in = x.data();
  for_each_reduce(x.shape(), p.out_strides, [&](int64_t i, int64_t o) { acc[o] += in[i]; });
  const double scale = average ? 1.0 / static_cast<double>(p.count) : 1.0;
  std::vector<float> out(acc.size());
  for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i] * scale);
  check_finite(op, out);
  Shape out_shape = p.out_shape.empty() ? Shape{1} : p.out_shape;
  return Tensor::make_result(op, out_shape, std::move(out), {x}, [p, scale](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    for_each_reduce(a.shape, p.out_strides,
                    [&](int64_t i, int64_t o) { a.grad[i] += static_cast<float>(self.grad[o] * scale); });
  });
}

}  // namespace

Tensor sum(const Tensor& x, const std::vector<int>& axes) { return reduce_axes("sum_axes", x, axes, false); }
Tensor mean(const Tensor& x, const std::vector<int>& axes) { return reduce_axes("mean_axes", x, axes, true); }

Tensor variance(const Tensor& x, const std::vector<int>& axes) {
  ReducePlan p = make_reduce_plan(x.shape(), axes, "variance");
  const size_t m = shape_numel(p.out_shape);
  std::vector<double> mu(m, 0.0), acc(m, 0.0);
  const auto in = x.data();
  const double n = static_cast<double>(p.count);
  for_each_reduce(x.shape(), p.out_strides, [&](int64_t i, int64_t o) { mu[o] += in[i]; });
  for (auto& v : mu) v /= n;
  for_each_reduce(x.shape(), p.out_strides, [&](int64_t i, int64_t o) {
    const double d = in[i] - mu[o];
    acc[o] += d * d;
  });
  std::vector<float> out(m);
  for (size_t i = 0; i < m; ++i) out[i] = static_cast<float>(acc[i] / n);
  check_finite("variance", out);
  Shape out_shape = p.out_shape.empty() ? Shape{1} : p.out_shape;
  return Tensor::make_result("variance", out_shape, std::move(out), {x}, [p, mu, n](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    for_each_reduce(a.shape, p.out_strides, [&](int64_t i, int64_t o) {
      a.grad[i] += static_cast<float>(self.grad[o] * 2.0 * (a.data[i] - mu[o]) / n);
    });
  });
}

// ---------------------------------------------------------------------------
// Shape and indexing

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  return Tensor::make_result("reshape", std::move(shape), x.to_vector(), {x}, [](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) a.grad[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs[0].shape();
  const int nd = static_cast<int>(first.size());
  const int ax = norm_axis(axis, nd, "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (static_cast<int>(s.size()) != nd) shape_fail("concat", first, s);
    for (int d = 0; d < nd; ++d) {
      if (d != ax && s[d] != first[d]) shape_fail("concat", first, s);
    }
    out_shape[ax] += s[ax];
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= first[d];
  for (int d = ax + 1; d < nd; ++d) inner *= first[d];
  std::vector<float> out(shape_numel(out_shape));
  std::vector<int64_t> widths;
  for (const auto& t : xs) widths.push_back(t.shape()[ax] * inner);
  const int64_t row = out_shape[ax] * inner;
  int64_t off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const auto src = xs[k].data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(src.data() + o * widths[k], widths[k], out.data() + o * row + off);
    }
    off += widths[k];
  }
  return Tensor::make_result("concat", out_shape, std::move(out), xs, [widths, outer, row](Node& self) {
    int64_t off = 0;
    for (size_t k = 0; k < self.inputs.size(); ++k) {
      Node& a = *self.inputs[k];
      if (a.requires_grad) {
        a.ensure_grad();
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t j = 0; j < widths[k]; ++j) a.grad[o * widths[k] + j] += self.grad[o * row + off + j];
        }
      }
      off += widths[k];
    }
  });
}

Tensor index_select(const Tensor& x, int axis, const std::vector<int64_t>& indices) {
  const Shape& s = x.shape();
  const int nd = static_cast<int>(s.size());
  const int ax = norm_axis(axis, nd, "index_select");
  if (indices.empty()) throw ShapeError("index_select: empty index list");
  for (int64_t i : indices) {
    if (i < 0 || i >= s[ax]) {
      throw std::out_of_range("index_select: index " + std::to_string(i) + " out of range for " + shape_str(s));
    }
  }
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < ax; ++d) outer *= s[d];
  for (int d = ax + 1; d < nd; ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[ax] = static_cast<int64_t>(indices.size());
  const int64_t k = static_cast<int64_t>(indices.size());
  std::vector<float> out(shape_numel(out_shape));
  const auto src = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t j = 0; j < k; ++j) {
      std::copy_n(src.data() + (o * s[ax] + indices[j]) * inner, inner, out.data() + (o * k + j) * inner);
    }
  }
  const int64_t extent = s[ax];
  return Tensor::make_result("index_select", out_shape, std::move(out), {x},
                             [indices, outer, inner, extent, k](Node& self) {
                               Node& a = *self.inputs[0];
                               a.ensure_grad();
                               for (int64_t o = 0; o < outer; ++o) {
                                 for (int64_t j = 0; j < k; ++j) {
                                   for (int64_t t = 0; t < inner; ++t) {
                                     a.grad[(o * extent + indices[j]) * inner + t] +=
                                         self.grad[(o * k + j) * inner + t];
                                   }
                                 }
                               }
                             });
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& cols) {
  if (x.ndim() != 2) shape_fail("gather_rows", "expects a 2-D input", x.shape());
  const int64_t n = x.dim(0), c = x.dim(1);
  if (static_cast<int64_t>(cols.size()) != n) {
    throw ShapeError("gather_rows: " + std::to_string(cols.size()) + " indices for " + shape_str(x.shape()));
  }
  std::vector<float> out(n);
  const auto src = x.data();
  for (int64_t i = 0; i < n; ++i) {
    if (cols[i] < 0 || cols[i] >= c) throw std::out_of_range("gather_rows: column index out of range");
    out[i] = src[i * c + cols[i]];
  }
  return Tensor::make_result("gather_rows", {n}, std::move(out), {x}, [cols, c](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    for (size_t i = 0; i < cols.size(); ++i) a.grad[i * c + cols[i]] += self.grad[i];
  });
}

Tensor embedding(const Tensor& table, const std::vector<int64_t>& ids) {
  if (table.ndim() != 2) shape_fail("embedding", "table must be 2-D", table.shape());
  return index_select(table, 0, ids);
}

// ---------------------------------------------------------------------------
// Dense layers

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.ndim() != 2 || b.ndim() != 2) shape_fail("matmul", a.shape(), b.shape());
  const int64_t m = a.dim(0), k = a.dim(1);
  const int64_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const int64_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != kb) shape_fail("matmul", a.shape(), b.shape());
  const MatD A = to_matd(a.data(), m, k);
  const MatD B = to_matd(b.data(), b.dim(0), b.dim(1));
  MatD C = transpose_b ? MatD(A * B.transpose()) : MatD(A * B);
  std::vector<float> out(m * n);
  for (int64_t i = 0; i < m * n; ++i) out[i] = static_cast<float>(C.data()[i]);
  check_finite("matmul", out);
  return Tensor::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n, transpose_b](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const MatD G = to_matd(self.grad, m, n);
    if (na.requires_grad) {
      const MatD B = to_matd(nb.data, transpose_b ? n : k, transpose_b ? k : n);
      MatD ga = transpose_b ? MatD(G * B) : MatD(G * B.transpose());
      na.ensure_grad();
      for (int64_t i = 0; i < m * k; ++i) na.grad[i] += static_cast<float>(ga.data()[i]);
    }
    if (nb.requires_grad) {
      const MatD A = to_matd(na.data, m, k);
      MatD gb = transpose_b ? MatD(G.transpose() * A) : MatD(A.transpose() * G);
      nb.ensure_grad();
      for (int64_t i = 0; i < k * n; ++i) nb.grad[i] += static_cast<float>(gb.data()[i]);
    }
  });
}

Tensor softmax(const Tensor& x) {
  if (x.ndim() != 2) shape_fail("softmax", "expects a 2-D input", x.shape());
  const int64_t n = x.dim(0), c = x.dim(1);
  const auto in = x.data();
  std::vector<float> out(n * c);
  for (int64_t i = 0; i < n; ++i) {
    const float* r = in.data() + i * c;
    const float mx = *std::max_element(r, r + c);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(r[j]) - mx);
    for (int64_t j = 0; j < c; ++j) out[i * c + j] = static_cast<float>(std::exp(static_cast<double>(r[j]) - mx) / z);
  }
  return Tensor::make_result("softmax", {n, c}, std::move(out), {x}, [n, c](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int64_t j = 0; j < c; ++j) dot += static_cast<double>(self.grad[i * c + j]) * self.data[i * c + j];
      for (int64_t j = 0; j < c; ++j) {
        a.grad[i * c + j] += static_cast<float>(self.data[i * c + j] * (self.grad[i * c + j] - dot));
      }
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.ndim() != 2) shape_fail("log_softmax", "expects a 2-D input", x.shape());
  const int64_t n = x.dim(0), c = x.dim(1);
  const auto in = x.data();
  std::vector<float> out(n * c);
  for (int64_t i = 0; i < n; ++i) {
    const float* r = in.data() + i * c;
    const double mx = *std::max_element(r, r + c);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(r[j] - mx);
    const double lse = mx + std::log(z);
    for (int64_t j = 0; j < c; ++j) out[i * c + j] = static_cast<float>(r[j] - lse);
  }
  check_finite("log_softmax", out);
  return Tensor::make_result("log_softmax", {n, c}, std::move(out), {x}, [n, c](Node& self) {
    Node& a = *self.inputs[0];
    a.ensure_grad();
    for (int64_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (int64_t j = 0; j < c; ++j) gs += self.grad[i * c + j];
      for (int64_t j = 0; j < c; ++j) {
        a.grad[i * c + j] += static_cast<float>(self.grad[i * c + j] - std::exp(double(self.data[i * c + j])) * gs);
      }
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, Conv2dOptions opt) {
  if (x.ndim() != 4 || w.ndim() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3)) {
    shape_fail("conv2d", x.shape(), w.shape());
  }
  if (opt.stride < 1 || opt.padding < 0) throw std::invalid_argument("conv2d: invalid stride/padding");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), 0, 0, opt.stride, opt.padding};
  g.oh = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.oh <= 0 || g.ow <= 0) shape_fail("conv2d", x.shape(), w.shape());
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.dim(0) != g.co)) shape_fail("conv2d", w.shape(), bias.shape());

  const int64_t kk = g.ci * g.k * g.k, hw = g.oh * g.ow;
  const MatD W = to_matd(w.data(), g.co, kk);
  const auto in = x.data();
  std::vector<float> out(g.n * g.co * hw);
  const int64_t chunk = conv_chunk(g);
  MatD cols, res;
  for (int64_t s0 = 0; s0 < g.n; s0 += chunk) {
    const int64_t ns = std::min(chunk, g.n - s0), ld = ns * hw;
    cols.resize(kk, ld);
    for (int64_t s = 0; s < ns; ++s) im2col(in.data() + (s0 + s) * g.ci * g.h * g.w, g, cols.data(), ld, s * hw);
    res.noalias() = W * cols;
    for (int64_t s = 0; s < ns; ++s) {
      float* dst = out.data() + (s0 + s) * g.co * hw;
      for (int64_t c = 0; c < g.co; ++c) {
        const double b = has_bias ? bias.data()[c] : 0.0;
        const double* r = res.data() + c * ld + s * hw;
        for (int64_t j = 0; j < hw; ++j) dst[c * hw + j] = static_cast<float>(r[j] + b);
      }
    }
  }
  check_finite("conv2d", out);
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_result("conv2d", {g.n, g.co, g.oh, g.ow}, std::move(out), inputs, [g, kk, hw](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    Node* nb = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const MatD W = to_matd(nw.data, g.co, kk);
    MatD dW = MatD::Zero(g.co, kk);
    std::vector<double> db(g.co, 0.0);
    const int64_t chunk = conv_chunk(g);
    MatD cols, dcols, G;
    if (nx.requires_grad) nx.ensure_grad();
    for (int64_t s0 = 0; s0 < g.n; s0 += chunk) {
      const int64_t ns = std::min(chunk, g.n - s0), ld = ns * hw;
      G.resize(g.co, ld);
      for (int64_t s = 0; s < ns; ++s) {
        const float* src = self.grad.data() + (s0 + s) * g.co * hw;
        for (int64_t c = 0; c < g.co; ++c) {
          double* r = G.data() + c * ld + s * hw;
          for (int64_t j = 0; j < hw; ++j) r[j] = src[c * hw + j];
        }
      }
      if (nw.requires_grad) {
        cols.resize(kk, ld);
        for (int64_t s = 0; s < ns; ++s) {
          im2col(nx.data.data() + (s0 + s) * g.ci * g.h * g.w, g, cols.data(), ld, s * hw);
        }
        dW.noalias() += G * cols.transpose();
      }
      if (nb && nb->requires_grad) {
        for (int64_t c = 0; c < g.co; ++c) {
          const double* r = G.data() + c * ld;
          for (int64_t j = 0; j < ld; ++j) db[c] += r[j];
        }
      }
      if (nx.requires_grad) {
        dcols.noalias() = W.transpose() * G;
        for (int64_t s = 0; s < ns; ++s) {
          col2im(dcols.data(), ld, s * hw, g, nx.grad.data() + (s0 + s) * g.ci * g.h * g.w);
        }
      }
    }
    if (nw.requires_grad) {
      nw.ensure_grad();
      for (int64_t i = 0; i < g.co * kk; ++i) nw.grad[i] += static_cast<float>(dW.data()[i]);
    }
    if (nb && nb->requires_grad) accumulate(*nb, db);
  });
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (x.ndim() != 4) shape_fail("upsample_nearest", "expects an N x C x H x W input", x.shape());
  if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  const int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const int64_t oh = h * factor, ow = w * factor;
  const auto in = x.data();
  std::vector<float> out(planes * oh * ow);
  for (int64_t p = 0; p < planes; ++p) {
    for (int64_t i = 0; i < oh; ++i) {
      for (int64_t j = 0; j < ow; ++j) out[(p * oh + i) * ow + j] = in[(p * h + i / factor) * w + j / factor];
    }
  }
  return Tensor::make_result("upsample_nearest", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                             [planes, h, w, oh, ow, factor](Node& self) {
                               Node& a = *self.inputs[0];
                               a.ensure_grad();
                               for (int64_t p = 0; p < planes; ++p) {
                                 for (int64_t i = 0; i < oh; ++i) {
                                   for (int64_t j = 0; j < ow; ++j) {
                                     a.grad[(p * h + i / factor) * w + j / factor] += self.grad[(p * oh + i) * ow + j];
                                   }
                                 }
                               }
                             });
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
  if (x.ndim() != 4) shape_fail("max_pool2d", "expects an N x C x H x W input", x.shape());
  if (kernel < 1 || stride < 1 || x.dim(2) < kernel || x.dim(3) < kernel) {
    shape_fail("max_pool2d", "kernel does not fit", x.shape());
  }
  PoolGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), (x.dim(2) - kernel) / stride + 1,
             (x.dim(3) - kernel) / stride + 1, kernel, kernel, stride, stride};
  return pool2d("max_pool2d", x, g, true);
}

namespace {

PoolGeom adaptive_geom(const char* op, const Tensor& x, int out_h, int out_w) {
  if (x.ndim() != 4) shape_fail(op, "expects an N x C x H x W input", x.shape());
  if (out_h < 1 || out_w < 1 || x.dim(2) % out_h != 0 || x.dim(3) % out_w != 0) {
    shape_fail(op, "output " + std::to_string(out_h) + "x" + std::to_string(out_w) + " must divide the input",
               x.shape());
  }
  const int kh = static_cast<int>(x.dim(2) / out_h), kw = static_cast<int>(x.dim(3) / out_w);
  return PoolGeom{x.dim(0), x.dim(1), x.dim(2), x.dim(3), out_h, out_w, kh, kw, kh, kw};
}

}  // namespace

Tensor adaptive_max_pool2d(const Tensor& x, int out_h, int out_w) {
  return pool2d("adaptive_max_pool2d", x, adaptive_geom("adaptive_max_pool2d", x, out_h, out_w), true);
}

Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w) {
  return pool2d("adaptive_avg_pool2d", x, adaptive_geom("adaptive_avg_pool2d", x, out_h, out_w), false);
}

}  // namespace acq
