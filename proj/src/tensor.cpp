#include "redecode/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <numbers>
#include <sstream>

#include "redecode/error.hpp"

namespace redecode {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = 0;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::atomic<std::uint64_t> next_node_id{1};

NodePtr make_node(Shape shape, std::vector<double> values, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// Accumulates into the input's gradient if it participates in differentiation.
inline std::vector<double>* grad_sink(const NodePtr& n) {
  return n->requires_grad ? &n->ensure_grad() : nullptr;
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  const auto n = shape_size(shape);
  node_ = make_node(std::move(shape), std::vector<double>(n, fill), false);
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (shape_size(shape) != values.size()) {
    throw ShapeError("tensor " + shape_string(shape) + " needs " + std::to_string(shape_size(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  node_ = make_node(std::move(shape), std::move(values), false);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::size() const { return values().size(); }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  return s[axis];
}

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "values");
  return node_->value;
}

std::vector<double> Tensor::to_vector() const {
  auto v = values();
  return {v.begin(), v.end()};
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  const auto& s = shape();
  if (s.size() != 2 || r >= s[0] || c >= s[1]) throw ShapeError("at() out of range on " + shape_string(s));
  return node_->value[r * s[1] + c];
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "grad");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::uint64_t Tensor::id() const {
  require_defined(*this, "id");
  return node_->id;
}

Tensor Tensor::clone() const {
  require_defined(*this, "clone");
  Tensor copy(make_node(node_->shape, node_->value, false));
  copy.node_->requires_grad = node_->requires_grad;
  return copy;
}

// ---------------------------------------------------------------------------
// Graph

void Graph::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) throw ContractError("backward: loss must be a scalar, got " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Rng

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_normal_) {
    const double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(theta);
  return radius * std::cos(theta);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ContractError("Rng::below(0)");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

std::uint64_t Rng::mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = &bv[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  const bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
  auto result = make_node({m, n}, std::move(out), rg);
  if (rg) {
    g.record([an = a.node(), bn = b.node(), on = result, m, k, n] {
      if (on->grad.empty()) return;
      const auto& dy = on->grad;
      if (auto* da = grad_sink(an)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += dy[i * n + j] * bn->value[p * n + j];
            (*da)[i * k + p] += acc;
          }
      }
      if (auto* db = grad_sink(bn)) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = an->value[i * k + p];
            for (std::size_t j = 0; j < n; ++j) (*db)[p * n + j] += aip * dy[i * n + j];
          }
      }
    });
  }
  return Tensor(result);
}

namespace {

Tensor matvec_impl(Graph& g, const Tensor& w, const Tensor& x, const Tensor* bias, const char* op) {
  require_rank(w, 2, op);
  require_rank(x, 1, op);
  const std::size_t m = w.dim(0), k = w.dim(1);
  if (x.dim(0) != k) {
    throw ShapeError(std::string(op) + ": " + shape_string(w.shape()) + " x " + shape_string(x.shape()));
  }
  if (bias) {
    require_rank(*bias, 1, op);
    if (bias->dim(0) != m) {
      throw ShapeError(std::string(op) + ": bias " + shape_string(bias->shape()) + " vs output [" +
                       std::to_string(m) + "]");
    }
  }
  std::vector<double> out(m);
  const auto wv = w.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* wr = &wv[i * k];
    double acc = bias ? bias->values()[i] : 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += wr[p] * xv[p];
    out[i] = acc;
  }
  const bool rg = g.recording() && (w.requires_grad() || x.requires_grad() || (bias && bias->requires_grad()));
  auto result = make_node({m}, std::move(out), rg);
  if (rg) {
    g.record([wn = w.node(), xn = x.node(), bn = bias ? bias->node() : NodePtr{},
              on = result, m, k] {
      if (on->grad.empty()) return;
      const auto& dy = on->grad;
      if (auto* dw = grad_sink(wn)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double d = dy[i];
          double* row = &(*dw)[i * k];
          for (std::size_t p = 0; p < k; ++p) row[p] += d * xn->value[p];
        }
      }
      if (auto* dx = grad_sink(xn)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double d = dy[i];
          const double* row = &wn->value[i * k];
          for (std::size_t p = 0; p < k; ++p) (*dx)[p] += row[p] * d;
        }
      }
      if (bn) {
        if (auto* db = grad_sink(bn))
          for (std::size_t i = 0; i < m; ++i) (*db)[i] += dy[i];
      }
    });
  }
  return Tensor(result);
}

}  // namespace

Tensor matvec(Graph& g, const Tensor& w, const Tensor& x) { return matvec_impl(g, w, x, nullptr, "matvec"); }

Tensor affine(Graph& g, const Tensor& w, const Tensor& x, const Tensor& b) {
  return matvec_impl(g, w, x, &b, "affine");
}

Tensor vecmat(Graph& g, const Tensor& x, const Tensor& w) {
  require_rank(w, 2, "vecmat");
  require_rank(x, 1, "vecmat");
  const std::size_t m = w.dim(0), k = w.dim(1);
  if (x.dim(0) != m) {
    throw ShapeError("vecmat: " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
  }
  std::vector<double> out(k, 0.0);
  const auto wv = w.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = xv[i];
    const double* wr = &wv[i * k];
    for (std::size_t p = 0; p < k; ++p) out[p] += xi * wr[p];
  }
  const bool rg = g.recording() && (w.requires_grad() || x.requires_grad());
  auto result = make_node({k}, std::move(out), rg);
  if (rg) {
    g.record([wn = w.node(), xn = x.node(), on = result, m, k] {
      if (on->grad.empty()) return;
      const auto& dy = on->grad;
      if (auto* dx = grad_sink(xn)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* wr = &wn->value[i * k];
          double acc = 0.0;
          for (std::size_t p = 0; p < k; ++p) acc += wr[p] * dy[p];
          (*dx)[i] += acc;
        }
      }
      if (auto* dw = grad_sink(wn)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double xi = xn->value[i];
          double* wr = &(*dw)[i * k];
          for (std::size_t p = 0; p < k; ++p) wr[p] += xi * dy[p];
        }
      }
    });
  }
  return Tensor(result);
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor elementwise_unary(Graph& g, const Tensor& x, UnaryFn fn) {
  require_defined(x, "elementwise_unary");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  switch (fn) {
    case UnaryFn::tanh:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
      break;
    case UnaryFn::sigmoid:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = stable_sigmoid(xv[i]);
      break;
    case UnaryFn::exp:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::exp(xv[i]);
      break;
    case UnaryFn::log:
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (!(xv[i] > 0.0)) {
          throw DomainError("log of non-positive value " + std::to_string(xv[i]) + " at index " + std::to_string(i));
        }
        out[i] = std::log(xv[i]);
      }
      break;
    case UnaryFn::negate:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = -xv[i];
      break;
  }
  const bool rg = g.recording() && (x.requires_grad());
  auto result = make_node(x.shape(), std::move(out), rg);
  if (rg) {
    g.record([xn = x.node(), on = result, fn] {
      if (on->grad.empty()) return;
      auto& dx = xn->ensure_grad();
      const auto& dy = on->grad;
      const auto& y = on->value;
      const auto& xin = xn->value;
      const std::size_t n = dy.size();
      switch (fn) {
        case UnaryFn::tanh:
          for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * (1.0 - y[i] * y[i]);
          break;
        case UnaryFn::sigmoid:
          for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
          break;
        case UnaryFn::exp:
          for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i];
          break;
        case UnaryFn::log:
          for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] / xin[i];
          break;
        case UnaryFn::negate:
          for (std::size_t i = 0; i < n; ++i) dx[i] -= dy[i];
          break;
      }
    });
  }
  return Tensor(result);
}

Tensor elementwise_binary(Graph& g, const Tensor& a, const Tensor& b, BinaryFn fn) {
  require_same_shape(a, b, "elementwise_binary");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  switch (fn) {
    case BinaryFn::add:
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case BinaryFn::sub:
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
      break;
    case BinaryFn::mul:
      for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
      break;
  }
  const bool rg = g.recording() && (a.requires_grad() || b.requires_grad());
  auto result = make_node(a.shape(), std::move(out), rg);
  if (rg) {
    g.record([an = a.node(), bn = b.node(), on = result, fn] {
      if (on->grad.empty()) return;
      const auto& dy = on->grad;
      const std::size_t n = dy.size();
      // a and b may be the same node (x + x); each side accumulates separately.
      if (an->requires_grad) {
        auto& da = an->ensure_grad();
        if (fn == BinaryFn::mul) {
          for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * bn->value[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
        }
      }
      if (bn->requires_grad) {
        auto& db = bn->ensure_grad();
        switch (fn) {
          case BinaryFn::add:
            for (std::size_t i = 0; i < n; ++i) db[i] += dy[i];
            break;
          case BinaryFn::sub:
            for (std::size_t i = 0; i < n; ++i) db[i] -= dy[i];
            break;
          case BinaryFn::mul:
            for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * an->value[i];
            break;
        }
      }
    });
  }
  return Tensor(result);
}

Tensor add_n(Graph& g, std::span<const Tensor> xs) {
  if (xs.empty()) throw ContractError("add_n: no inputs");
  for (const auto& x : xs) require_same_shape(xs.front(), x, "add_n");
  std::vector<double> out(xs.front().size(), 0.0);
  bool rg = false;
  std::vector<NodePtr> nodes;
  nodes.reserve(xs.size());
  for (const auto& x : xs) {
    const auto v = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
    rg = rg || x.requires_grad();
    nodes.push_back(x.node());
  }
  rg = rg && g.recording();
  auto result = make_node(xs.front().shape(), std::move(out), rg);
  if (rg) {
    g.record([nodes = std::move(nodes), on = result] {
      if (on->grad.empty()) return;
      for (const auto& n : nodes) {
        if (auto* d = grad_sink(n))
          for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += on->grad[i];
      }
    });
  }
  return Tensor(result);
}

Tensor scale(Graph& g, const Tensor& x, double factor) {
  require_defined(x, "scale");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  const bool rg = g.recording() && (x.requires_grad());
  auto result = make_node(x.shape(), std::move(out), rg);
  if (rg) {
    g.record([xn = x.node(), on = result, factor] {
      if (on->grad.empty()) return;
      auto& dx = xn->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += on->grad[i] * factor;
    });
  }
  return Tensor(result);
}

Tensor add_scalar(Graph& g, const Tensor& x, double offset) {
  require_defined(x, "add_scalar");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + offset;
  const bool rg = g.recording() && (x.requires_grad());
  auto result = make_node(x.shape(), std::move(out), rg);
  if (rg) {
    g.record([xn = x.node(), on = result] {
      if (on->grad.empty()) return;
      auto& dx = xn->ensure_grad();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += on->grad[i];
    });
  }
  return Tensor(result);
}

// ---------------------------------------------------------------------------
// Reductions

Tensor reduce(Graph& g, const Tensor& x, ReduceFn fn, std::optional<std::size_t> axis) {
  require_defined(x, "reduce");
  if (x.size() == 0) throw ContractError("reduce: empty input");
  const auto& shape = x.shape();
  std::size_t outer = 1, len = x.size(), inner = 1;
  Shape out_shape;
  if (axis) {
    if (*axis >= shape.size()) {
      throw ShapeError("reduce: axis " + std::to_string(*axis) + " out of range for " + shape_string(shape));
    }
    len = shape[*axis];
    for (std::size_t i = 0; i < *axis; ++i) outer *= shape[i];
    for (std::size_t i = *axis + 1; i < shape.size(); ++i) inner *= shape[i];
    for (std::size_t i = 0; i < shape.size(); ++i)
      if (i != *axis) out_shape.push_back(shape[i]);
  }
  const double factor = fn == ReduceFn::mean ? 1.0 / static_cast<double>(len) : 1.0;
  const auto xv = x.values();
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + l) * inner + i];
  if (factor != 1.0)
    for (auto& v : out) v *= factor;
  const bool rg = g.recording() && (x.requires_grad());
  auto result = make_node(std::move(out_shape), std::move(out), rg);
  if (rg) {
    g.record([xn = x.node(), on = result, outer, len, inner, factor] {
      if (on->grad.empty()) return;
      auto& dx = xn->ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t i = 0; i < inner; ++i) dx[(o * len + l) * inner + i] += on->grad[o * inner + i] * factor;
    });
  }
  return Tensor(result);
}

// ---------------------------------------------------------------------------
// Softmax family

namespace {

void softmax_backward_rows(const std::vector<double>& y, const std::vector<double>& dy, std::vector<double>& dx,
                           std::size_t rows, std::size_t width) {
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * width;
    double dot = 0.0;
    for (std::size_t j = 0; j < width; ++j) dot += dy[off + j] * y[off + j];
    for (std::size_t j = 0; j < width; ++j) dx[off + j] += y[off + j] * (dy[off + j] - dot);
  }
}

}  // namespace

Tensor softmax(Graph& g, const Tensor& x) {
  require_defined(x, "softmax");
  if (x.rank() == 0) throw ShapeError("softmax: needs at least one axis");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t off = r * width;
    double mx = xv[off];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, xv[off + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      out[off + j] = std::exp(xv[off + j] - mx);
      total += out[off + j];
    }
    for (std::size_t j = 0; j < width; ++j) out[off + j] /= total;
  }
  const bool rg = g.recording() && (x.requires_grad());
  auto result = make_node(x.shape(), std::move(out), rg);
  if (rg) {
    g.record([xn = x.node(), on = result, rows, width] {
      if (on->grad.empty()) return;
      softmax_backward_rows(on->value, on->grad, xn->ensure_grad(), rows, width);
    });
  }
  return Tensor(result);
}

Tensor masked_softmax(Graph& g, const Tensor& scores, std::span<const std::uint8_t> mask) {
  require_rank(scores, 1, "masked_softmax");
  const std::size_t n = scores.dim(0);
  if (mask.size() != n) {
    throw ShapeError("masked_softmax: mask length " + std::to_string(mask.size()) + " vs scores " +
                     shape_string(scores.shape()));
  }
  const auto sv = scores.values();
  double mx = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j]) {
      mx = std::max(mx, sv[j]);
      any = true;
    }
  }
  if (!any) throw ContractError("masked_softmax: every position is masked");
  std::vector<double> out(n, 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (mask[j]) {
      out[j] = std::exp(sv[j] - mx);
      total += out[j];
    }
  }
  for (auto& v : out) v /= total;
  const bool rg = g.recording() && (scores.requires_grad());
  auto result = make_node({n}, std::move(out), rg);
  if (rg) {
    // Masked entries have y = 0, so the ordinary softmax Jacobian already
    // routes nothing to them.
    g.record([xn = scores.node(), on = result, n] {
      if (on->grad.empty()) return;
      softmax_backward_rows(on->value, on->grad, xn->ensure_grad(), 1, n);
    });
  }
  return Tensor(result);
}

Tensor cross_entropy_masked(Graph& g, const Tensor& probs, std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask, bool* empty_sequence) {
  require_rank(probs, 2, "cross_entropy_masked");
  const std::size_t steps = probs.dim(0), vocab = probs.dim(1);
  if (targets.size() != steps || mask.size() != steps) {
    throw ShapeError("cross_entropy_masked: " + std::to_string(targets.size()) + " targets and " +
                     std::to_string(mask.size()) + " mask entries for " + shape_string(probs.shape()));
  }
  std::size_t count = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw ContractError("cross_entropy_masked: target id " + std::to_string(targets[t]) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
    if (mask[t]) ++count;
  }
  if (empty_sequence) *empty_sequence = count == 0;
  const auto pv = probs.values();
  double loss = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    if (!mask[t]) continue;
    loss -= std::log(std::max(pv[t * vocab + targets[t]], kProbabilityFloor));
  }
  if (count) loss /= static_cast<double>(count);
  const bool rg = g.recording() && (probs.requires_grad() && count > 0);
  auto result = make_node({}, {loss}, rg);
  if (rg) {
    std::vector<TokenId> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> msk(mask.begin(), mask.end());
    g.record([pn = probs.node(), on = result, tgt = std::move(tgt), msk = std::move(msk),
              vocab, count] {
      if (on->grad.empty()) return;
      auto& dp = pn->ensure_grad();
      const double dy = on->grad[0] / static_cast<double>(count);
      for (std::size_t t = 0; t < tgt.size(); ++t) {
        if (!msk[t]) continue;
        const std::size_t idx = t * vocab + static_cast<std::size_t>(tgt[t]);
        const double p = pn->value[idx];
        if (p > kProbabilityFloor) dp[idx] -= dy / p;
      }
    });
  }
  return Tensor(result);
}

Tensor cosine_similarity(Graph& g, const Tensor& u, const Tensor& v) {
  require_rank(u, 1, "cosine_similarity");
  require_same_shape(u, v, "cosine_similarity");
  const auto uv = u.values();
  const auto vv = v.values();
  double dot = 0.0, uu = 0.0, vvn = 0.0;
  for (std::size_t i = 0; i < uv.size(); ++i) {
    dot += uv[i] * vv[i];
    uu += uv[i] * uv[i];
    vvn += vv[i] * vv[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vvn);
  const bool degenerate = nu < 1e-12 || nv < 1e-12;
  const double cos = degenerate ? 0.0 : dot / (nu * nv);
  const bool rg = g.recording() && (!degenerate && (u.requires_grad() || v.requires_grad()));
  auto result = make_node({}, {cos}, rg);
  if (rg) {
    g.record([un = u.node(), vn = v.node(), on = result, nu, nv, cos] {
      if (on->grad.empty()) return;
      const double dy = on->grad[0];
      const std::size_t n = un->value.size();
      // d cos / du = v / (|u||v|) - cos * u / |u|^2
      if (un->requires_grad) {
        auto& du = un->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          du[i] += dy * (vn->value[i] / (nu * nv) - cos * un->value[i] / (nu * nu));
      }
      if (vn->requires_grad) {
        auto& dv = vn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          dv[i] += dy * (un->value[i] / (nu * nv) - cos * vn->value[i] / (nv * nv));
      }
    });
  }
  return Tensor(result);
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(Graph& g, std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  std::size_t total = 0;
  bool rg = false;
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    require_rank(p, 1, "concat");
    total += p.size();
    rg = rg || p.requires_grad();
    nodes.push_back(p.node());
  }
  rg = rg && g.recording();
  std::vector<double> out;
  out.reserve(total);
  for (const auto& p : parts) {
    const auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  auto result = make_node({total}, std::move(out), rg);
  if (rg) {
    g.record([nodes = std::move(nodes), on = result] {
      if (on->grad.empty()) return;
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t len = n->value.size();
        if (auto* d = grad_sink(n))
          for (std::size_t i = 0; i < len; ++i) (*d)[i] += on->grad[off + i];
        off += len;
      }
    });
  }
  return Tensor(result);
}

Tensor slice(Graph& g, const Tensor& x, std::size_t begin, std::size_t length) {
  require_rank(x, 1, "slice");
  if (length == 0 || begin + length > x.size()) {
    throw ShapeError("slice [" + std::to_string(begin) + ", +" + std::to_string(length) + ") out of range for " +
                     shape_string(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin),
                          xv.begin() + static_cast<std::ptrdiff_t>(begin + length));
  const bool rg = g.recording() && (x.requires_grad());
  auto result = make_node({length}, std::move(out), rg);
  if (rg) {
    g.record([xn = x.node(), on = result, begin, length] {
      if (on->grad.empty()) return;
      auto& dx = xn->ensure_grad();
      for (std::size_t i = 0; i < length; ++i) dx[begin + i] += on->grad[i];
    });
  }
  return Tensor(result);
}

Tensor stack_rows(Graph& g, std::span<const Tensor> rows) {
  if (rows.empty()) throw ContractError("stack_rows: no rows");
  const std::size_t width = rows.front().size();
  bool rg = false;
  std::vector<NodePtr> nodes;
  std::vector<double> out;
  out.reserve(rows.size() * width);
  for (const auto& r : rows) {
    require_rank(r, 1, "stack_rows");
    if (r.size() != width) {
      throw ShapeError("stack_rows: row " + shape_string(r.shape()) + " vs width " + std::to_string(width));
    }
    const auto v = r.values();
    out.insert(out.end(), v.begin(), v.end());
    rg = rg || r.requires_grad();
    nodes.push_back(r.node());
  }
  rg = rg && g.recording();
  auto result = make_node({rows.size(), width}, std::move(out), rg);
  if (rg) {
    g.record([nodes = std::move(nodes), on = result, width] {
      if (on->grad.empty()) return;
      for (std::size_t r = 0; r < nodes.size(); ++r) {
        if (auto* d = grad_sink(nodes[r]))
          for (std::size_t i = 0; i < width; ++i) (*d)[i] += on->grad[r * width + i];
      }
    });
  }
  return Tensor(result);
}

Tensor row(Graph& g, const Tensor& m, std::size_t index) {
  require_rank(m, 2, "row");
  const std::size_t rows = m.dim(0), width = m.dim(1);
  if (index >= rows) throw ShapeError("row " + std::to_string(index) + " out of range for " + shape_string(m.shape()));
  const auto mv = m.values();
  std::vector<double> out(mv.begin() + static_cast<std::ptrdiff_t>(index * width),
                          mv.begin() + static_cast<std::ptrdiff_t>((index + 1) * width));
  const bool rg = g.recording() && (m.requires_grad());
  auto result = make_node({width}, std::move(out), rg);
  if (rg) {
    g.record([mn = m.node(), on = result, index, width] {
      if (on->grad.empty()) return;
      auto& dm = mn->ensure_grad();
      for (std::size_t i = 0; i < width; ++i) dm[index * width + i] += on->grad[i];
    });
  }
  return Tensor(result);
}

// ---------------------------------------------------------------------------
// Initialization

double xavier_bound(const Shape& shape) {
  if (shape.size() != 2) throw ShapeError("xavier_init: expected a 2-D shape, got " + shape_string(shape));
  if (shape[0] == 0 || shape[1] == 0) throw ShapeError("xavier_init: zero dimension in " + shape_string(shape));
  return std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
}

Tensor xavier_init(const Shape& shape, Rng& rng) {
  const double bound = xavier_bound(shape);
  std::vector<double> values(shape_size(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return Tensor(shape, std::move(values));
}

}  // namespace redecode
