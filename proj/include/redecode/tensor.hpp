#pragma once

// Dense double-precision tensors with define-by-run reverse-mode
// differentiation. A Tensor is a cheap shared handle onto a node; ops take
// the Graph they record into as their first argument.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace redecode {

using Shape = std::vector<std::size_t>;
using TokenId = std::int32_t;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> values() const;
  /// Writable view. Only for leaves (parameters, inputs); never mutate a
  /// tensor that an unfinished graph still references.
  std::span<double> mutable_values();
  std::vector<double> to_vector() const;

  double item() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Allocates a zero gradient on first use.
  std::span<double> mutable_grad();
  void zero_grad();

  std::uint64_t id() const;
  bool same_node(const Tensor& other) const noexcept { return node_ == other.node_; }

  /// Deep copy of shape and values; the copy has no gradient and no graph history.
  Tensor clone() const;

  // Internal handle used by op implementations.
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Tape of recorded primitive applications. Rebuilt for every forward pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse. Gradients
  /// accumulate into whatever is already stored on each tensor.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return tape_.size(); }

  /// When off, ops produce plain values and record nothing (inference).
  void set_recording(bool on) noexcept { recording_ = on; }
  bool recording() const noexcept { return recording_; }

  void record(std::function<void()> backward_fn) { tape_.push_back(std::move(backward_fn)); }

 private:
  std::vector<std::function<void()>> tape_;
  bool recording_ = true;
};

/// Deterministic, platform-independent random stream (mt19937_64 engine
/// with hand-rolled distributions, so output does not depend on the
/// standard library's distribution implementations).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  std::uint64_t seed() const noexcept { return seed_; }

  /// SplitMix64 combination used to derive per-step and per-epoch seeds.
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b);

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  std::optional<double> spare_normal_;
};

// ---------------------------------------------------------------------------
// Primitive ops. None of them broadcast; shapes must agree exactly.

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
/// W[m x k] * x[k] -> [m]
Tensor matvec(Graph& g, const Tensor& w, const Tensor& x);
/// x[m]^T * W[m x k] -> [k]
Tensor vecmat(Graph& g, const Tensor& x, const Tensor& w);
/// W[m x k] * x[k] + b[m]; fused form of matvec followed by add.
Tensor affine(Graph& g, const Tensor& w, const Tensor& x, const Tensor& b);

enum class UnaryFn { tanh, sigmoid, exp, log, negate };
Tensor elementwise_unary(Graph& g, const Tensor& x, UnaryFn fn);
inline Tensor tanh(Graph& g, const Tensor& x) { return elementwise_unary(g, x, UnaryFn::tanh); }
inline Tensor sigmoid(Graph& g, const Tensor& x) { return elementwise_unary(g, x, UnaryFn::sigmoid); }
inline Tensor exp(Graph& g, const Tensor& x) { return elementwise_unary(g, x, UnaryFn::exp); }
inline Tensor log(Graph& g, const Tensor& x) { return elementwise_unary(g, x, UnaryFn::log); }
inline Tensor negate(Graph& g, const Tensor& x) { return elementwise_unary(g, x, UnaryFn::negate); }

enum class BinaryFn { add, sub, mul };
Tensor elementwise_binary(Graph& g, const Tensor& a, const Tensor& b, BinaryFn fn);
inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) { return elementwise_binary(g, a, b, BinaryFn::add); }
inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) { return elementwise_binary(g, a, b, BinaryFn::sub); }
inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) { return elementwise_binary(g, a, b, BinaryFn::mul); }

/// Sum of any number of same-shape tensors.
Tensor add_n(Graph& g, std::span<const Tensor> xs);
/// x * factor
Tensor scale(Graph& g, const Tensor& x, double factor);
/// x + offset, per element
Tensor add_scalar(Graph& g, const Tensor& x, double offset);

enum class ReduceFn { sum, mean };
/// Reduces over `axis`, or over every element (scalar result) when no axis is given.
Tensor reduce(Graph& g, const Tensor& x, ReduceFn fn, std::optional<std::size_t> axis = std::nullopt);
inline Tensor sum(Graph& g, const Tensor& x) { return reduce(g, x, ReduceFn::sum); }
inline Tensor mean(Graph& g, const Tensor& x) { return reduce(g, x, ReduceFn::mean); }

/// Softmax over the last axis, max-subtracted.
Tensor softmax(Graph& g, const Tensor& x);
/// Softmax of a vector restricted to positions where mask != 0; masked
/// positions receive exactly zero weight.
Tensor masked_softmax(Graph& g, const Tensor& scores, std::span<const std::uint8_t> mask);

inline constexpr double kProbabilityFloor = 1e-12;

/// -mean over unmasked rows t of log(max(probs[t, target_t], 1e-12)).
/// With an all-zero mask the result is 0 with zero gradient and
/// *empty_sequence (when given) is set.
Tensor cross_entropy_masked(Graph& g, const Tensor& probs, std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask, bool* empty_sequence = nullptr);

/// u.v / (|u||v|); defined as 0 (zero gradient) when either norm is below 1e-12.
Tensor cosine_similarity(Graph& g, const Tensor& u, const Tensor& v);

/// Structural helpers for rank-1 / rank-2 tensors.
Tensor concat(Graph& g, std::span<const Tensor> parts);
Tensor slice(Graph& g, const Tensor& x, std::size_t begin, std::size_t length);
Tensor stack_rows(Graph& g, std::span<const Tensor> rows);
Tensor row(Graph& g, const Tensor& m, std::size_t index);

// ---------------------------------------------------------------------------
// Initialization and verification.

/// Uniform on +-sqrt(6 / (fan_in + fan_out)) for a 2-D shape [fan_out x fan_in].
Tensor xavier_init(const Shape& shape, Rng& rng);
double xavier_bound(const Shape& shape);

struct GradCheckReport {
  double max_error = 0.0;        ///< max |analytic - numeric| / max(1, |numeric|)
  std::size_t worst_tensor = 0;  ///< index into the checked tensor list
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using ScalarFn = std::function<Tensor(Graph&)>;

/// Central-difference check of backward() for every coordinate of every
/// tensor in `inputs`. `f` must rebuild its graph on each call and be a
/// deterministic function of the inputs' current values.
GradCheckReport finite_diff_check(const ScalarFn& f, std::span<Tensor> inputs, double epsilon);
double finite_diff_check(const ScalarFn& f, Tensor& input, double epsilon);

/// Compares caller-supplied analytic gradients against central differences.
GradCheckReport compare_with_finite_differences(const ScalarFn& f, std::span<Tensor> inputs,
                                                std::span<const std::vector<double>> analytic,
                                                double epsilon);

}  // namespace redecode
