#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gda {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Lower bound applied to log/sqrt arguments and to division denominators.
inline constexpr double kClampEps = 1e-12;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Handle of a node on a gradient tape. Stale once the owning tape is cleared.
struct NodeRef {
  std::uint64_t generation = 0;
  std::uint32_t index = 0;
};

/// Dense row-major array of doubles. Storage is shared and immutable between
/// copies; mutation goes through mutable_data(), which detaches first.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_values(Shape shape, std::vector<double> values);
  /// Box-Muller over splitmix64; bitwise reproducible for a given seed.
  static Tensor gaussian(Shape shape, double mean, double stddev, std::uint64_t seed);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data_->size(); }

  std::span<const double> data() const { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;
  std::vector<double> to_vector() const { return *data_; }

  /// True when the tensor is a live node on the active tape.
  bool requires_grad() const;
  const std::optional<NodeRef>& node() const { return node_; }
  Tensor detach() const;

  /// Copy-on-write access. Drops any tape node.
  std::vector<double>& mutable_data();

 private:
  friend class Tape;
  Tensor(Shape shape, std::shared_ptr<std::vector<double>> data);

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::optional<NodeRef> node_;
};

/// Accumulated gradients produced by backward().
class Gradients {
 public:
  /// Gradient for a watched tensor; zeros when the loss does not depend on it.
  Tensor of(const Tensor& t) const;
  bool has(const Tensor& t) const;
  std::size_t visited() const { return visited_; }

 private:
  friend class Tape;
  std::uint64_t generation_ = 0;
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
  std::size_t visited_ = 0;
};

/// Per-input gradient accumulators handed to a backward rule. An empty span
/// means that input does not need a gradient.
using GradSinks = std::vector<std::span<double>>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSinks& sinks)>;

/// Reverse-mode recording. One tape per thread; entries are appended in
/// execution order so the vector is already topologically sorted.
class Tape {
 public:
  struct Entry {
    std::string kind;
    std::vector<std::optional<std::uint32_t>> inputs;
    Shape shape;
    BackwardFn backward;
  };

  Tape();

  /// Registers `t` as a differentiation leaf.
  Tensor watch(const Tensor& t);
  /// Records an op producing `out` from `inputs`. No-op when nothing upstream is tracked.
  Tensor record(std::string kind, Tensor out, std::initializer_list<const Tensor*> inputs,
                BackwardFn backward);
  Tensor record(std::string kind, Tensor out, const std::vector<const Tensor*>& inputs,
                BackwardFn backward);

  Gradients backward(const Tensor& loss);
  void clear();

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }
  bool is_live(const NodeRef& ref) const;
  std::uint64_t generation() const { return generation_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::uint64_t generation_;
  bool enabled_ = true;
  std::vector<Entry> entries_;
};

Tape& active_tape();

/// Suspends recording on the active tape for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Runs backward on the active tape, then clears it.
Gradients backward(const Tensor& loss);

// Elementwise binary with numpy-style broadcasting.
enum class BinaryKind { Add, Sub, Mul, Div };
Tensor elementwise_binary(BinaryKind kind, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Denominators with |d| < kClampEps are replaced by ±kClampEps.
Tensor div(const Tensor& a, const Tensor& b);
Shape broadcast_shape(const Shape& a, const Shape& b);

enum class UnaryKind { Relu, Exp, Log, Sqrt, Tanh, Sigmoid, Neg, Square };
Tensor elementwise_unary(UnaryKind kind, const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);  // log(max(a, eps))
Tensor sqrt(const Tensor& a);  // sqrt(max(a, eps))
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
/// Constant (non-differentiable) mask applied elementwise; shapes must match.
Tensor mask(const Tensor& a, std::span<const double> keep);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a);
Tensor operator+(const Tensor& a, double c);
Tensor operator-(const Tensor& a, double c);
Tensor operator*(const Tensor& a, double c);
Tensor operator*(double c, const Tensor& a);

enum class ReduceKind { Sum, Mean };
Tensor reduce(ReduceKind kind, const Tensor& a, std::vector<std::size_t> axes, bool keepdims = false);
Tensor sum(const Tensor& a, std::vector<std::size_t> axes, bool keepdims = false);
Tensor mean(const Tensor& a, std::vector<std::size_t> axes, bool keepdims = false);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
/// Euclidean norm of all elements. Gradient is zero at the origin.
Tensor norm2(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, std::vector<std::size_t> perm);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Constant padding of the last two axes by `pad` on every side.
Tensor pad2d(const Tensor& a, std::size_t pad, double value = 0.0);

Tensor matmul(const Tensor& a, const Tensor& b);

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h, evaluated with recording off.
Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            double h = 1e-5);

namespace detail {
// Row-major C[m,n] (+)= op(A) * op(B).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
}  // namespace detail

}  // namespace gda
