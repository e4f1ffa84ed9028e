#include "gda/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Core>

#include "gda/random.hpp"

namespace gda {

namespace {

constexpr std::size_t kMaxElements = std::size_t{1} << 36;

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must be nonempty");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dims must be >= 1, got " + shape_str(shape));
    if (n > kMaxElements / d) throw ShapeError("dimension overflow for shape " + shape_str(shape));
    n *= d;
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Strides of `in` when broadcast against `out` (same rank after left padding).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t offset = out.size() - in.size();
  std::vector<std::size_t> padded(out.size(), 1);
  for (std::size_t i = 0; i < in.size(); ++i) padded[offset + i] = in[i];
  auto s = strides_of(padded);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (padded[i] == 1 && out[i] != 1) s[i] = 0;
  return s;
}

// Calls fn(out_index, a_index, b_index) over every element of `out`.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
  const std::size_t rank = out.size();
  const std::size_t total = shape_numel(out);
  const std::size_t inner = out[rank - 1];
  const std::size_t ia_step = sa[rank - 1];
  const std::size_t ib_step = sb[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) fn(o + j, ia + j * ia_step, ib + j * ib_step);
    // advance the outer multi-index
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * idx[d];
      ib -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
}

double clamp_den(double d) {
  if (std::abs(d) >= kClampEps) return d;
  return d < 0.0 ? -kClampEps : kClampEps;
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor make(Shape shape, std::vector<double> values) {
  return Tensor::from_values(std::move(shape), std::move(values));
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : shape_{1}, data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::shared_ptr<std::vector<double>> data)
    : shape_(std::move(shape)), data_(std::move(data)) {}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  validate_shape(shape);
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::make_shared<std::vector<double>>(n, value));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size())
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  return Tensor(std::move(shape), std::make_shared<std::vector<double>>(std::move(values)));
}

Tensor Tensor::gaussian(Shape shape, double mean, double stddev, std::uint64_t seed) {
  validate_shape(shape);
  SplitMix64 rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = mean + stddev * rng.gaussian();
  return Tensor(std::move(shape), std::make_shared<std::vector<double>>(std::move(v)));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw ShapeError("axis out of range");
  return shape_[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

bool Tensor::requires_grad() const { return node_ && active_tape().is_live(*node_); }

Tensor Tensor::detach() const { return Tensor(shape_, data_); }

std::vector<double>& Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  node_.reset();
  return *data_;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : generation_(next_generation()) {}

bool Tape::is_live(const NodeRef& ref) const {
  return ref.generation == generation_ && ref.index < entries_.size();
}

Tensor Tape::watch(const Tensor& t) {
  Tensor out = t.detach();
  entries_.push_back(Entry{"leaf", {}, t.shape(), nullptr});
  out.node_ = NodeRef{generation_, static_cast<std::uint32_t>(entries_.size() - 1)};
  return out;
}

Tensor Tape::record(std::string kind, Tensor out, std::initializer_list<const Tensor*> inputs,
                    BackwardFn backward) {
  return record(std::move(kind), std::move(out), std::vector<const Tensor*>(inputs),
                std::move(backward));
}

Tensor Tape::record(std::string kind, Tensor out, const std::vector<const Tensor*>& inputs,
                    BackwardFn backward) {
  if (!enabled_) return out;
  std::vector<std::optional<std::uint32_t>> ids;
  ids.reserve(inputs.size());
  bool any = false;
  for (const Tensor* t : inputs) {
    if (t->node_ && is_live(*t->node_)) {
      ids.emplace_back(t->node_->index);
      any = true;
    } else {
      ids.emplace_back(std::nullopt);
    }
  }
  if (!any) return out;
  entries_.push_back(Entry{std::move(kind), std::move(ids), out.shape(), std::move(backward)});
  out.node_ = NodeRef{generation_, static_cast<std::uint32_t>(entries_.size() - 1)};
  return out;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw GradError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.node_ || !is_live(*loss.node_)) throw GradError("backward() on a detached loss");

  Gradients g;
  g.generation_ = generation_;
  g.grads_.resize(entries_.size());
  g.shapes_.resize(entries_.size());
  const std::uint32_t root = loss.node_->index;
  g.grads_[root] = {1.0};

  for (std::size_t i = root + 1; i-- > 0;) {
    if (g.grads_[i].empty()) continue;
    ++g.visited_;
    Entry& e = entries_[i];
    g.shapes_[i] = e.shape;
    if (!e.backward) continue;  // leaf: keep
    GradSinks sinks;
    sinks.reserve(e.inputs.size());
    for (const auto& in : e.inputs) {
      if (!in) {
        sinks.emplace_back();
        continue;
      }
      auto& buf = g.grads_[*in];
      if (buf.empty()) buf.assign(shape_numel(entries_[*in].shape), 0.0);
      sinks.emplace_back(buf);
    }
    e.backward(g.grads_[i], sinks);
    std::vector<double>().swap(g.grads_[i]);  // intermediate grads are not kept
  }
  return g;
}

void Tape::clear() {
  entries_.clear();
  generation_ = next_generation();
}

Tape& active_tape() {
  thread_local Tape tape;
  return tape;
}

NoGradGuard::NoGradGuard() : previous_(active_tape().enabled()) { active_tape().set_enabled(false); }
NoGradGuard::~NoGradGuard() { active_tape().set_enabled(previous_); }

Gradients backward(const Tensor& loss) {
  Tape& tape = active_tape();
  Gradients g = tape.backward(loss);
  tape.clear();
  return g;
}

Tensor Gradients::of(const Tensor& t) const {
  const auto& node = t.node();
  if (node && node->generation == generation_ && node->index < grads_.size() &&
      !grads_[node->index].empty())
    return make(t.shape(), grads_[node->index]);
  return Tensor::zeros(t.shape());
}

bool Gradients::has(const Tensor& t) const {
  const auto& node = t.node();
  return node && node->generation == generation_ && node->index < grads_.size() &&
         !grads_[node->index].empty();
}

// ---------------------------------------------------------------------------
// Elementwise

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor elementwise_binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(shape_numel(out_shape));
  const bool same = a.shape() == b.shape();

  auto run = [&](auto op) {
    if (same) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(ad[i], bd[i]);
    } else {
      for_each_broadcast(out_shape, sa, sb,
                         [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = op(ad[ia], bd[ib]); });
    }
  };
  const char* name = "add";
  switch (kind) {
    case BinaryKind::Add: run([](double x, double y) { return x + y; }); break;
    case BinaryKind::Sub: run([](double x, double y) { return x - y; }); name = "sub"; break;
    case BinaryKind::Mul: run([](double x, double y) { return x * y; }); name = "mul"; break;
    case BinaryKind::Div: run([](double x, double y) { return x / clamp_den(y); }); name = "div"; break;
  }

  Tensor result = make(out_shape, std::move(out));
  return active_tape().record(
      name, std::move(result), {&a, &b},
      [kind, a = a.detach(), b = b.detach(), out_shape, sa, sb, same](std::span<const double> g, GradSinks& sinks) {
        auto ga = sinks[0];
        auto gb = sinks[1];
        const auto ad = a.data();
        const auto bd = b.data();
        auto visit = [&](auto fn) {
          if (same) {
            for (std::size_t i = 0; i < g.size(); ++i) fn(i, i, i);
          } else {
            for_each_broadcast(out_shape, sa, sb, fn);
          }
        };
        switch (kind) {
          case BinaryKind::Add:
            visit([&](std::size_t o, std::size_t ia, std::size_t ib) {
              if (!ga.empty()) ga[ia] += g[o];
              if (!gb.empty()) gb[ib] += g[o];
            });
            break;
          case BinaryKind::Sub:
            visit([&](std::size_t o, std::size_t ia, std::size_t ib) {
              if (!ga.empty()) ga[ia] += g[o];
              if (!gb.empty()) gb[ib] -= g[o];
            });
            break;
          case BinaryKind::Mul:
            visit([&](std::size_t o, std::size_t ia, std::size_t ib) {
              if (!ga.empty()) ga[ia] += g[o] * bd[ib];
              if (!gb.empty()) gb[ib] += g[o] * ad[ia];
            });
            break;
          case BinaryKind::Div:
            visit([&](std::size_t o, std::size_t ia, std::size_t ib) {
              const double den = clamp_den(bd[ib]);
              if (!ga.empty()) ga[ia] += g[o] / den;
              if (!gb.empty() && den == bd[ib]) gb[ib] -= g[o] * ad[ia] / (den * den);
            });
            break;
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_binary(BinaryKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_binary(BinaryKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise_binary(BinaryKind::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise_binary(BinaryKind::Div, a, b); }

Tensor elementwise_unary(UnaryKind kind, const Tensor& a) {
  const auto x = a.data();
  std::vector<double> y(x.size());
  const char* name = "";
  switch (kind) {
    case UnaryKind::Relu:
      name = "relu";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case UnaryKind::Exp:
      name = "exp";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::exp(x[i]);
      break;
    case UnaryKind::Log:
      name = "log";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::log(std::max(x[i], kClampEps));
      break;
    case UnaryKind::Sqrt:
      name = "sqrt";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::sqrt(std::max(x[i], kClampEps));
      break;
    case UnaryKind::Tanh:
      name = "tanh";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
      break;
    case UnaryKind::Sigmoid:
      name = "sigmoid";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x[i]);
      break;
    case UnaryKind::Neg:
      name = "neg";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
      break;
    case UnaryKind::Square:
      name = "square";
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i];
      break;
  }
  Tensor result = make(a.shape(), std::move(y));
  return active_tape().record(
      name, result, {&a},
      [kind, a = a.detach(), out = result.detach()](std::span<const double> g, GradSinks& sinks) {
        auto gx = sinks[0];
        const auto x = a.data();
        const auto y = out.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          double d = 0.0;
          switch (kind) {
            case UnaryKind::Relu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
            case UnaryKind::Exp: d = y[i]; break;
            case UnaryKind::Log: d = x[i] > kClampEps ? 1.0 / x[i] : 0.0; break;
            case UnaryKind::Sqrt: d = x[i] > kClampEps ? 0.5 / y[i] : 0.0; break;
            case UnaryKind::Tanh: d = 1.0 - y[i] * y[i]; break;
            case UnaryKind::Sigmoid: d = y[i] * (1.0 - y[i]); break;
            case UnaryKind::Neg: d = -1.0; break;
            case UnaryKind::Square: d = 2.0 * x[i]; break;
          }
          gx[i] += g[i] * d;
        }
      });
}

Tensor relu(const Tensor& a) { return elementwise_unary(UnaryKind::Relu, a); }
Tensor exp(const Tensor& a) { return elementwise_unary(UnaryKind::Exp, a); }
Tensor log(const Tensor& a) { return elementwise_unary(UnaryKind::Log, a); }
Tensor sqrt(const Tensor& a) { return elementwise_unary(UnaryKind::Sqrt, a); }
Tensor tanh(const Tensor& a) { return elementwise_unary(UnaryKind::Tanh, a); }
Tensor sigmoid(const Tensor& a) { return elementwise_unary(UnaryKind::Sigmoid, a); }
Tensor neg(const Tensor& a) { return elementwise_unary(UnaryKind::Neg, a); }
Tensor square(const Tensor& a) { return elementwise_unary(UnaryKind::Square, a); }

Tensor add_scalar(const Tensor& a, double c) {
  auto v = a.to_vector();
  for (double& x : v) x += c;
  return active_tape().record("add_scalar", make(a.shape(), std::move(v)), {&a},
                              [](std::span<const double> g, GradSinks& sinks) {
                                for (std::size_t i = 0; i < g.size(); ++i) sinks[0][i] += g[i];
                              });
}

Tensor mul_scalar(const Tensor& a, double c) {
  auto v = a.to_vector();
  for (double& x : v) x *= c;
  return active_tape().record("mul_scalar", make(a.shape(), std::move(v)), {&a},
                              [c](std::span<const double> g, GradSinks& sinks) {
                                for (std::size_t i = 0; i < g.size(); ++i) sinks[0][i] += c * g[i];
                              });
}

Tensor mask(const Tensor& a, std::span<const double> keep) {
  if (keep.size() != a.numel()) throw ShapeError("mask size does not match tensor");
  std::vector<double> k(keep.begin(), keep.end());
  auto v = a.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= k[i];
  return active_tape().record("mask", make(a.shape(), std::move(v)), {&a},
                              [k = std::move(k)](std::span<const double> g, GradSinks& sinks) {
                                for (std::size_t i = 0; i < g.size(); ++i) sinks[0][i] += g[i] * k[i];
                              });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
Tensor operator-(const Tensor& a) { return neg(a); }
Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

// ---------------------------------------------------------------------------
// Reductions

Tensor reduce(ReduceKind kind, const Tensor& a, std::vector<std::size_t> axes, bool keepdims) {
  const Shape& in = a.shape();
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t ax : axes) {
    if (ax >= in.size() || reduced[ax])
      throw ShapeError("invalid reduction axis " + std::to_string(ax) + " for shape " + shape_str(in));
    reduced[ax] = true;
  }
  Shape kept(in.size());
  std::size_t count = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    kept[i] = reduced[i] ? 1 : in[i];
    if (reduced[i]) count *= in[i];
  }
  Shape out_shape;
  if (keepdims) {
    out_shape = kept;
  } else {
    for (std::size_t i = 0; i < in.size(); ++i)
      if (!reduced[i]) out_shape.push_back(in[i]);
    if (out_shape.empty()) out_shape = {1};
  }
  const double scale = kind == ReduceKind::Mean ? 1.0 / static_cast<double>(count) : 1.0;
  const auto sk = broadcast_strides(kept, in);
  const auto si = strides_of(in);
  const auto x = a.data();
  std::vector<double> out(shape_numel(kept), 0.0);
  for_each_broadcast(in, si, sk, [&](std::size_t, std::size_t ii, std::size_t io) { out[io] += x[ii]; });
  if (scale != 1.0)
    for (double& v : out) v *= scale;

  return active_tape().record(kind == ReduceKind::Mean ? "mean" : "sum", make(out_shape, std::move(out)),
                              {&a}, [in, si, sk, scale](std::span<const double> g, GradSinks& sinks) {
                                auto gx = sinks[0];
                                for_each_broadcast(in, si, sk, [&](std::size_t, std::size_t ii, std::size_t io) {
                                  gx[ii] += scale * g[io];
                                });
                              });
}

Tensor sum(const Tensor& a, std::vector<std::size_t> axes, bool keepdims) {
  return reduce(ReduceKind::Sum, a, std::move(axes), keepdims);
}
Tensor mean(const Tensor& a, std::vector<std::size_t> axes, bool keepdims) {
  return reduce(ReduceKind::Mean, a, std::move(axes), keepdims);
}

Tensor sum_all(const Tensor& a) {
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return sum(a, axes);
}

Tensor mean_all(const Tensor& a) {
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), 0);
  return mean(a, axes);
}

Tensor norm2(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  const double n = std::sqrt(s);
  return active_tape().record("norm2", Tensor::scalar(n), {&a},
                              [a = a.detach(), n](std::span<const double> g, GradSinks& sinks) {
                                if (n == 0.0) return;
                                const auto x = a.data();
                                for (std::size_t i = 0; i < x.size(); ++i) sinks[0][i] += g[0] * x[i] / n;
                              });
}

// ---------------------------------------------------------------------------
// Shape ops

Tensor reshape(const Tensor& a, Shape shape) {
  validate_shape(shape);
  if (shape_numel(shape) != a.numel())
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  return active_tape().record("reshape", make(std::move(shape), a.to_vector()), {&a},
                              [](std::span<const double> g, GradSinks& sinks) {
                                for (std::size_t i = 0; i < g.size(); ++i) sinks[0][i] += g[i];
                              });
}

Tensor transpose(const Tensor& a, std::vector<std::size_t> perm) {
  const Shape& in = a.shape();
  if (perm.size() != in.size()) throw ShapeError("transpose permutation has wrong length");
  std::vector<bool> seen(in.size(), false);
  for (std::size_t p : perm) {
    if (p >= in.size() || seen[p]) throw ShapeError("transpose axes are not a permutation");
    seen[p] = true;
  }
  Shape out_shape(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out_shape[i] = in[perm[i]];
  const auto si = strides_of(in);
  std::vector<std::size_t> gather(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) gather[i] = si[perm[i]];
  const auto so = strides_of(out_shape);
  const auto x = a.data();
  std::vector<double> out(x.size());
  for_each_broadcast(out_shape, so, gather, [&](std::size_t, std::size_t o, std::size_t i) { out[o] = x[i]; });
  return active_tape().record("transpose", make(out_shape, std::move(out)), {&a},
                              [out_shape, so, gather](std::span<const double> g, GradSinks& sinks) {
                                auto gx = sinks[0];
                                for_each_broadcast(out_shape, so, gather,
                                                   [&](std::size_t, std::size_t o, std::size_t i) { gx[i] += g[o]; });
                              });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& in = a.shape();
  if (axis >= in.size()) throw ShapeError("slice axis out of range");
  if (begin >= end || end > in[axis])
    throw ShapeError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for axis of size " +
                     std::to_string(in[axis]));
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
  const std::size_t span_in = in[axis] * inner;
  const std::size_t span_out = (end - begin) * inner;
  Shape out_shape = in;
  out_shape[axis] = end - begin;
  const auto x = a.data();
  std::vector<double> out(outer * span_out);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * span_in + begin * inner), span_out,
                out.begin() + static_cast<std::ptrdiff_t>(o * span_out));
  return active_tape().record("slice", make(out_shape, std::move(out)), {&a},
                              [outer, span_in, span_out, offset = begin * inner](std::span<const double> g,
                                                                                 GradSinks& sinks) {
                                for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t j = 0; j < span_out; ++j)
                                    sinks[0][o * span_in + offset + j] += g[o * span_out + j];
                              });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != first.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && p.shape()[i] != first[i])
        throw ShapeError("concat dims mismatch: " + shape_str(first) + " vs " + shape_str(p.shape()));
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t row = out_shape[axis] * inner;
  std::vector<double> out(outer * row);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const auto x = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    widths.push_back(w);
    offset += w;
  }
  std::vector<const Tensor*> inputs;
  for (const Tensor& p : parts) inputs.push_back(&p);
  return active_tape().record("concat", make(out_shape, std::move(out)), inputs,
                              [outer, row, widths](std::span<const double> g, GradSinks& sinks) {
                                std::size_t off = 0;
                                for (std::size_t k = 0; k < widths.size(); ++k) {
                                  if (!sinks[k].empty())
                                    for (std::size_t o = 0; o < outer; ++o)
                                      for (std::size_t j = 0; j < widths[k]; ++j)
                                        sinks[k][o * widths[k] + j] += g[o * row + off + j];
                                  off += widths[k];
                                }
                              });
}

Tensor pad2d(const Tensor& a, std::size_t pad, double value) {
  const Shape& in = a.shape();
  if (in.size() < 2) throw ShapeError("pad2d needs rank >= 2");
  const std::size_t h = in[in.size() - 2];
  const std::size_t w = in[in.size() - 1];
  const std::size_t planes = a.numel() / (h * w);
  const std::size_t ho = h + 2 * pad;
  const std::size_t wo = w + 2 * pad;
  Shape out_shape = in;
  out_shape[in.size() - 2] = ho;
  out_shape[in.size() - 1] = wo;
  const auto x = a.data();
  std::vector<double> out(planes * ho * wo, value);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < h; ++r)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((p * h + r) * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>((p * ho + r + pad) * wo + pad));
  return active_tape().record("pad2d", make(out_shape, std::move(out)), {&a},
                              [planes, h, w, ho, wo, pad](std::span<const double> g, GradSinks& sinks) {
                                for (std::size_t p = 0; p < planes; ++p)
                                  for (std::size_t r = 0; r < h; ++r)
                                    for (std::size_t c = 0; c < w; ++c)
                                      sinks[0][(p * h + r) * w + c] += g[(p * ho + r + pad) * wo + pad + c];
                              });
}

// ---------------------------------------------------------------------------
// Matmul

namespace detail {

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Index = Eigen::Index;
  Eigen::Map<RowMajor> C(c, static_cast<Index>(m), static_cast<Index>(n));
  if (!accumulate) C.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  const auto mi = static_cast<Index>(m), ni = static_cast<Index>(n), ki = static_cast<Index>(k);
  const Eigen::Map<const RowMajor> A(a, trans_a ? ki : mi, trans_a ? mi : ki);
  const Eigen::Map<const RowMajor> B(b, trans_b ? ni : ki, trans_b ? ki : ni);
  if (trans_a && trans_b)
    C.noalias() += A.transpose() * B.transpose();
  else if (trans_a)
    C.noalias() += A.transpose() * B;
  else if (trans_b)
    C.noalias() += A * B.transpose();
  else
    C.noalias() += A * B;
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul needs rank-2 operands");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n);
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return active_tape().record("matmul", make({m, n}, std::move(out)), {&a, &b},
                              [a = a.detach(), b = b.detach(), m, n, k](std::span<const double> g, GradSinks& sinks) {
                                if (!sinks[0].empty())  // g * b^T
                                  detail::gemm(false, true, m, k, n, g.data(), b.data().data(), sinks[0].data(), true);
                                if (!sinks[1].empty())  // a^T * g
                                  detail::gemm(true, false, k, n, m, a.data().data(), g.data(), sinks[1].data(), true);
                              });
}

// ---------------------------------------------------------------------------

Tensor finite_diff_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  NoGradGuard guard;
  std::vector<double> base = x.to_vector();
  std::vector<double> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double orig = base[i];
    base[i] = orig + h;
    const double fp = f(Tensor::from_values(x.shape(), base));
    base[i] = orig - h;
    const double fm = f(Tensor::from_values(x.shape(), base));
    base[i] = orig;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor::from_values(x.shape(), std::move(grad));
}

}  // namespace gda
