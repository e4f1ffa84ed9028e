#include "gda/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "gda/layers.hpp"
#include "gda/objectives.hpp"
#include "gda/random.hpp"
#include "gda/spectrum.hpp"
#include "gda/tensor.hpp"

namespace gda {

namespace {

using OpFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Case {
  std::vector<Tensor> inputs;
  OpFn fn;
};

using CaseMaker = std::function<Case(SplitMix64&)>;

Tensor uniform(Shape shape, double lo, double hi, SplitMix64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v));
}

// Values bounded away from zero, either sign. Keeps relu and max-pool off their kinks.
Tensor signed_away(Shape shape, double lo, double hi, SplitMix64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v));
}

Tensor probs(std::size_t b, std::size_t c, SplitMix64& rng) {
  std::vector<double> v(b * c);
  for (std::size_t i = 0; i < b; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += v[i * c + j] = rng.uniform(0.1, 1.0);
    for (std::size_t j = 0; j < c; ++j) v[i * c + j] /= s;
  }
  return Tensor::from_values({b, c}, std::move(v));
}

Tensor flip_backward(const Tensor& t) {
  return active_tape().record("sign_flip", t.detach(), {&t}, [](std::span<const double> g, GradSinks& sinks) {
    if (sinks[0].empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) sinks[0][i] -= g[i];
  });
}

double projected(const Tensor& out, const Tensor& w) { return sum_all(mul(out, w)).item(); }

double relative_error(const Case& c, SplitMix64& rng, bool flip) {
  Tape& tape = active_tape();
  tape.clear();

  Tensor w;
  {
    NoGradGuard guard;
    w = c.fn(c.inputs);
  }
  w = uniform(w.shape(), -1.0, 1.0, rng);

  std::vector<Tensor> watched;
  for (const Tensor& t : c.inputs) watched.push_back(tape.watch(t));
  Tensor out = c.fn(watched);
  if (flip) out = flip_backward(out);
  const Tensor loss = sum_all(mul(out, w));
  const Gradients grads = tape.backward(loss);
  std::vector<Tensor> analytic;
  for (const Tensor& t : watched) analytic.push_back(grads.of(t));
  tape.clear();

  double max_diff = 0.0, max_mag = 1e-8;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const Tensor numeric = finite_diff_gradient(
        [&](const Tensor& xi) {
          std::vector<Tensor> args = c.inputs;
          args[i] = xi;
          return projected(c.fn(args), w);
        },
        c.inputs[i]);
    for (std::size_t k = 0; k < numeric.numel(); ++k) {
      max_diff = std::max(max_diff, std::abs(analytic[i][k] - numeric[k]));
      max_mag = std::max({max_mag, std::abs(analytic[i][k]), std::abs(numeric[k])});
    }
  }
  return max_diff / max_mag;
}

std::vector<std::pair<std::string, CaseMaker>> registry() {
  std::vector<std::pair<std::string, CaseMaker>> r;
  auto unary = [&](const std::string& name, std::function<Tensor(const Tensor&)> f, double lo, double hi,
                   bool positive) {
    r.emplace_back(name, [=](SplitMix64& rng) {
      Tensor x = positive ? uniform({3, 4}, lo, hi, rng) : signed_away({3, 4}, lo, hi, rng);
      return Case{{x}, [f](const std::vector<Tensor>& in) { return f(in[0]); }};
    });
  };
  auto binary = [&](const std::string& name, std::function<Tensor(const Tensor&, const Tensor&)> f) {
    r.emplace_back(name, [=](SplitMix64& rng) {
      // The second operand broadcasts along the leading axis.
      Tensor a = signed_away({3, 4}, 0.5, 2.0, rng);
      Tensor b = signed_away({1, 4}, 0.5, 2.0, rng);
      return Case{{a, b}, [f](const std::vector<Tensor>& in) { return f(in[0], in[1]); }};
    });
  };

  binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  binary("div", [](const Tensor& a, const Tensor& b) { return div(a, b); });
  unary("relu", [](const Tensor& x) { return relu(x); }, 0.05, 2.0, false);
  unary("exp", [](const Tensor& x) { return exp(x); }, 0.05, 1.5, false);
  unary("log", [](const Tensor& x) { return log(x); }, 0.2, 3.0, true);
  unary("sqrt", [](const Tensor& x) { return sqrt(x); }, 0.2, 3.0, true);
  unary("tanh", [](const Tensor& x) { return tanh(x); }, 0.05, 2.0, false);
  unary("sigmoid", [](const Tensor& x) { return sigmoid(x); }, 0.05, 3.0, false);
  unary("neg", [](const Tensor& x) { return neg(x); }, 0.05, 2.0, false);
  unary("square", [](const Tensor& x) { return square(x); }, 0.05, 2.0, false);
  unary("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.7); }, 0.05, 2.0, false);
  unary("mul_scalar", [](const Tensor& x) { return mul_scalar(x, -1.3); }, 0.05, 2.0, false);
  unary("mask", [](const Tensor& x) {
    std::vector<double> keep(x.numel());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i % 3 == 0 ? 0.0 : 1.0;
    return mask(x, keep);
  }, 0.05, 2.0, false);
  unary("sum", [](const Tensor& x) { return sum(x, {1}); }, 0.05, 2.0, false);
  unary("mean", [](const Tensor& x) { return mean(x, {0}, true); }, 0.05, 2.0, false);
  unary("norm2", [](const Tensor& x) { return norm2(x); }, 0.05, 2.0, false);
  unary("reshape", [](const Tensor& x) { return reshape(x, {2, 6}); }, 0.05, 2.0, false);
  unary("transpose", [](const Tensor& x) { return transpose(x, {1, 0}); }, 0.05, 2.0, false);
  unary("slice", [](const Tensor& x) { return slice(x, 1, 1, 3); }, 0.05, 2.0, false);
  r.emplace_back("concat", [](SplitMix64& rng) {
    return Case{{signed_away({2, 3}, 0.1, 1.0, rng), signed_away({2, 2}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) { return concat({in[0], in[1]}, 1); }};
  });
  r.emplace_back("pad2d", [](SplitMix64& rng) {
    return Case{{signed_away({1, 2, 3, 3}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) { return pad2d(in[0], 1, 0.5); }};
  });
  r.emplace_back("matmul", [](SplitMix64& rng) {
    return Case{{signed_away({3, 4}, 0.1, 1.0, rng), signed_away({4, 2}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) { return matmul(in[0], in[1]); }};
  });
  r.emplace_back("conv2d", [](SplitMix64& rng) {
    return Case{{signed_away({2, 2, 5, 5}, 0.1, 1.0, rng), signed_away({3, 2, 3, 3}, 0.1, 1.0, rng),
                 signed_away({3}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 2, 1); }};
  });
  r.emplace_back("batchnorm", [](SplitMix64& rng) {
    return Case{{signed_away({3, 2, 3, 3}, 0.1, 2.0, rng), uniform({2}, 0.5, 1.5, rng), signed_away({2}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) {
                  BNLayerState state = BNLayerState::make("bn", 2);
                  state.gamma.value = in[1];
                  state.beta.value = in[2];
                  return batchnorm(in[0], state, BnMode::BatchStats).output;
                }};
  });
  r.emplace_back("instance_norm", [](SplitMix64& rng) {
    return Case{{signed_away({2, 2, 3, 3}, 0.1, 2.0, rng), uniform({2}, 0.5, 1.5, rng), signed_away({2}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) {
                  InstanceNormLayer layer = InstanceNormLayer::make("in", 2);
                  layer.gamma.value = in[1];
                  layer.beta.value = in[2];
                  return instance_norm(in[0], layer);
                }};
  });
  r.emplace_back("dense", [](SplitMix64& rng) {
    return Case{{signed_away({3, 4}, 0.1, 1.0, rng), signed_away({4, 2}, 0.1, 1.0, rng), signed_away({2}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) {
                  DenseLayer layer = DenseLayer::make("fc", 4, 2, 0);
                  layer.weight.value = in[1];
                  layer.bias.value = in[2];
                  return dense(in[0], layer);
                }};
  });
  r.emplace_back("max_pool", [](SplitMix64& rng) {
    // A permutation of well separated values, so the arg-max is stable under the probe step.
    std::vector<std::size_t> p = permutation(32, rng);
    std::vector<double> v(32);
    for (std::size_t i = 0; i < 32; ++i) v[i] = 0.1 * static_cast<double>(p[i]) - 1.5;
    return Case{{Tensor::from_values({1, 2, 4, 4}, v)},
                [](const std::vector<Tensor>& in) { return pool2d(PoolKind::Max, in[0], 2, 2); }};
  });
  r.emplace_back("avg_pool", [](SplitMix64& rng) {
    return Case{{signed_away({1, 2, 4, 4}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) { return pool2d(PoolKind::Avg, in[0], 2, 2); }};
  });
  r.emplace_back("global_avg_pool", [](SplitMix64& rng) {
    return Case{{signed_away({2, 3, 3, 3}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) { return global_avg_pool(in[0]); }};
  });
  r.emplace_back("upsample_nearest", [](SplitMix64& rng) {
    return Case{{signed_away({1, 2, 2, 3}, 0.1, 1.0, rng)},
                [](const std::vector<Tensor>& in) { return upsample_nearest(in[0], 2); }};
  });
  r.emplace_back("softmax", [](SplitMix64& rng) {
    return Case{{signed_away({3, 4}, 0.1, 2.0, rng)}, [](const std::vector<Tensor>& in) { return softmax(in[0]); }};
  });

  r.emplace_back("stat_consistency_loss", [](SplitMix64& rng) {
    std::vector<StoredStats> stored;
    for (int l = 0; l < 2; ++l)
      stored.push_back({signed_away({3}, 0.1, 1.0, rng), uniform({3}, 0.5, 2.0, rng), 1e-5});
    return Case{{signed_away({3}, 0.1, 1.0, rng), uniform({3}, 0.5, 2.0, rng), signed_away({3}, 0.1, 1.0, rng),
                 uniform({3}, 0.5, 2.0, rng)},
                [stored](const std::vector<Tensor>& in) {
                  std::vector<LayerStats> batch{{in[0], in[1]}, {in[2], in[3]}};
                  return stat_consistency_loss(batch, stored);
                }};
  });
  r.emplace_back("perceptual_loss", [](SplitMix64& rng) {
    Tensor target = signed_away({2, 3, 2, 2}, 0.1, 1.0, rng);
    return Case{{signed_away({2, 3, 2, 2}, 0.1, 1.0, rng)},
                [target](const std::vector<Tensor>& in) { return perceptual_loss(in[0], target); }};
  });
  r.emplace_back("entropy_classifier", [](SplitMix64& rng) {
    return Case{{probs(4, 2, rng)}, [](const std::vector<Tensor>& in) { return entropy_classifier(in[0]); }};
  });
  r.emplace_back("entropy_depth", [](SplitMix64& rng) {
    return Case{{signed_away({2, 1, 3, 3}, 0.1, 2.0, rng)},
                [](const std::vector<Tensor>& in) { return entropy_depth(in[0]); }};
  });
  r.emplace_back("phase_consistency_loss", [](SplitMix64& rng) {
    Tensor target = uniform({2, 3, 4, 4}, 0.0, 1.0, rng);
    return Case{{uniform({2, 3, 4, 4}, 0.0, 1.0, rng)},
                [target](const std::vector<Tensor>& in) { return phase_consistency_loss(target, in[0]); }};
  });
  r.emplace_back("total_loss", [](SplitMix64& rng) {
    LossWeights weights{rng.uniform(0.005, 0.05), rng.uniform(0.005, 0.05)};
    std::vector<Tensor> in;
    for (int i = 0; i < 5; ++i) in.push_back(Tensor::scalar(rng.uniform(-2.0, 2.0)));
    return Case{in, [weights](const std::vector<Tensor>& v) { return total_loss(v[0], v[1], v[2], v[3], v[4], weights); }};
  });
  r.emplace_back("cross_entropy_loss", [](SplitMix64& rng) {
    std::vector<int> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.below(2)));
    return Case{{signed_away({4, 2}, 0.1, 2.0, rng)},
                [labels](const std::vector<Tensor>& in) { return cross_entropy_loss(in[0], labels); }};
  });
  r.emplace_back("depth_regression_loss", [](SplitMix64& rng) {
    Tensor target = uniform({2, 1, 3, 3}, 0.0, 1.0, rng);
    return Case{{uniform({2, 1, 3, 3}, 0.0, 1.0, rng)},
                [target](const std::vector<Tensor>& in) { return depth_regression_loss(in[0], target); }};
  });
  return r;
}

}  // namespace

std::vector<std::string> grad_check_ops() {
  std::vector<std::string> names;
  for (const auto& [name, maker] : registry()) names.push_back(name);
  return names;
}

std::vector<GradCheckRow> run_grad_check(const GradCheckOptions& options) {
  const auto ops = registry();
  if (options.sign_flip &&
      std::none_of(ops.begin(), ops.end(), [&](const auto& op) { return op.first == *options.sign_flip; }))
    throw std::invalid_argument("unknown op for sign flip: " + *options.sign_flip);
  if (options.trials == 0) throw std::invalid_argument("grad check needs at least one trial");

  std::vector<GradCheckRow> rows;
  for (std::size_t k = 0; k < ops.size(); ++k) {
    const auto& [name, maker] = ops[k];
    GradCheckRow row{name, options.trials, 0.0, true};
    const bool flip = options.sign_flip && *options.sign_flip == name;
    for (std::size_t t = 0; t < options.trials; ++t) {
      SplitMix64 rng(mix_seed(mix_seed(options.seed, k), t));
      const Case c = maker(rng);
      const double err = relative_error(c, rng, flip);
      row.max_rel_error = std::max(row.max_rel_error, std::isfinite(err) ? err : INFINITY);
    }
    row.passed = row.max_rel_error < options.tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace gda
