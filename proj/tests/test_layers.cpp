#include <gtest/gtest.h>

#include <cmath>

#include "gda/layers.hpp"
#include "gda/random.hpp"

using namespace gda;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(std::move(shape), std::move(v));
}

// Direct seven-loop cross-correlation.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  std::vector<double> out(B * O * Ho * Wo);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < K; ++ky)
              for (std::size_t kx = 0; kx < K; ++kx) {
                const long y = static_cast<long>(i * stride + ky) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + kx) - static_cast<long>(pad);
                if (y < 0 || xx < 0 || y >= static_cast<long>(H) || xx >= static_cast<long>(W)) continue;
                s += x[((n * C + c) * H + y) * W + xx] * w[((o * C + c) * K + ky) * K + kx];
              }
          out[((n * O + o) * Ho + i) * Wo + j] = s;
        }
  return out;
}

double max_rel(const Tensor& a, const Tensor& b) {
  double diff = 0.0, mag = 1e-8;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    mag = std::max({mag, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / mag;
}

}  // namespace

TEST(Conv2d, Examples) {
  const Tensor y = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 9.0);
  const Tensor x = random_tensor({2, 1, 4, 4}, 1);
  const Tensor id = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1}), 1, 0);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(id[i], x[i]);
}

TEST(Conv2d, AgreesWithNaiveLoopAcrossGeometries) {
  std::uint64_t seed = 0;
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u, 2u})
      for (std::size_t k : {1u, 3u}) {
        const Tensor x = random_tensor({3, 2, 7, 6}, ++seed), w = random_tensor({4, 2, k, k}, ++seed),
                     b = random_tensor({4}, ++seed);
        const Tensor y = conv2d(x, w, b, stride, pad);
        const std::vector<double> want = naive_conv(x, w, b, stride, pad);
        ASSERT_EQ(y.numel(), want.size());
        for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(y[i], want[i], 1e-12);
        EXPECT_EQ(y.dim(2), (7 + 2 * pad - k) / stride + 1);
        EXPECT_EQ(y.dim(3), (6 + 2 * pad - k) / stride + 1);
      }
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  const Tensor x0 = random_tensor({1, 2, 5, 5}, 11), w0 = random_tensor({3, 2, 3, 3}, 12), b0 = random_tensor({3}, 13);
  const Tensor proj = random_tensor({1, 3, 3, 3}, 14);
  Tape& tape = active_tape();
  const Tensor x = tape.watch(x0), w = tape.watch(w0), b = tape.watch(b0);
  const Gradients g = backward(sum_all(mul(conv2d(x, w, b, 2, 1), proj)));
  auto f = [&](const Tensor& xi, const Tensor& wi, const Tensor& bi) {
    return sum_all(mul(conv2d(xi, wi, bi, 2, 1), proj)).item();
  };
  EXPECT_LT(max_rel(g.of(x), finite_diff_gradient([&](const Tensor& t) { return f(t, w0, b0); }, x0)), 1e-6);
  EXPECT_LT(max_rel(g.of(w), finite_diff_gradient([&](const Tensor& t) { return f(x0, t, b0); }, w0)), 1e-6);
  EXPECT_LT(max_rel(g.of(b), finite_diff_gradient([&](const Tensor& t) { return f(x0, w0, t); }, b0)), 1e-6);
}

TEST(Conv2d, CompositeOfTwoLayersMatchesFiniteDifferences) {
  const Tensor x0 = random_tensor({2, 2, 6, 6}, 21);
  const Tensor w1 = random_tensor({3, 2, 3, 3}, 22), w2 = random_tensor({2, 3, 3, 3}, 23);
  const Tensor b1 = Tensor::zeros({3}), b2 = Tensor::zeros({2});
  auto net = [&](const Tensor& x) { return sum_all(square(conv2d(tanh(conv2d(x, w1, b1, 1, 1)), w2, b2, 2, 0))); };
  Tape& tape = active_tape();
  const Tensor x = tape.watch(x0);
  const Gradients g = backward(net(x));
  EXPECT_LT(max_rel(g.of(x), finite_diff_gradient([&](const Tensor& t) { return net(t).item(); }, x0)), 1e-6);
}

TEST(Conv2d, ShapeErrors) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}), 1, 0), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 1, 0), ShapeError);
}

TEST(BatchNorm, TrainModeStandardizes) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    BNLayerState st = BNLayerState::make("bn", 3);
    const Tensor x = random_tensor({8, 3, 4, 4}, s, -3.0, 5.0);
    const Tensor y = batchnorm(x, st, BnMode::Train).output;
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0.0, v = 0.0;
      for (std::size_t n = 0; n < 8; ++n)
        for (std::size_t k = 0; k < 16; ++k) m += y[(n * 3 + c) * 16 + k];
      m /= 128.0;
      for (std::size_t n = 0; n < 8; ++n)
        for (std::size_t k = 0; k < 16; ++k) v += std::pow(y[(n * 3 + c) * 16 + k] - m, 2);
      v /= 128.0;
      EXPECT_LT(std::abs(m), 1e-6);
      // eps in the denominator shrinks the variance slightly below one.
      EXPECT_LT(std::abs(v - 1.0), 1e-5 + 1e-5 / 4.0);
    }
  }
}

TEST(BatchNorm, EmaOneStepExamples) {
  BNLayerState st = BNLayerState::make("bn", 1, 0.1);
  EXPECT_EQ(st.running_mean[0], 0.0);
  EXPECT_EQ(st.running_var[0], 1.0);
  const std::vector<double> mu{1.0}, var{5.0};
  bn_ema_update(st, mu, var);
  EXPECT_NEAR(st.running_mean[0], 0.1, 1e-15);
  EXPECT_NEAR(st.running_var[0], 1.4, 1e-15);
  EXPECT_EQ(st.num_updates, 1u);
}

TEST(BatchNorm, EmaMatchesClosedFormOverLongSequence) {
  const double alpha = 0.1;
  BNLayerState st = BNLayerState::make("bn", 1, alpha);
  SplitMix64 rng(5);
  std::vector<double> mus, vars;
  for (int t = 0; t < 1000; ++t) {
    mus.push_back(rng.uniform(-2.0, 2.0));
    vars.push_back(rng.uniform(0.1, 3.0));
    bn_ema_update(st, std::span<const double>(&mus.back(), 1), std::span<const double>(&vars.back(), 1));
  }
  // (1-α)^n μ̄_0 + Σ_t α (1-α)^{n-1-t} μ_t, with μ̄_0 = 0 and σ̄²_0 = 1.
  const std::size_t n = mus.size();
  double m = 0.0, v = std::pow(1.0 - alpha, static_cast<double>(n));
  for (std::size_t t = 0; t < n; ++t) {
    const double w = alpha * std::pow(1.0 - alpha, static_cast<double>(n - 1 - t));
    m += w * mus[t];
    v += w * vars[t];
  }
  EXPECT_NEAR(st.running_mean[0], m, 1e-12);
  EXPECT_NEAR(st.running_var[0], v, 1e-12);
}

TEST(BatchNorm, ConstantStatisticsConvergeGeometrically) {
  BNLayerState st = BNLayerState::make("bn", 1, 0.25);
  const double mu = 3.0, var = 2.0;
  double prev_gap = std::abs(st.running_mean[0] - mu);
  for (int t = 0; t < 20; ++t) {
    bn_ema_update(st, std::span<const double>(&mu, 1), std::span<const double>(&var, 1));
    const double gap = std::abs(st.running_mean[0] - mu);
    EXPECT_NEAR(gap, 0.75 * prev_gap, 1e-12);
    EXPECT_GE(st.running_var[0], 0.0);
    prev_gap = gap;
  }
}

TEST(BatchNorm, EvalIsDeterministicAndBatchStatsDoesNotTouchState) {
  BNLayerState st = BNLayerState::make("bn", 2);
  EXPECT_THROW(batchnorm(random_tensor({2, 2, 2, 2}, 1), st, BnMode::Eval), std::logic_error);
  batchnorm(random_tensor({4, 2, 3, 3}, 2), st, BnMode::Train);
  const Tensor mean_before = st.running_mean, var_before = st.running_var;
  const auto r = batchnorm(random_tensor({4, 2, 3, 3}, 3), st, BnMode::BatchStats);
  EXPECT_EQ(r.batch_mean.numel(), 2u);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_EQ(st.running_mean[c], mean_before[c]);
    EXPECT_EQ(st.running_var[c], var_before[c]);
  }
  const Tensor x = random_tensor({2, 2, 3, 3}, 4);
  const Tensor a = batchnorm(x, st, BnMode::Eval).output, b = batchnorm(x, st, BnMode::Eval).output;
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(BatchNorm, BatchMomentsAreDifferentiable) {
  const Tensor x0 = random_tensor({3, 2, 2, 2}, 8);
  const Tensor pm = random_tensor({2}, 9), pv = random_tensor({2}, 10);
  auto f = [&](const Tensor& x) {
    BNLayerState st = BNLayerState::make("bn", 2);
    const auto r = batchnorm(x, st, BnMode::BatchStats);
    return sum_all(mul(r.batch_mean, pm)) + sum_all(mul(r.batch_var, pv));
  };
  Tape& tape = active_tape();
  const Tensor x = tape.watch(x0);
  const Gradients g = backward(f(x));
  EXPECT_LT(max_rel(g.of(x), finite_diff_gradient([&](const Tensor& t) { return f(t).item(); }, x0)), 1e-6);
}

TEST(InstanceNorm, Examples) {
  InstanceNormLayer layer = InstanceNormLayer::make("in", 1);
  const Tensor flat = instance_norm(Tensor::full({1, 1, 3, 3}, 4.0), layer);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(flat[i], 0.0, 1e-12);
  layer.gamma.value = Tensor::full({1}, 2.0);
  layer.beta.value = Tensor::full({1}, 1.0);
  const Tensor shifted = instance_norm(Tensor::full({1, 1, 3, 3}, 4.0), layer);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(shifted[i], 1.0, 1e-12);
}

TEST(InstanceNorm, SamplesAreIndependent) {
  InstanceNormLayer layer = InstanceNormLayer::make("in", 2);
  const Tensor a = random_tensor({1, 2, 3, 3}, 1), b = random_tensor({1, 2, 3, 3}, 2);
  const Tensor ab = instance_norm(concat({a, b}, 0), layer);
  const Tensor a_alone = instance_norm(a, layer);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(ab[i], a_alone[i], 1e-14);
}

TEST(Pool, Examples) {
  const Tensor x = Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(pool2d(PoolKind::Max, x, 2, 2).item(), 4.0);
  EXPECT_EQ(pool2d(PoolKind::Avg, x, 2, 2).item(), 2.5);
}

TEST(Pool, MaxGradientRoutesToArgmax) {
  Tape& tape = active_tape();
  const Tensor x = tape.watch(Tensor::from_values({1, 1, 2, 2}, {1, 5, 3, 4}));
  const Gradients g = backward(sum_all(pool2d(PoolKind::Max, x, 2, 2)));
  const std::vector<double> want{0, 1, 0, 0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(g.of(x)[i], want[i]);
}

TEST(Dense, Examples) {
  DenseLayer layer = DenseLayer::make("fc", 2, 2, 0);
  layer.weight.value = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  layer.bias.value = Tensor::zeros({2});
  const Tensor x = Tensor::from_values({1, 2}, {3, -4});
  const Tensor y = dense(x, layer);
  EXPECT_EQ(y[0], 3.0);
  EXPECT_EQ(y[1], -4.0);
  layer.weight.value = Tensor::zeros({2, 2});
  layer.bias.value = Tensor::from_values({2}, {0.5, -0.5});
  const Tensor z = dense(x, layer);
  EXPECT_EQ(z[0], 0.5);
  EXPECT_EQ(z[1], -0.5);
}

TEST(Upsample, Examples) {
  const Tensor u = upsample_nearest(Tensor::full({1, 1, 1, 1}, 1.0), 2);
  EXPECT_EQ(u.shape(), (Shape{1, 1, 2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(u[i], 1.0);
  const Tensor x = random_tensor({1, 2, 3, 3}, 3);
  const Tensor same = upsample_nearest(x, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(same[i], x[i]);
}

TEST(Upsample, GradientSumsOverReplicas) {
  Tape& tape = active_tape();
  const Tensor x = tape.watch(Tensor::from_values({1, 1, 1, 2}, {1, 2}));
  const Gradients g = backward(sum_all(upsample_nearest(x, 3)));
  EXPECT_EQ(g.of(x)[0], 9.0);
  EXPECT_EQ(g.of(x)[1], 9.0);
}

TEST(Softmax, Examples) {
  const Tensor eq = softmax(Tensor::from_values({1, 2}, {0.3, 0.3}));
  EXPECT_NEAR(eq[0], 0.5, 1e-15);
  EXPECT_NEAR(eq[1], 0.5, 1e-15);
  const Tensor big = softmax(Tensor::from_values({1, 2}, {1000, -1000}));
  EXPECT_EQ(big[0], 1.0);
  EXPECT_EQ(big[1], 0.0);
  const Tensor rows = softmax(random_tensor({5, 3}, 4, -5.0, 5.0));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(rows[i * 3] + rows[i * 3 + 1] + rows[i * 3 + 2], 1.0, 1e-14);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Param p{"p", Tensor::zeros({1}), false};
  AdamState st;
  std::vector<Param*> params{&p};
  std::vector<Tensor> grads{Tensor::full({1}, 3.0)};
  adam_step(params, grads, st);
  // m̂ = g, v̂ = g², update = lr·g/(|g| + ε).
  EXPECT_NEAR(p.value[0], -1e-4 * 3.0 / (3.0 + 1e-8), 1e-18);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientAndFrozenParamsStayPut) {
  Param a{"a", Tensor::full({2}, 1.0), false};
  Param b{"b", Tensor::full({2}, 1.0), true};
  AdamState st;
  std::vector<Param*> params{&a, &b};
  std::vector<Tensor> grads{Tensor::zeros({2}), Tensor::full({2}, 5.0)};
  adam_step(params, grads, st);
  adam_step(params, grads, st);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.value[i], 1.0);
    EXPECT_EQ(b.value[i], 1.0);
  }
}

TEST(Adam, TwoStepsAgreeWithDirectRecurrence) {
  Param p{"p", Tensor::full({1}, 0.5), false};
  AdamState st;
  st.lr = 0.01;
  std::vector<Param*> params{&p};
  double x = 0.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = -2.0;
    std::vector<Tensor> grads{Tensor::full({1}, g)};
    const double before = p.value[0];
    adam_step(params, grads, st);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p.value[0], x, 1e-15);
    EXPECT_GT(p.value[0], before);
  }
}

TEST(Adam, ShapeMismatchThrows) {
  Param p{"p", Tensor::zeros({2}), false};
  AdamState st;
  std::vector<Param*> params{&p};
  std::vector<Tensor> grads{Tensor::zeros({3})};
  EXPECT_THROW(adam_step(params, grads, st), ShapeError);
}
