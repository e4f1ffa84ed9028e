#include "gda/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gda {

namespace {

Tensor channel_view(const Tensor& t) { return reshape(t, {1, t.numel(), 1, 1}); }

void require_rank4(const Tensor& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + " expects [B,C,H,W], got " + shape_str(x.shape()));
}

// Output columns [lo, hi) whose input column ox*stride + kx - pad lies inside [0, w).
std::pair<std::size_t, std::size_t> valid_range(std::size_t kx, std::size_t stride, std::size_t pad, std::size_t w,
                                                std::size_t wo) {
  std::size_t lo = 0;
  while (lo < wo && lo * stride + kx < pad) ++lo;
  std::size_t hi = lo;
  while (hi < wo && hi * stride + kx < pad + w) ++hi;
  return {lo, hi};
}

// cols[(c*k + ky)*k + kx, b*HW + oy*Wo + ox]
void im2col(const double* x, std::size_t batch, std::size_t ch, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* cols) {
  const std::size_t n = batch * ho * wo;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * n;
        const auto [lo, hi] = valid_range(kx, stride, pad, w, wo);
        for (std::size_t b = 0; b < batch; ++b) {
          const double* plane = x + (b * ch + c) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            double* dst = row + (b * ho + oy) * wo;
            if (iy < 0 || iy >= static_cast<long>(h)) {
              std::fill(dst, dst + wo, 0.0);
              continue;
            }
            const double* src = plane + static_cast<std::size_t>(iy) * w;
            std::fill(dst, dst + lo, 0.0);
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride + kx - pad];
            std::fill(dst + hi, dst + wo, 0.0);
          }
        }
      }
}

void col2im(const double* cols, std::size_t batch, std::size_t ch, std::size_t h, std::size_t w, std::size_t k,
            std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo, double* dx) {
  const std::size_t n = batch * ho * wo;
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * n;
        const auto [lo, hi] = valid_range(kx, stride, pad, w, wo);
        for (std::size_t b = 0; b < batch; ++b) {
          double* plane = dx + (b * ch + c) * h * w;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const double* src = row + (b * ho + oy) * wo;
            double* dst = plane + static_cast<std::size_t>(iy) * w;
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * stride + kx - pad] += src[ox];
          }
        }
      }
}

constexpr std::size_t kConvChunkElems = std::size_t{1} << 18;

// Reusable per-thread buffers for the convolution kernels.
std::vector<double>& scratch(std::size_t slot) {
  thread_local std::vector<double> buffers[2];
  return buffers[slot];
}

}  // namespace

void watch_params(std::span<Param* const> params) {
  Tape& tape = active_tape();
  for (Param* p : params)
    if (!p->frozen) p->value = tape.watch(p->value);
}

// --- convolution ------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad) {
  require_rank4(x, "conv2d");
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3))
    throw ShapeError("conv2d weight must be [Cout,Cin,k,k], got " + shape_str(weight.shape()));
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin)
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " +
                     shape_str(weight.shape()));
  if (bias.numel() != cout) throw ShapeError("conv2d bias size mismatch");
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  if (h + 2 * pad < k || w + 2 * pad < k) throw ShapeError("conv2d kernel larger than padded input");
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  const std::size_t kk = cin * k * k;
  const std::size_t hw = ho * wo;
  // Samples per im2col chunk, keeping the column buffer cache-sized.
  const std::size_t chunk = std::clamp<std::size_t>(kConvChunkElems / (kk * hw), 1, batch);

  std::vector<double> out(batch * cout * hw);
  {
    std::vector<double>& cols = scratch(0);
    std::vector<double>& prod = scratch(1);
    const auto bd = bias.data();
    for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
      const std::size_t cb = std::min(chunk, batch - b0);
      const std::size_t n = cb * hw;
      cols.resize(kk * n);
      prod.resize(cout * n);
      im2col(x.data().data() + b0 * cin * h * w, cb, cin, h, w, k, stride, pad, ho, wo, cols.data());
      detail::gemm(false, false, cout, n, kk, weight.data().data(), cols.data(), prod.data(), false);
      for (std::size_t b = 0; b < cb; ++b)
        for (std::size_t co = 0; co < cout; ++co) {
          const double* src = prod.data() + co * n + b * hw;
          double* dst = out.data() + ((b0 + b) * cout + co) * hw;
          for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] + bd[co];
        }
    }
  }

  return active_tape().record(
      "conv2d", Tensor::from_values({batch, cout, ho, wo}, std::move(out)), {&x, &weight, &bias},
      [x = x.detach(), weight = weight.detach(), batch, cin, h, w, cout, k, stride, pad, ho, wo, kk, hw,
       chunk](std::span<const double> g, GradSinks& sinks) {
        std::vector<double>& g2 = scratch(0);
        std::vector<double>& cols = scratch(1);
        for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
          const std::size_t cb = std::min(chunk, batch - b0);
          const std::size_t n = cb * hw;
          // Regather the output gradient as [Cout, cb*HW].
          g2.resize(cout * n);
          for (std::size_t b = 0; b < cb; ++b)
            for (std::size_t co = 0; co < cout; ++co)
              std::copy_n(g.data() + ((b0 + b) * cout + co) * hw, hw, g2.data() + co * n + b * hw);
          if (!sinks[2].empty())
            for (std::size_t co = 0; co < cout; ++co) {
              double s = 0.0;
              for (std::size_t i = 0; i < n; ++i) s += g2[co * n + i];
              sinks[2][co] += s;
            }
          cols.resize(kk * n);
          if (!sinks[1].empty()) {
            im2col(x.data().data() + b0 * cin * h * w, cb, cin, h, w, k, stride, pad, ho, wo, cols.data());
            detail::gemm(false, true, cout, kk, n, g2.data(), cols.data(), sinks[1].data(), true);
          }
          if (!sinks[0].empty()) {
            detail::gemm(true, false, kk, n, cout, weight.data().data(), g2.data(), cols.data(), false);
            col2im(cols.data(), cb, cin, h, w, k, stride, pad, ho, wo, sinks[0].data() + b0 * cin * h * w);
          }
        }
      });
}

ConvLayer ConvLayer::make(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                          std::size_t stride, std::size_t pad, std::uint64_t seed, double gain) {
  const double fan_in = static_cast<double>(in_ch * kernel * kernel);
  ConvLayer layer;
  layer.weight = {name + ".weight", Tensor::gaussian({out_ch, in_ch, kernel, kernel}, 0.0, gain * std::sqrt(2.0 / fan_in), seed)};
  layer.bias = {name + ".bias", Tensor::zeros({out_ch})};
  layer.stride = stride;
  layer.pad = pad;
  return layer;
}

Tensor ConvLayer::forward(const Tensor& x) const { return conv2d(x, weight.value, bias.value, stride, pad); }

std::size_t ConvLayer::out_size(std::size_t in) const {
  return (in + 2 * pad - weight.value.dim(2)) / stride + 1;
}

// --- batch normalization ------------------------------------------------------

BNLayerState BNLayerState::make(const std::string& name, std::size_t channels, double alpha) {
  BNLayerState s;
  s.gamma = {name + ".gamma", Tensor::full({channels}, 1.0)};
  s.beta = {name + ".beta", Tensor::zeros({channels})};
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0);
  s.alpha = alpha;
  return s;
}

void bn_ema_update(BNLayerState& state, std::span<const double> batch_mean, std::span<const double> batch_var) {
  const std::size_t c = state.channels();
  if (batch_mean.size() != c || batch_var.size() != c) throw ShapeError("bn_ema_update channel mismatch");
  auto& rm = state.running_mean.mutable_data();
  auto& rv = state.running_var.mutable_data();
  const double a = state.alpha;
  for (std::size_t i = 0; i < c; ++i) {
    rm[i] = (1.0 - a) * rm[i] + a * batch_mean[i];
    rv[i] = std::max(0.0, (1.0 - a) * rv[i] + a * batch_var[i]);
  }
  ++state.num_updates;
}

BatchNormResult batchnorm(const Tensor& x, BNLayerState& state, BnMode mode) {
  require_rank4(x, "batchnorm");
  const std::size_t c = x.dim(1);
  if (c != state.channels())
    throw ShapeError("batchnorm expects " + std::to_string(state.channels()) + " channels, got " + shape_str(x.shape()));
  const Tensor gamma = channel_view(state.gamma.value);
  const Tensor beta = channel_view(state.beta.value);

  if (mode == BnMode::Eval) {
    if (state.num_updates == 0)
      throw std::logic_error("batchnorm eval before any running-statistics update");
    const Tensor m = channel_view(state.running_mean);
    const Tensor sd = sqrt(channel_view(state.running_var) + state.eps);
    return {(x - m) / sd * gamma + beta, Tensor{}, Tensor{}};
  }

  if (x.dim(0) * x.dim(2) * x.dim(3) < 2)
    throw ShapeError("batchnorm in train mode needs at least 2 values per channel");
  const Tensor m = mean(x, {0, 2, 3}, true);
  const Tensor centered = x - m;
  const Tensor var = mean(square(centered), {0, 2, 3}, true);
  const Tensor out = centered / sqrt(var + state.eps) * gamma + beta;
  BatchNormResult r{out, reshape(m, {c}), reshape(var, {c})};
  if (mode == BnMode::Train) bn_ema_update(state, r.batch_mean.data(), r.batch_var.data());
  return r;
}

// --- instance normalization ----------------------------------------------------

InstanceNormLayer InstanceNormLayer::make(const std::string& name, std::size_t channels) {
  return {{name + ".gamma", Tensor::full({channels}, 1.0)}, {name + ".beta", Tensor::zeros({channels})}};
}

Tensor instance_norm(const Tensor& x, const InstanceNormLayer& layer) {
  require_rank4(x, "instance_norm");
  const Tensor m = mean(x, {2, 3}, true);
  const Tensor centered = x - m;
  const Tensor var = mean(square(centered), {2, 3}, true);
  return centered / sqrt(var + layer.eps) * channel_view(layer.gamma.value) + channel_view(layer.beta.value);
}

// --- dense / pooling / resampling ----------------------------------------------

DenseLayer DenseLayer::make(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed) {
  return {{name + ".weight", Tensor::gaussian({in, out}, 0.0, std::sqrt(1.0 / static_cast<double>(in)), seed)},
          {name + ".bias", Tensor::zeros({out})}};
}

Tensor dense(const Tensor& x, const DenseLayer& layer) {
  if (x.rank() != 2) throw ShapeError("dense expects [B,d], got " + shape_str(x.shape()));
  return matmul(x, layer.weight.value) + layer.bias.value;
}

Tensor pool2d(PoolKind kind, const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank4(x, "pool2d");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel == 0 || stride == 0 || kernel > h || kernel > w) throw ShapeError("pool2d window does not fit input");
  const std::size_t ho = (h - kernel) / stride + 1;
  const std::size_t wo = (w - kernel) / stride + 1;
  const auto xd = x.data();
  std::vector<double> out(planes * ho * wo);
  std::vector<std::size_t> argmax(kind == PoolKind::Max ? out.size() : 0);
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const std::size_t o = (p * ho + oy) * wo + ox;
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        double acc = 0.0;
        for (std::size_t ky = 0; ky < kernel; ++ky)
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::size_t i = (p * h + oy * stride + ky) * w + ox * stride + kx;
            acc += xd[i];
            if (xd[i] > best) {
              best = xd[i];
              best_i = i;
            }
          }
        if (kind == PoolKind::Max) {
          out[o] = best;
          argmax[o] = best_i;
        } else {
          out[o] = acc * inv;
        }
      }
  return active_tape().record(
      kind == PoolKind::Max ? "max_pool2d" : "avg_pool2d",
      Tensor::from_values({x.dim(0), x.dim(1), ho, wo}, std::move(out)), {&x},
      [kind, argmax = std::move(argmax), planes, h, w, ho, wo, kernel, stride, inv](std::span<const double> g,
                                                                                   GradSinks& sinks) {
        auto gx = sinks[0];
        if (kind == PoolKind::Max) {
          for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
          return;
        }
        for (std::size_t p = 0; p < planes; ++p)
          for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const double v = g[(p * ho + oy) * wo + ox] * inv;
              for (std::size_t ky = 0; ky < kernel; ++ky)
                for (std::size_t kx = 0; kx < kernel; ++kx) gx[(p * h + oy * stride + ky) * w + ox * stride + kx] += v;
            }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank4(x, "global_avg_pool");
  return mean(x, {2, 3});
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  require_rank4(x, "upsample_nearest");
  if (factor == 0) throw ShapeError("upsample factor must be positive");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h * factor, wo = w * factor;
  const auto xd = x.data();
  std::vector<double> out(planes * ho * wo);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < ho; ++y)
      for (std::size_t xx = 0; xx < wo; ++xx) out[(p * ho + y) * wo + xx] = xd[(p * h + y / factor) * w + xx / factor];
  return active_tape().record("upsample_nearest", Tensor::from_values({x.dim(0), x.dim(1), ho, wo}, std::move(out)),
                              {&x}, [planes, h, w, ho, wo, factor](std::span<const double> g, GradSinks& sinks) {
                                for (std::size_t p = 0; p < planes; ++p)
                                  for (std::size_t y = 0; y < ho; ++y)
                                    for (std::size_t xx = 0; xx < wo; ++xx)
                                      sinks[0][(p * h + y / factor) * w + xx / factor] += g[(p * ho + y) * wo + xx];
                              });
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [B,C], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<double> row_max(rows);
  const auto d = logits.data();
  for (std::size_t r = 0; r < rows; ++r) row_max[r] = *std::max_element(d.begin() + r * cols, d.begin() + (r + 1) * cols);
  const Tensor e = exp(logits - Tensor::from_values({rows, 1}, std::move(row_max)));
  return e / sum(e, {1}, true);
}

// --- optimizer -----------------------------------------------------------------

void adam_step(std::span<Param* const> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: params and grads differ in count");
  if (state.m.empty()) {
    for (Param* p : params) {
      state.m.emplace_back(p->value.numel(), 0.0);
      state.v.emplace_back(p->value.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].numel() != params[i]->value.numel() || state.m[i].size() != params[i]->value.numel())
      throw ShapeError("adam_step: shape mismatch for " + params[i]->name);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    if (p.frozen) continue;
    const auto g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& w = p.value.mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      w[j] -= state.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
    }
  }
}

void adam_step(std::span<Param* const> params, const Gradients& grads, AdamState& state) {
  std::vector<Tensor> g;
  g.reserve(params.size());
  for (Param* p : params) g.push_back(grads.of(p->value));
  adam_step(params, g, state);
}

}  // namespace gda
