#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gda/tensor.hpp"

namespace gda {

/// A named learnable tensor. `frozen` parameters are never touched by Adam.
struct Param {
  std::string name;
  Tensor value;
  bool frozen = false;
};

/// Registers every non-frozen parameter as a leaf on the active tape.
void watch_params(std::span<Param* const> params);

// --- convolution ------------------------------------------------------------

/// Cross-correlation. x: [B,Cin,H,W], weight: [Cout,Cin,k,k], bias: [Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t pad);

struct ConvLayer {
  Param weight;
  Param bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  /// He-normal weights, zero bias.
  static ConvLayer make(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                        std::size_t stride, std::size_t pad, std::uint64_t seed, double gain = 1.0);
  Tensor forward(const Tensor& x) const;
  std::size_t out_size(std::size_t in) const;
  void collect(std::vector<Param*>& out) { out.insert(out.end(), {&weight, &bias}); }
};

// --- batch normalization ------------------------------------------------------

/// Per-channel affine parameters plus the exponential running statistics
///   mean_run <- (1 - alpha) * mean_run + alpha * mean_batch
///   var_run  <- (1 - alpha) * var_run  + alpha * var_batch
/// Batch variance is the biased (divide-by-N) estimate in both places.
struct BNLayerState {
  Param gamma;
  Param beta;
  Tensor running_mean;
  Tensor running_var;
  double alpha = 0.1;
  double eps = 1e-5;
  std::uint64_t num_updates = 0;

  static BNLayerState make(const std::string& name, std::size_t channels, double alpha = 0.1);
  std::size_t channels() const { return running_mean.numel(); }
  void collect(std::vector<Param*>& out) { out.insert(out.end(), {&gamma, &beta}); }
};

enum class BnMode {
  Train,       // batch statistics, running statistics updated
  BatchStats,  // batch statistics, running statistics untouched
  Eval,        // running statistics
};

struct BatchNormResult {
  Tensor output;
  Tensor batch_mean;  // [C], differentiable w.r.t. the input; empty in Eval
  Tensor batch_var;   // [C], biased
};

BatchNormResult batchnorm(const Tensor& x, BNLayerState& state, BnMode mode);

/// One step of the running-statistic recurrence using detached batch values.
void bn_ema_update(BNLayerState& state, std::span<const double> batch_mean, std::span<const double> batch_var);

// --- instance normalization ----------------------------------------------------

struct InstanceNormLayer {
  Param gamma;
  Param beta;
  double eps = 1e-5;

  static InstanceNormLayer make(const std::string& name, std::size_t channels);
  void collect(std::vector<Param*>& out) { out.insert(out.end(), {&gamma, &beta}); }
};

/// Per-sample per-channel standardization, then affine.
Tensor instance_norm(const Tensor& x, const InstanceNormLayer& layer);

// --- dense / pooling / resampling ----------------------------------------------

struct DenseLayer {
  Param weight;  // [in, out]
  Param bias;    // [out]

  static DenseLayer make(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed);
  void collect(std::vector<Param*>& out) { out.insert(out.end(), {&weight, &bias}); }
};

Tensor dense(const Tensor& x, const DenseLayer& layer);

enum class PoolKind { Max, Avg };
Tensor pool2d(PoolKind kind, const Tensor& x, std::size_t kernel, std::size_t stride);
/// Mean over the spatial axes: [B,C,H,W] -> [B,C].
Tensor global_avg_pool(const Tensor& x);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

/// Row softmax of [B,C] logits with max subtraction.
Tensor softmax(const Tensor& logits);

// --- optimizer -----------------------------------------------------------------

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Bias-corrected Adam. `grads[i]` pairs with `params[i]`; frozen params are skipped.
void adam_step(std::span<Param* const> params, std::span<const Tensor> grads, AdamState& state);
/// Convenience overload reading gradients of watched parameters.
void adam_step(std::span<Param* const> params, const Gradients& grads, AdamState& state);

}  // namespace gda
