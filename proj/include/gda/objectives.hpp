#pragma once

#include <span>
#include <vector>

#include "gda/tensor.hpp"

namespace gda {

/// ε inside every logarithm of the entropy and cross-entropy terms.
inline constexpr double kLogEps = 1e-8;

struct LossWeights {
  double lambda_ent = 0.01;
  double lambda_ph = 0.01;
};

/// Scalar values of one adaptation step.
struct LossReport {
  double stat = 0.0;
  double per = 0.0;
  double ent1 = 0.0;
  double ent2 = 0.0;
  double ph = 0.0;
  double total = 0.0;
};

/// Batch statistics of one BN layer: mean and (biased) variance, both [C].
struct LayerStats {
  Tensor mean;
  Tensor var;
};

/// Stored running statistics of one BN layer.
struct StoredStats {
  Tensor mean;
  Tensor var;
  double eps = 1e-5;
};

/// (1/L) Σ_l ‖μ_l − μ̄_l‖₂ + ‖σ_l − σ̄_l‖₂, where σ = sqrt(var + eps) is the standard deviation.
Tensor stat_consistency_loss(std::span<const LayerStats> batch, std::span<const StoredStats> stored);

/// Mean squared difference over all feature elements; gradient flows into `generated` only.
Tensor perceptual_loss(const Tensor& generated, const Tensor& target);

/// Batch mean of Σ_c −p_c log(p_c + ε) for probability rows [B,C].
Tensor entropy_classifier(const Tensor& probs);

/// Mean binary entropy of sigmoid(depth_logits) over pixels and batch.
Tensor entropy_depth(const Tensor& depth_logits);

/// Weighted sum stat + per + λ_ent (ent1 + ent2) + λ_ph ph.
double total_loss(const LossReport& components, const LossWeights& weights);
Tensor total_loss(const Tensor& stat, const Tensor& per, const Tensor& ent1, const Tensor& ent2, const Tensor& ph,
                  const LossWeights& weights);

/// Softmax cross entropy averaged over the batch. labels[i] ∈ {0,1,...,C-1}.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

/// Mean squared error over all elements.
Tensor depth_regression_loss(const Tensor& pred, const Tensor& target);

}  // namespace gda
