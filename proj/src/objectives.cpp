#include "gda/objectives.hpp"

#include <algorithm>
#include <string>

#include "gda/layers.hpp"

namespace gda {

Tensor stat_consistency_loss(std::span<const LayerStats> batch, std::span<const StoredStats> stored) {
  if (batch.size() != stored.size())
    throw ShapeError("stat_consistency_loss: " + std::to_string(batch.size()) + " batch layers vs " +
                     std::to_string(stored.size()) + " stored layers");
  if (batch.empty()) throw ShapeError("stat_consistency_loss: no BN layers");
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t l = 0; l < batch.size(); ++l) {
    const LayerStats& b = batch[l];
    const StoredStats& s = stored[l];
    if (b.mean.numel() != s.mean.numel() || b.var.numel() != s.var.numel())
      throw ShapeError("stat_consistency_loss: channel mismatch at layer " + std::to_string(l));
    const Tensor stored_sd = sqrt(s.var.detach() + s.eps);
    const Tensor d_mean = b.mean - s.mean.detach();
    const Tensor d_sd = sqrt(b.var + s.eps) - stored_sd;
    total = total + norm2(d_mean) + norm2(d_sd);
  }
  return total * (1.0 / static_cast<double>(batch.size()));
}

Tensor perceptual_loss(const Tensor& generated, const Tensor& target) {
  if (generated.shape() != target.shape())
    throw ShapeError("perceptual_loss shape mismatch: " + shape_str(generated.shape()) + " vs " +
                     shape_str(target.shape()));
  return mean_all(square(generated - target.detach()));
}

Tensor entropy_classifier(const Tensor& probs) {
  if (probs.rank() != 2) throw ShapeError("entropy_classifier expects [B,C]");
  const double inv_batch = 1.0 / static_cast<double>(probs.dim(0));
  return sum_all(probs * log(probs + kLogEps)) * (-inv_batch);
}

Tensor entropy_depth(const Tensor& depth_logits) {
  const Tensor r = sigmoid(depth_logits);
  const Tensor q = r * -1.0 + 1.0;
  return -mean_all(r * log(r + kLogEps) + q * log(q + kLogEps));
}

double total_loss(const LossReport& c, const LossWeights& w) {
  return c.stat + c.per + w.lambda_ent * (c.ent1 + c.ent2) + w.lambda_ph * c.ph;
}

Tensor total_loss(const Tensor& stat, const Tensor& per, const Tensor& ent1, const Tensor& ent2, const Tensor& ph,
                  const LossWeights& w) {
  return stat + per + (ent1 + ent2) * w.lambda_ent + ph * w.lambda_ph;
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_loss expects [B,C]");
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) throw ShapeError("cross_entropy_loss: label count does not match batch");
  const auto d = logits.data();
  std::vector<double> row_max(rows);
  std::vector<double> onehot(rows * cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    row_max[r] = *std::max_element(d.begin() + r * cols, d.begin() + (r + 1) * cols);
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= cols)
      throw std::invalid_argument("cross_entropy_loss: label out of range");
    onehot[r * cols + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  const Tensor shifted = logits - Tensor::from_values({rows, 1}, std::move(row_max));
  const Tensor log_probs = shifted - log(sum(exp(shifted), {1}, true));
  return sum_all(mask(log_probs, onehot)) * (-1.0 / static_cast<double>(rows));
}

Tensor depth_regression_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("depth_regression_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  return mean_all(square(pred - target));
}

}  // namespace gda
