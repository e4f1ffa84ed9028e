#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gda/metrics.hpp"
#include "gda/models.hpp"
#include "gda/objectives.hpp"
#include "gda/synth_data.hpp"

namespace gda {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t source_epochs = 20;
  std::size_t adapt_steps = 2000;
  double lr = 1e-4;         // generator
  double source_lr = 1e-4;  // stage 1
  double eta = 0.1;
  LossWeights weights;
  double bn_alpha = 0.1;
  std::uint64_t seed = 0;
  // Component switches of the ablation grid. SpecMix is switched off with eta = 0.
  bool use_nsc = true;
  bool use_dsc = true;
  bool use_entropy = true;

  void validate() const;
};

struct SourceLogRow {
  std::size_t epoch;
  std::size_t step;
  double ce;
  double depth;
  double total;
};

struct SourceTrainResult {
  ModelBundle bundle;
  std::vector<SourceLogRow> log;
};

/// Stage 1: cross entropy plus depth MSE on the pooled labeled source set.
SourceTrainResult train_source(const TrainConfig& config, const LabeledSet& source);

struct AdaptLogRow {
  std::size_t step;
  LossReport loss;
};

struct AdaptResult {
  Generator generator;
  std::vector<AdaptLogRow> log;
  /// Exponential average of the stylized batch statistics, monitoring only.
  std::vector<LayerStats> stylized_stats_ema;
};

using StepCallback = std::function<void(const AdaptLogRow&)>;

/// Stage 2: trains G on unlabeled target images while F, H, R and φ stay frozen.
AdaptResult adapt_generator(const TrainConfig& config, ModelBundle& bundle, const UnlabeledSet& target,
                            const StepCallback& on_step = {});

/// Stylizes a [B,3,32,32] batch without recording gradients.
Tensor stylize(const Generator& generator, const Tensor& x);

struct DomainMetrics {
  double auc;
  double hter;
};

struct EvalReport {
  double auc = 0.0;
  double hter = 0.0;
  double eer_threshold = 0.0;
  double hter_at_half = 0.0;
  std::vector<RocPoint> roc;
  std::map<std::string, DomainMetrics> per_domain;
  std::vector<double> scores;
};

/// Live probability of every image, in order, with BN in eval mode.
std::vector<double> score_images(ModelBundle& bundle, const Generator* generator, const std::vector<Tensor>& images);

EvalReport evaluate(ModelBundle& bundle, const Generator* generator, const LabeledSet& data);

struct BnCurvePoint {
  std::string layer;
  double d_mean;
  double d_var;
};

/// Dataset-level pre-BN statistics under the frozen eval-mode model, compared channel-wise
/// with the stored running statistics. Distances are mean absolute differences over channels.
std::vector<BnCurvePoint> bn_discrepancy(ModelBundle& bundle, const std::vector<Tensor>& images,
                                         const Generator* generator);

/// Global-average-pooled activations [N, C] of F block `block` (0-based), eval mode.
std::vector<double> block_features(ModelBundle& bundle, const std::vector<Tensor>& images,
                                   const Generator* generator, std::size_t block, std::size_t& width);

struct MmdCurvePoint {
  std::size_t block;
  double mmd;
};

/// Per-block MMD of F features. The RBF bandwidth is the median heuristic on the reference features.
std::vector<MmdCurvePoint> mmd_curve(ModelBundle& bundle, const std::vector<Tensor>& reference,
                                     const std::vector<Tensor>& other, const Generator* generator,
                                     MmdKernel kernel, MmdEstimator estimator = MmdEstimator::Unbiased);

/// Layer tags: block1, block2, block3, logits.
void export_features_csv(ModelBundle& bundle, const std::vector<Tensor>& images,
                         const std::vector<std::string>& domains, const std::vector<int>* labels,
                         const Generator* generator, const std::string& layer, const std::filesystem::path& path);

struct AblationRow {
  std::string config;
  std::uint64_t seed;
  double hter;
  double auc;
};

/// Rows I–IV: baseline, +NSC, +NSC+DSC, full (adds SpecMix).
std::vector<AblationRow> ablation_run(const TrainConfig& config, ModelBundle& bundle, const UnlabeledSet& target_train,
                                      const LabeledSet& target_test, const std::vector<std::uint64_t>& seeds);

inline const std::vector<std::string>& ablation_configs() {
  static const std::vector<std::string> names{"baseline", "nsc", "nsc_dsc", "full"};
  return names;
}
TrainConfig ablation_config(const TrainConfig& base, const std::string& name);

// CSV writers. Floats use 9 significant digits.
void write_source_log_csv(const std::vector<SourceLogRow>& rows, const std::filesystem::path& path);
void write_adapt_log_csv(const std::vector<AdaptLogRow>& rows, const std::filesystem::path& path);
void write_eval_csv(const EvalReport& report, const std::filesystem::path& path);
void write_roc_csv(const std::vector<RocPoint>& roc, const std::filesystem::path& path);
void write_bn_curve_csv(const std::vector<BnCurvePoint>& rows, const std::filesystem::path& path);
void write_mmd_curve_csv(const std::vector<MmdCurvePoint>& rows, const std::filesystem::path& path);
void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

}  // namespace gda
