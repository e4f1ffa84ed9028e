#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include "gda/layers.hpp"
#include "gda/objectives.hpp"

namespace gda {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kDepthSize = 8;
inline constexpr std::size_t kNumClasses = 2;

/// F: three conv(3x3, stride 2)/BN/ReLU blocks, 3 -> 32 -> 64 -> 128 channels.
struct FeatureExtractor {
  std::array<ConvLayer, 3> conv;
  std::array<BNLayerState, 3> bn;

  static FeatureExtractor make(std::uint64_t seed, double bn_alpha);
  std::vector<Param*> params();
};

/// H: global average pool then a 128 -> 2 dense layer.
struct Classifier {
  DenseLayer fc;

  static Classifier make(std::uint64_t seed);
  std::vector<Param*> params();
};

/// R: two conv/BN/ReLU blocks on F's second block, then a 1x1 conv to one depth logit per cell.
struct DepthEstimator {
  std::array<ConvLayer, 2> conv;
  std::array<BNLayerState, 2> bn;
  ConvLayer head;

  static DepthEstimator make(std::uint64_t seed, double bn_alpha);
  std::vector<Param*> params();
};

/// φ: fixed random conv/ReLU stages. Features come from the second stage.
struct PerceptualNet {
  std::array<ConvLayer, 3> stage;
  std::size_t tap = 2;

  static PerceptualNet make(std::uint64_t seed);
  std::vector<Param*> params();
  Tensor features(const Tensor& x) const;
};

/// G: encoder (two stride-2 conv + instance norm), residual blocks, nearest-upsample/conv decoder.
/// The decoder output is added to the input logit before the final sigmoid, and the
/// last conv starts near zero, so a fresh generator is close to the identity.
struct Generator {
  struct ResidualBlock {
    ConvLayer conv_a;
    InstanceNormLayer norm_a;
    ConvLayer conv_b;
    InstanceNormLayer norm_b;
  };

  ConvLayer enc1;
  InstanceNormLayer enc1_norm;
  ConvLayer enc2;
  InstanceNormLayer enc2_norm;
  std::vector<ResidualBlock> blocks;
  ConvLayer dec1;
  InstanceNormLayer dec1_norm;
  ConvLayer dec2;

  static Generator make(std::uint64_t seed, std::size_t base_channels = 16, std::size_t residual_blocks = 2);
  std::vector<Param*> params();
  Tensor forward(const Tensor& x) const;
};

enum class Network { F, H, R, G, Phi };
const char* network_name(Network n);

struct ModelBundle {
  FeatureExtractor F;
  Classifier H;
  DepthEstimator R;
  PerceptualNet phi;
  std::optional<Generator> G;

  std::vector<Param*> params(Network n);
  std::vector<Param*> source_params();  // F, H, R
  /// BN layers of F then R, in definition order. This is the layer alignment used by the statistic loss.
  std::vector<BNLayerState*> bn_layers();
  std::vector<const BNLayerState*> bn_layers() const;
  bool is_frozen(Network n);
};

/// F, H, R initialized from `seed`; φ seeded and frozen; no generator.
ModelBundle build_source_bundle(std::uint64_t seed, double bn_alpha = 0.1);
Generator build_generator(std::uint64_t seed);

/// Sets the frozen flag on every parameter of the listed networks. Idempotent.
void freeze(ModelBundle& bundle, std::initializer_list<Network> which);
void unfreeze(ModelBundle& bundle, std::initializer_list<Network> which);

struct SourceOutput {
  Tensor logits;        // [B,2]
  Tensor depth_logits;  // [B,1,8,8]
  std::vector<LayerStats> bn_stats;   // one per BN layer; empty in Eval mode
  std::vector<Tensor> block_features;  // F block outputs, shallow to deep
  std::vector<Tensor> pre_bn;          // inputs of every BN layer, same order as bn_stats
};

/// Runs F, H and R. `mode` is applied to every BN layer.
SourceOutput forward_source(ModelBundle& bundle, const Tensor& x, BnMode mode);

/// Stored running statistics of every BN layer, aligned with forward_source's bn_stats.
std::vector<StoredStats> stored_stats(const ModelBundle& bundle);

/// Softmax probability of the live class (index 1).
std::vector<double> live_scores(const Tensor& logits);

}  // namespace gda
