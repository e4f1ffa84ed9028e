#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gda/checkpoint.hpp"
#include "gda/models.hpp"
#include "gda/netpbm.hpp"
#include "gda/random.hpp"
#include "gda/spectrum.hpp"

using namespace gda;
namespace fs = std::filesystem;

namespace {

Tensor random_images(std::size_t b, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v(b * 3 * 32 * 32);
  for (double& x : v) x = rng.uniform();
  return Tensor::from_values({b, 3, 32, 32}, std::move(v));
}

std::vector<std::vector<double>> snapshot(const std::vector<Param*>& ps) {
  std::vector<std::vector<double>> out;
  for (const Param* p : ps) out.push_back(p->value.to_vector());
  return out;
}

// Stage-1 style warm up so every BN layer has running statistics.
ModelBundle warmed_bundle(std::uint64_t seed) {
  ModelBundle b = build_source_bundle(seed);
  forward_source(b, random_images(4, seed + 1), BnMode::Train);
  return b;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gda_test_models";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(SourceBundle, SameSeedSameParameters) {
  ModelBundle a = build_source_bundle(5), b = build_source_bundle(5), c = build_source_bundle(6);
  EXPECT_EQ(snapshot(a.source_params()), snapshot(b.source_params()));
  EXPECT_NE(snapshot(a.source_params()), snapshot(c.source_params()));
  EXPECT_TRUE(a.is_frozen(Network::Phi));
  EXPECT_FALSE(a.is_frozen(Network::F));
  EXPECT_FALSE(a.G.has_value());
}

TEST(SourceBundle, ForwardShapesAndRegistry) {
  ModelBundle b = build_source_bundle(1);
  const SourceOutput out = forward_source(b, random_images(3, 2), BnMode::Train);
  EXPECT_EQ(out.logits.shape(), (Shape{3, 2}));
  EXPECT_EQ(out.depth_logits.shape(), (Shape{3, 1, 8, 8}));
  EXPECT_EQ(out.bn_stats.size(), b.bn_layers().size());
  EXPECT_GE(out.bn_stats.size(), 5u);
  EXPECT_EQ(out.block_features.size(), 3u);
  const SourceOutput ev = forward_source(b, random_images(3, 2), BnMode::Eval);
  EXPECT_TRUE(ev.bn_stats.empty());
  EXPECT_THROW(forward_source(b, Tensor::zeros({1, 3, 16, 16}), BnMode::Eval), ShapeError);
}

TEST(SourceBundle, BatchStatisticsEqualMomentsOfPreBnActivations) {
  ModelBundle b = build_source_bundle(3);
  const SourceOutput out = forward_source(b, random_images(4, 4), BnMode::BatchStats);
  ASSERT_EQ(out.pre_bn.size(), out.bn_stats.size());
  for (std::size_t l = 0; l < out.pre_bn.size(); ++l) {
    const Tensor& z = out.pre_bn[l];
    const std::size_t B = z.dim(0), C = z.dim(1), HW = z.dim(2) * z.dim(3);
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t k = 0; k < HW; ++k) m += z[(n * C + c) * HW + k];
      m /= static_cast<double>(B * HW);
      double v = 0.0;
      for (std::size_t n = 0; n < B; ++n)
        for (std::size_t k = 0; k < HW; ++k) v += std::pow(z[(n * C + c) * HW + k] - m, 2);
      v /= static_cast<double>(B * HW);
      EXPECT_NEAR(out.bn_stats[l].mean[c], m, 1e-10);
      EXPECT_NEAR(out.bn_stats[l].var[c], v, 1e-10);
    }
  }
}

TEST(SourceBundle, EvalForwardIsBitwiseDeterministic) {
  ModelBundle b = warmed_bundle(7);
  const Tensor x = random_images(2, 8);
  const SourceOutput a = forward_source(b, x, BnMode::Eval), c = forward_source(b, x, BnMode::Eval);
  EXPECT_EQ(a.logits.to_vector(), c.logits.to_vector());
  EXPECT_EQ(a.depth_logits.to_vector(), c.depth_logits.to_vector());
}

TEST(Phi, OutputInvariantAcrossCalls) {
  ModelBundle b = build_source_bundle(2);
  const Tensor x = random_images(2, 3);
  EXPECT_EQ(b.phi.features(x).to_vector(), b.phi.features(x).to_vector());
}

TEST(Generator, ShapeRangeAndNearIdentityStart) {
  const Generator g = build_generator(4);
  const Tensor x = random_images(2, 5);
  const Tensor y = g.forward(x);
  EXPECT_EQ(y.shape(), x.shape());
  double max_dev = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    EXPECT_GE(y[i], 0.0);
    EXPECT_LE(y[i], 1.0);
    max_dev = std::max(max_dev, std::abs(y[i] - x[i]));
  }
  EXPECT_LT(max_dev, 0.1);
}

TEST(Generator, TotalLossReachesEveryParameter) {
  ModelBundle b = warmed_bundle(9);
  freeze(b, {Network::F, Network::H, Network::R, Network::Phi});
  Generator g = build_generator(10);
  const auto params = g.params();
  const Tensor x = random_images(4, 11);
  watch_params(params);
  const Tensor y = g.forward(x);
  const SourceOutput out = forward_source(b, y, BnMode::BatchStats);
  Tensor tf;
  {
    NoGradGuard guard;
    tf = b.phi.features(x);
  }
  const Tensor loss = total_loss(stat_consistency_loss(out.bn_stats, stored_stats(b)),
                                 perceptual_loss(b.phi.features(y), tf), entropy_classifier(softmax(out.logits)),
                                 entropy_depth(out.depth_logits), phase_consistency_loss(x, y), LossWeights{});
  const Gradients grads = backward(loss);
  for (Param* p : params) {
    const Tensor gp = grads.of(p->value);
    double norm = 0.0;
    for (std::size_t i = 0; i < gp.numel(); ++i) norm += gp[i] * gp[i];
    EXPECT_GT(norm, 0.0) << p->name;
  }
}

TEST(Freeze, IdempotentAndBlocksUpdates) {
  ModelBundle b = warmed_bundle(12);
  freeze(b, {Network::F, Network::H, Network::R});
  freeze(b, {Network::F, Network::H, Network::R});
  EXPECT_TRUE(b.is_frozen(Network::F));
  const auto before = snapshot(b.source_params());
  const auto params = b.source_params();
  watch_params(params);
  const Tensor x = active_tape().watch(random_images(2, 13));
  const SourceOutput out = forward_source(b, x, BnMode::BatchStats);
  const Gradients g = backward(sum_all(out.logits));
  EXPECT_TRUE(g.has(x));
  AdamState adam;
  adam_step(params, g, adam);
  EXPECT_EQ(snapshot(b.source_params()), before);
  unfreeze(b, {Network::F});
  EXPECT_FALSE(b.is_frozen(Network::F));
}

TEST(Freeze, OneGeneratorStepMovesOnlyG) {
  ModelBundle b = warmed_bundle(14);
  freeze(b, {Network::F, Network::H, Network::R, Network::Phi});
  Generator g = build_generator(15);
  const auto gp = g.params();
  const auto g_before = snapshot(gp);
  const auto s_before = snapshot(b.source_params());
  const auto phi_before = snapshot(b.phi.params());
  watch_params(gp);
  const SourceOutput out = forward_source(b, g.forward(random_images(4, 16)), BnMode::BatchStats);
  const Gradients grads = backward(stat_consistency_loss(out.bn_stats, stored_stats(b)));
  AdamState adam;
  adam.lr = 1e-3;
  adam_step(gp, grads, adam);
  EXPECT_NE(snapshot(gp), g_before);
  EXPECT_EQ(snapshot(b.source_params()), s_before);
  EXPECT_EQ(snapshot(b.phi.params()), phi_before);
}

TEST(Checkpoint, RoundTripWithinFloatPrecisionAndEvalBitwise) {
  ModelBundle b = warmed_bundle(17);
  b.G = build_generator(18);
  const fs::path p = temp_path("round.gdac");
  save_checkpoint(b, p);
  ModelBundle r = load_checkpoint(p);
  ASSERT_TRUE(r.G.has_value());
  const auto want = bundle_tensors(b), got = bundle_tensors(r);
  ASSERT_EQ(want.size(), got.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(want[i].name, got[i].name);
    for (std::size_t k = 0; k < want[i].value.numel(); ++k)
      EXPECT_EQ(static_cast<float>(want[i].value[k]), static_cast<float>(got[i].value[k]));
  }
  EXPECT_TRUE(r.is_frozen(Network::Phi));

  // A second save of the loaded bundle reproduces the file and its eval outputs.
  const fs::path p2 = temp_path("round2.gdac");
  save_checkpoint(r, p2);
  EXPECT_EQ(read_file_bytes(p), read_file_bytes(p2));
  ModelBundle r2 = load_checkpoint(p2);
  const Tensor x = random_images(2, 19);
  EXPECT_EQ(forward_source(r, x, BnMode::Eval).logits.to_vector(),
            forward_source(r2, x, BnMode::Eval).logits.to_vector());
}

TEST(Checkpoint, DistinctErrorCodes) {
  ModelBundle b = warmed_bundle(20);
  const std::vector<std::uint8_t> good = encode_checkpoint(bundle_tensors(b));
  auto code_of = [](const std::vector<std::uint8_t>& bytes) {
    try {
      decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
      return e.code();
    }
    return CheckpointErrc::Io;
  };

  auto truncated = good;
  truncated.resize(good.size() / 2);
  EXPECT_EQ(code_of(truncated), CheckpointErrc::CrcMismatch);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(code_of(magic), CheckpointErrc::BadMagic);

  auto version = good;
  version[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  EXPECT_EQ(code_of(version), CheckpointErrc::UnsupportedVersion);
  try {
    decode_checkpoint(version);
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }

  auto flipped = good;
  flipped[good.size() / 2] ^= 0x40;
  EXPECT_EQ(code_of(flipped), CheckpointErrc::CrcMismatch);

  auto partial = bundle_tensors(b);
  partial.pop_back();
  const fs::path p = temp_path("partial.gdac");
  write_checkpoint(p, partial);
  try {
    load_checkpoint(p);
    ADD_FAILURE() << "missing tensor accepted";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), CheckpointErrc::MissingTensor);
  }
}

TEST(Checkpoint, HeaderLayout) {
  const std::vector<NamedTensor> one{{"w", Tensor::from_values({2}, {1.5, -2.0})}};
  const auto bytes = encode_checkpoint(one);
  // magic 4 + version 2 + count 4 + name len 2 + name 1 + ndim 1 + dim 4 + payload 8 + crc 4
  ASSERT_EQ(bytes.size(), 30u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GDAC");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), kCheckpointVersion);
  EXPECT_EQ(bytes[6], 1);
  EXPECT_EQ(bytes[12], 'w');
  EXPECT_EQ(bytes[13], 1);
  EXPECT_EQ(bytes[14], 2);
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back[0].value[0], 1.5);
  EXPECT_EQ(back[0].value[1], -2.0);
}
