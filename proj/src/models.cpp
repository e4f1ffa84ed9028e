#include "gda/models.hpp"

#include <algorithm>
#include <cmath>

#include "gda/random.hpp"

namespace gda {

namespace {

Tensor relu_block(const Tensor& x, const ConvLayer& conv, BNLayerState& bn, BnMode mode, SourceOutput& out) {
  Tensor pre = conv.forward(x);
  BatchNormResult r = batchnorm(pre, bn, mode);
  out.pre_bn.push_back(std::move(pre));
  if (mode != BnMode::Eval) out.bn_stats.push_back({r.batch_mean, r.batch_var});
  return relu(r.output);
}

void append(std::vector<Param*>& out, ConvLayer& c) { c.collect(out); }
void append(std::vector<Param*>& out, BNLayerState& b) { b.collect(out); }
void append(std::vector<Param*>& out, InstanceNormLayer& n) { n.collect(out); }

// Input logit used by the generator's global skip path.
Tensor input_logit(const Tensor& x) {
  constexpr double kEdge = 1e-3;
  auto v = x.to_vector();
  for (double& p : v) {
    p = std::clamp(p, kEdge, 1.0 - kEdge);
    p = std::log(p / (1.0 - p));
  }
  return Tensor::from_values(x.shape(), std::move(v));
}

}  // namespace

// --- F -------------------------------------------------------------------------

FeatureExtractor FeatureExtractor::make(std::uint64_t seed, double bn_alpha) {
  const std::array<std::size_t, 4> ch{kImageChannels, 32, 64, 128};
  FeatureExtractor f;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "F.block" + std::to_string(i + 1);
    f.conv[i] = ConvLayer::make(name + ".conv", ch[i], ch[i + 1], 3, 2, 1, mix_seed(seed, 100 + i));
    f.bn[i] = BNLayerState::make(name + ".bn", ch[i + 1], bn_alpha);
  }
  return f;
}

std::vector<Param*> FeatureExtractor::params() {
  std::vector<Param*> out;
  for (std::size_t i = 0; i < 3; ++i) {
    append(out, conv[i]);
    append(out, bn[i]);
  }
  return out;
}

// --- H -------------------------------------------------------------------------

Classifier Classifier::make(std::uint64_t seed) {
  return {DenseLayer::make("H.fc", 128, kNumClasses, mix_seed(seed, 200))};
}

std::vector<Param*> Classifier::params() {
  std::vector<Param*> out;
  fc.collect(out);
  return out;
}

// --- R -------------------------------------------------------------------------

DepthEstimator DepthEstimator::make(std::uint64_t seed, double bn_alpha) {
  DepthEstimator r;
  r.conv[0] = ConvLayer::make("R.block1.conv", 64, 32, 3, 1, 1, mix_seed(seed, 300));
  r.bn[0] = BNLayerState::make("R.block1.bn", 32, bn_alpha);
  r.conv[1] = ConvLayer::make("R.block2.conv", 32, 32, 3, 1, 1, mix_seed(seed, 301));
  r.bn[1] = BNLayerState::make("R.block2.bn", 32, bn_alpha);
  r.head = ConvLayer::make("R.head", 32, 1, 1, 1, 0, mix_seed(seed, 302));
  return r;
}

std::vector<Param*> DepthEstimator::params() {
  std::vector<Param*> out;
  for (std::size_t i = 0; i < 2; ++i) {
    append(out, conv[i]);
    append(out, bn[i]);
  }
  append(out, head);
  return out;
}

// --- φ -------------------------------------------------------------------------

PerceptualNet PerceptualNet::make(std::uint64_t seed) {
  PerceptualNet p;
  p.stage[0] = ConvLayer::make("phi.stage1", kImageChannels, 16, 3, 1, 1, mix_seed(seed, 400));
  p.stage[1] = ConvLayer::make("phi.stage2", 16, 32, 3, 2, 1, mix_seed(seed, 401));
  p.stage[2] = ConvLayer::make("phi.stage3", 32, 64, 3, 2, 1, mix_seed(seed, 402));
  for (Param* q : p.params()) q->frozen = true;
  return p;
}

std::vector<Param*> PerceptualNet::params() {
  std::vector<Param*> out;
  for (auto& s : stage) append(out, s);
  return out;
}

Tensor PerceptualNet::features(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < tap; ++i) h = relu(stage[i].forward(h));
  return h;
}

// --- G -------------------------------------------------------------------------

Generator Generator::make(std::uint64_t seed, std::size_t base, std::size_t residual_blocks) {
  Generator g;
  const std::size_t wide = 2 * base;
  g.enc1 = ConvLayer::make("G.enc1.conv", kImageChannels, base, 3, 2, 1, mix_seed(seed, 500));
  g.enc1_norm = InstanceNormLayer::make("G.enc1.norm", base);
  g.enc2 = ConvLayer::make("G.enc2.conv", base, wide, 3, 2, 1, mix_seed(seed, 501));
  g.enc2_norm = InstanceNormLayer::make("G.enc2.norm", wide);
  for (std::size_t i = 0; i < residual_blocks; ++i) {
    const std::string name = "G.res" + std::to_string(i + 1);
    g.blocks.push_back({ConvLayer::make(name + ".conv_a", wide, wide, 3, 1, 1, mix_seed(seed, 510 + 2 * i)),
                        InstanceNormLayer::make(name + ".norm_a", wide),
                        ConvLayer::make(name + ".conv_b", wide, wide, 3, 1, 1, mix_seed(seed, 511 + 2 * i)),
                        InstanceNormLayer::make(name + ".norm_b", wide)});
  }
  g.dec1 = ConvLayer::make("G.dec1.conv", wide, base, 3, 1, 1, mix_seed(seed, 520));
  g.dec1_norm = InstanceNormLayer::make("G.dec1.norm", base);
  g.dec2 = ConvLayer::make("G.dec2.conv", base, kImageChannels, 3, 1, 1, mix_seed(seed, 521), 0.05);
  return g;
}

std::vector<Param*> Generator::params() {
  std::vector<Param*> out;
  append(out, enc1);
  append(out, enc1_norm);
  append(out, enc2);
  append(out, enc2_norm);
  for (auto& b : blocks) {
    append(out, b.conv_a);
    append(out, b.norm_a);
    append(out, b.conv_b);
    append(out, b.norm_b);
  }
  append(out, dec1);
  append(out, dec1_norm);
  append(out, dec2);
  return out;
}

Tensor Generator::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != kImageChannels)
    throw ShapeError("generator expects [B,3,H,W], got " + shape_str(x.shape()));
  Tensor h = relu(instance_norm(enc1.forward(x), enc1_norm));
  h = relu(instance_norm(enc2.forward(h), enc2_norm));
  for (const auto& b : blocks) {
    const Tensor inner = relu(instance_norm(b.conv_a.forward(h), b.norm_a));
    h = h + instance_norm(b.conv_b.forward(inner), b.norm_b);
  }
  h = relu(instance_norm(dec1.forward(upsample_nearest(h, 2)), dec1_norm));
  h = dec2.forward(upsample_nearest(h, 2));
  return sigmoid(h + input_logit(x));
}

// --- bundle --------------------------------------------------------------------

const char* network_name(Network n) {
  switch (n) {
    case Network::F: return "F";
    case Network::H: return "H";
    case Network::R: return "R";
    case Network::G: return "G";
    case Network::Phi: return "phi";
  }
  return "?";
}

std::vector<Param*> ModelBundle::params(Network n) {
  switch (n) {
    case Network::F: return F.params();
    case Network::H: return H.params();
    case Network::R: return R.params();
    case Network::Phi: return phi.params();
    case Network::G: return G ? G->params() : std::vector<Param*>{};
  }
  return {};
}

std::vector<Param*> ModelBundle::source_params() {
  std::vector<Param*> out = F.params();
  for (Param* p : H.params()) out.push_back(p);
  for (Param* p : R.params()) out.push_back(p);
  return out;
}

std::vector<BNLayerState*> ModelBundle::bn_layers() {
  return {&F.bn[0], &F.bn[1], &F.bn[2], &R.bn[0], &R.bn[1]};
}

std::vector<const BNLayerState*> ModelBundle::bn_layers() const {
  return {&F.bn[0], &F.bn[1], &F.bn[2], &R.bn[0], &R.bn[1]};
}

bool ModelBundle::is_frozen(Network n) {
  const auto ps = params(n);
  return !ps.empty() && std::all_of(ps.begin(), ps.end(), [](const Param* p) { return p->frozen; });
}

ModelBundle build_source_bundle(std::uint64_t seed, double bn_alpha) {
  ModelBundle b{FeatureExtractor::make(seed, bn_alpha), Classifier::make(seed), DepthEstimator::make(seed, bn_alpha),
                PerceptualNet::make(seed), std::nullopt};
  return b;
}

Generator build_generator(std::uint64_t seed) { return Generator::make(seed); }

void freeze(ModelBundle& bundle, std::initializer_list<Network> which) {
  for (Network n : which)
    for (Param* p : bundle.params(n)) p->frozen = true;
}

void unfreeze(ModelBundle& bundle, std::initializer_list<Network> which) {
  for (Network n : which)
    for (Param* p : bundle.params(n)) p->frozen = false;
}

SourceOutput forward_source(ModelBundle& bundle, const Tensor& x, BnMode mode) {
  if (x.rank() != 4 || x.dim(1) != kImageChannels || x.dim(2) != kImageSize || x.dim(3) != kImageSize)
    throw ShapeError("forward_source expects [B,3,32,32], got " + shape_str(x.shape()));
  SourceOutput out;
  Tensor h = x;
  for (std::size_t i = 0; i < 3; ++i) {
    h = relu_block(h, bundle.F.conv[i], bundle.F.bn[i], mode, out);
    out.block_features.push_back(h);
  }
  out.logits = dense(global_avg_pool(h), bundle.H.fc);
  Tensor d = relu_block(out.block_features[1], bundle.R.conv[0], bundle.R.bn[0], mode, out);
  d = relu_block(d, bundle.R.conv[1], bundle.R.bn[1], mode, out);
  out.depth_logits = bundle.R.head.forward(d);
  return out;
}

std::vector<StoredStats> stored_stats(const ModelBundle& bundle) {
  std::vector<StoredStats> out;
  for (const BNLayerState* bn : bundle.bn_layers()) out.push_back({bn->running_mean, bn->running_var, bn->eps});
  return out;
}

std::vector<double> live_scores(const Tensor& logits) {
  NoGradGuard guard;
  const Tensor p = softmax(logits.detach());
  std::vector<double> s(logits.dim(0));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = p[i * kNumClasses + 1];
  return s;
}

}  // namespace gda
