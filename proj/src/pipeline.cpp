#include "gda/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "gda/random.hpp"
#include "gda/spectrum.hpp"

namespace gda {

namespace {

constexpr std::size_t kEvalBatch = 64;
constexpr double kStatEmaRatio = 0.1;

void check_finite(double v, const std::string& what, std::size_t step) {
  if (!std::isfinite(v))
    throw std::runtime_error("non-finite " + what + " at step " + std::to_string(step) + "; aborting");
}

std::string layer_name(const BNLayerState& bn) {
  const std::string& g = bn.gamma.name;
  return g.substr(0, g.size() - std::string(".gamma").size());
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

struct BnSnapshot {
  std::vector<Tensor> mean, var;
  std::vector<std::uint64_t> updates;
};

BnSnapshot snapshot(ModelBundle& bundle) {
  BnSnapshot s;
  for (const BNLayerState* bn : bundle.bn_layers()) {
    s.mean.push_back(bn->running_mean);
    s.var.push_back(bn->running_var);
    s.updates.push_back(bn->num_updates);
  }
  return s;
}

void restore(ModelBundle& bundle, const BnSnapshot& s) {
  const auto layers = bundle.bn_layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i]->running_mean = s.mean[i];
    layers[i]->running_var = s.var[i];
    layers[i]->num_updates = s.updates[i];
  }
}

// Streams `images` through the eval-mode model in fixed chunks and hands each output to `visit`.
template <typename Visit>
void for_each_chunk(ModelBundle& bundle, const Generator* generator, const std::vector<Tensor>& images, Visit visit) {
  NoGradGuard guard;
  for (std::size_t start = 0; start < images.size(); start += kEvalBatch) {
    const std::size_t end = std::min(images.size(), start + kEvalBatch);
    Tensor x = stack(images, range(start, end));
    if (generator) x = generator->forward(x);
    visit(forward_source(bundle, x, BnMode::Eval), start, end);
  }
}

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
  if (source_epochs == 0) throw std::invalid_argument("source_epochs must be positive");
  if (adapt_steps == 0) throw std::invalid_argument("adapt_steps must be positive");
  if (!(lr > 0.0) || !(source_lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("eta must lie in [0,1]");
  if (!(weights.lambda_ent >= 0.0) || !(weights.lambda_ph >= 0.0))
    throw std::invalid_argument("loss weights must be nonnegative");
  if (!(bn_alpha > 0.0 && bn_alpha <= 1.0)) throw std::invalid_argument("bn_alpha must lie in (0,1]");
}

// --- stage 1 -------------------------------------------------------------------

SourceTrainResult train_source(const TrainConfig& config, const LabeledSet& source) {
  config.validate();
  if (source.size() == 0) throw std::invalid_argument("train_source: empty source set");
  SourceTrainResult result{build_source_bundle(config.seed, config.bn_alpha), {}};
  ModelBundle& bundle = result.bundle;
  const auto params = bundle.source_params();
  AdamState adam;
  adam.lr = config.source_lr;

  const bool drop_last = source.size() >= config.batch_size;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.source_epochs; ++epoch) {
    for (const auto& batch : batch_iterator(source.size(), config.batch_size, config.seed, epoch, drop_last)) {
      if (batch.size() < 2) continue;
      const Tensor x = stack(source.images, batch);
      const Tensor depth = stack(source.depths, batch);
      std::vector<int> labels;
      for (std::size_t i : batch) labels.push_back(source.labels[i]);

      watch_params(params);
      const SourceOutput out = forward_source(bundle, x, BnMode::Train);
      const Tensor ce = cross_entropy_loss(out.logits, labels);
      const Tensor dl = depth_regression_loss(sigmoid(out.depth_logits), depth);
      const Tensor loss = ce + dl;
      check_finite(loss.item(), "source loss", step);
      const Gradients g = backward(loss);
      adam_step(params, g, adam);
      result.log.push_back({epoch, step, ce.item(), dl.item(), loss.item()});
      ++step;
    }
  }
  return result;
}

// --- stage 2 -------------------------------------------------------------------

Tensor stylize(const Generator& generator, const Tensor& x) {
  NoGradGuard guard;
  return generator.forward(x);
}

AdaptResult adapt_generator(const TrainConfig& config, ModelBundle& bundle, const UnlabeledSet& target,
                            const StepCallback& on_step) {
  config.validate();
  if (target.size() < 2) throw std::invalid_argument("adapt_generator: need at least two target images");
  const auto layers = bundle.bn_layers();
  if (layers.empty()) throw std::invalid_argument("adapt_generator: bundle has no BN layers");
  for (const BNLayerState* bn : layers)
    if (bn->num_updates == 0) throw std::invalid_argument("adapt_generator: source BN statistics were never trained");

  freeze(bundle, {Network::F, Network::H, Network::R, Network::Phi});
  AdaptResult result{build_generator(mix_seed(config.seed, 0x6E6)), {}, {}};
  Generator& G = result.generator;
  const auto g_params = G.params();
  AdamState adam;
  adam.lr = config.lr;

  const std::vector<StoredStats> stored = stored_stats(bundle);
  const std::size_t half = std::min(std::max<std::size_t>(config.batch_size / 2, 1), target.size());
  SpecMixConfig mix_cfg{config.eta, config.seed};
  SplitMix64 mix_rng(mix_seed(config.seed, 0x5EC));

  std::vector<std::vector<std::size_t>> epoch_batches;
  std::size_t epoch = 0, cursor = 0;
  for (std::size_t step = 0; step < config.adapt_steps; ++step) {
    if (cursor == epoch_batches.size()) {
      epoch_batches = batch_iterator(target.size(), half, config.seed, epoch++, true);
      cursor = 0;
    }
    const auto& batch = epoch_batches[cursor++];
    const Tensor originals = stack(target.images, batch);

    // Diversified copies: amplitude mixed with an in-batch partner, phase kept.
    const auto partners = specmix_partners(batch.size(), mix_rng);
    std::vector<Tensor> mixed;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double lambda = sample_lambda(mix_cfg, mix_rng);
      mixed.push_back(specmix(target.images[batch[i]], target.images[batch[partners[i]]], lambda));
    }
    const Tensor x = concat({originals, stack(mixed, range(0, mixed.size()))}, 0);

    watch_params(g_params);
    const Tensor y = G.forward(x);
    const BnSnapshot snap = snapshot(bundle);
    const SourceOutput out = forward_source(bundle, y, BnMode::BatchStats);
    restore(bundle, snap);

    const Tensor stat = stat_consistency_loss(out.bn_stats, stored);
    Tensor target_feat;
    {
      NoGradGuard guard;
      target_feat = bundle.phi.features(x);
    }
    const Tensor per = perceptual_loss(bundle.phi.features(y), target_feat);
    const Tensor ph = phase_consistency_loss(x, y);
    const Tensor ent1 = entropy_classifier(softmax(out.logits));
    const Tensor ent2 = entropy_depth(out.depth_logits);

    const Tensor zero = Tensor::scalar(0.0);
    LossWeights w = config.weights;
    if (!config.use_entropy) w.lambda_ent = 0.0;
    if (!config.use_dsc) w.lambda_ph = 0.0;
    const Tensor total = total_loss(config.use_nsc ? stat : zero, config.use_dsc ? per : zero, ent1, ent2,
                                    config.use_dsc ? ph : zero, w);

    AdaptLogRow row{step, {stat.item(), per.item(), ent1.item(), ent2.item(), ph.item(), total.item()}};
    check_finite(row.loss.total, "adaptation loss", step);
    const Gradients g = backward(total);
    adam_step(g_params, g, adam);

    if (result.stylized_stats_ema.empty()) {
      for (const LayerStats& s : out.bn_stats) result.stylized_stats_ema.push_back({s.mean.detach(), s.var.detach()});
    } else {
      NoGradGuard guard;
      for (std::size_t l = 0; l < out.bn_stats.size(); ++l) {
        LayerStats& e = result.stylized_stats_ema[l];
        e.mean = e.mean * (1.0 - kStatEmaRatio) + out.bn_stats[l].mean.detach() * kStatEmaRatio;
        e.var = e.var * (1.0 - kStatEmaRatio) + out.bn_stats[l].var.detach() * kStatEmaRatio;
      }
    }
    result.log.push_back(row);
    if (on_step) on_step(row);
  }
  return result;
}

// --- evaluation ------------------------------------------------------------------

std::vector<double> score_images(ModelBundle& bundle, const Generator* generator, const std::vector<Tensor>& images) {
  std::vector<double> scores;
  scores.reserve(images.size());
  for_each_chunk(bundle, generator, images, [&](const SourceOutput& out, std::size_t, std::size_t) {
    const auto s = live_scores(out.logits);
    scores.insert(scores.end(), s.begin(), s.end());
  });
  return scores;
}

EvalReport evaluate(ModelBundle& bundle, const Generator* generator, const LabeledSet& data) {
  if (data.labels.size() != data.size() || data.size() == 0)
    throw std::invalid_argument("evaluate: needs a labeled, nonempty manifest");
  EvalReport r;
  r.scores = score_images(bundle, generator, data.images);
  r.auc = roc_auc(r.scores, data.labels);
  r.roc = roc_curve(r.scores, data.labels);
  r.eer_threshold = eer_threshold(r.scores, data.labels);
  r.hter = error_rates(r.scores, data.labels, r.eer_threshold).hter;
  r.hter_at_half = error_rates(r.scores, data.labels, 0.5).hter;

  std::map<std::string, std::pair<std::vector<double>, std::vector<int>>> groups;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& [s, l] = groups[data.domains.at(i)];
    s.push_back(r.scores[i]);
    l.push_back(data.labels[i]);
  }
  for (const auto& [domain, sl] : groups) {
    const auto& [s, l] = sl;
    const auto pos = std::count(l.begin(), l.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(l.size())) continue;
    r.per_domain[domain] = {roc_auc(s, l), error_rates(s, l, eer_threshold(s, l)).hter};
  }
  return r;
}

std::vector<BnCurvePoint> bn_discrepancy(ModelBundle& bundle, const std::vector<Tensor>& images,
                                         const Generator* generator) {
  if (images.empty()) throw std::invalid_argument("bn_discrepancy: no images");
  const auto layers = bundle.bn_layers();
  // Per layer, per channel: count, mean and sum of squared deviations, merged chunk by chunk.
  struct Acc {
    double n = 0.0;
    std::vector<double> mean, m2;
  };
  std::vector<Acc> acc(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    acc[l].mean.assign(layers[l]->channels(), 0.0);
    acc[l].m2.assign(layers[l]->channels(), 0.0);
  }
  for_each_chunk(bundle, generator, images, [&](const SourceOutput& out, std::size_t, std::size_t) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const Tensor& a = out.pre_bn[l];
      const std::size_t b = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
      const auto d = a.data();
      const double nb = static_cast<double>(b * hw);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t p = 0; p < hw; ++p) s += d[(i * c + ch) * hw + p];
        const double mb = s / nb;
        double m2b = 0.0;
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t p = 0; p < hw; ++p) {
            const double dv = d[(i * c + ch) * hw + p] - mb;
            m2b += dv * dv;
          }
        Acc& A = acc[l];
        const double n = A.n + nb;
        const double delta = mb - A.mean[ch];
        A.mean[ch] += delta * nb / n;
        A.m2[ch] += m2b + delta * delta * A.n * nb / n;
      }
      acc[l].n += nb;
    }
  });
  std::vector<BnCurvePoint> curve;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const BNLayerState& bn = *layers[l];
    const std::size_t c = bn.channels();
    double dm = 0.0, dv = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      dm += std::abs(acc[l].mean[ch] - bn.running_mean[ch]);
      dv += std::abs(acc[l].m2[ch] / acc[l].n - bn.running_var[ch]);
    }
    curve.push_back({layer_name(bn), dm / static_cast<double>(c), dv / static_cast<double>(c)});
  }
  return curve;
}

std::vector<double> block_features(ModelBundle& bundle, const std::vector<Tensor>& images,
                                   const Generator* generator, std::size_t block, std::size_t& width) {
  if (block >= 3) throw std::invalid_argument("block index must be 0, 1 or 2");
  std::vector<double> rows;
  width = 0;
  for_each_chunk(bundle, generator, images, [&](const SourceOutput& out, std::size_t, std::size_t) {
    const Tensor pooled = global_avg_pool(out.block_features[block]);
    width = pooled.dim(1);
    const auto d = pooled.data();
    rows.insert(rows.end(), d.begin(), d.end());
  });
  return rows;
}

std::vector<MmdCurvePoint> mmd_curve(ModelBundle& bundle, const std::vector<Tensor>& reference,
                                     const std::vector<Tensor>& other, const Generator* generator,
                                     MmdKernel kernel, MmdEstimator estimator) {
  std::vector<MmdCurvePoint> curve;
  for (std::size_t b = 0; b < 3; ++b) {
    std::size_t wa = 0, wb = 0;
    const auto fa = block_features(bundle, reference, nullptr, b, wa);
    const auto fb = block_features(bundle, other, generator, b, wb);
    // The bandwidth depends on the reference alone, so curves against one reference share a kernel.
    const double bw = median_sq_distance(fa, reference.size(), wa);
    curve.push_back({b + 1, mmd(fa, reference.size(), fb, other.size(), wa, kernel, estimator, bw)});
  }
  return curve;
}

void export_features_csv(ModelBundle& bundle, const std::vector<Tensor>& images,
                         const std::vector<std::string>& domains, const std::vector<int>* labels,
                         const Generator* generator, const std::string& layer, const std::filesystem::path& path) {
  std::vector<double> rows;
  std::size_t width = 0;
  if (layer == "logits") {
    for_each_chunk(bundle, generator, images, [&](const SourceOutput& out, std::size_t, std::size_t) {
      const auto d = out.logits.data();
      rows.insert(rows.end(), d.begin(), d.end());
    });
    width = kNumClasses;
  } else if (layer == "block1" || layer == "block2" || layer == "block3") {
    rows = block_features(bundle, images, generator, static_cast<std::size_t>(layer.back() - '1'), width);
  } else {
    throw std::invalid_argument("unknown feature layer '" + layer + "' (block1, block2, block3, logits)");
  }
  auto f = open_csv(path);
  f << "index,domain,label";
  for (std::size_t k = 0; k < width; ++k) f << ",f" << k;
  f << '\n';
  for (std::size_t i = 0; i < images.size(); ++i) {
    f << i << ',' << domains.at(i) << ',';
    if (labels) f << labels->at(i);
    for (std::size_t k = 0; k < width; ++k) f << ',' << format_float(rows[i * width + k]);
    f << '\n';
  }
}

// --- ablations -------------------------------------------------------------------

TrainConfig ablation_config(const TrainConfig& base, const std::string& name) {
  TrainConfig c = base;
  if (name == "nsc") {
    c.use_dsc = false;
    c.eta = 0.0;
  } else if (name == "nsc_dsc") {
    c.eta = 0.0;
  } else if (name != "full" && name != "baseline") {
    throw std::invalid_argument("unknown ablation config '" + name + "'");
  }
  return c;
}

std::vector<AblationRow> ablation_run(const TrainConfig& config, ModelBundle& bundle, const UnlabeledSet& target_train,
                                      const LabeledSet& target_test, const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (const std::string& name : ablation_configs()) {
      EvalReport r;
      if (name == "baseline") {
        r = evaluate(bundle, nullptr, target_test);
      } else {
        TrainConfig c = ablation_config(config, name);
        c.seed = seed;
        const AdaptResult a = adapt_generator(c, bundle, target_train);
        r = evaluate(bundle, &a.generator, target_test);
      }
      rows.push_back({name, seed, r.hter, r.auc});
    }
  }
  return rows;
}

// --- CSV -----------------------------------------------------------------------

void write_source_log_csv(const std::vector<SourceLogRow>& rows, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "epoch,step,ce,depth,total\n";
  for (const auto& r : rows)
    f << r.epoch << ',' << r.step << ',' << format_float(r.ce) << ',' << format_float(r.depth) << ','
      << format_float(r.total) << '\n';
}

void write_adapt_log_csv(const std::vector<AdaptLogRow>& rows, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "step,stat,per,ent1,ent2,ph,total\n";
  for (const auto& r : rows)
    f << r.step << ',' << format_float(r.loss.stat) << ',' << format_float(r.loss.per) << ','
      << format_float(r.loss.ent1) << ',' << format_float(r.loss.ent2) << ',' << format_float(r.loss.ph) << ','
      << format_float(r.loss.total) << '\n';
}

void write_eval_csv(const EvalReport& report, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "metric,value\n";
  f << "auc," << format_float(report.auc) << '\n';
  f << "hter," << format_float(report.hter) << '\n';
  f << "eer_threshold," << format_float(report.eer_threshold) << '\n';
  f << "hter_at_0.5," << format_float(report.hter_at_half) << '\n';
  for (const auto& [domain, m] : report.per_domain) {
    f << "auc[" << domain << "]," << format_float(m.auc) << '\n';
    f << "hter[" << domain << "]," << format_float(m.hter) << '\n';
  }
}

void write_roc_csv(const std::vector<RocPoint>& roc, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "far,tpr\n";
  for (const auto& p : roc) f << format_float(p.far) << ',' << format_float(p.tpr) << '\n';
}

void write_bn_curve_csv(const std::vector<BnCurvePoint>& rows, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "layer,d_mean,d_var\n";
  for (const auto& r : rows) f << r.layer << ',' << format_float(r.d_mean) << ',' << format_float(r.d_var) << '\n';
}

void write_mmd_curve_csv(const std::vector<MmdCurvePoint>& rows, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "block,mmd\n";
  for (const auto& r : rows) f << r.block << ',' << format_float(r.mmd) << '\n';
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  auto f = open_csv(path);
  f << "config,seed,HTER,AUC\n";
  for (const auto& r : rows)
    f << r.config << ',' << r.seed << ',' << format_float(r.hter) << ',' << format_float(r.auc) << '\n';
}

}  // namespace gda
