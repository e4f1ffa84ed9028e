#include "gda/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gda/checkpoint.hpp"
#include "gda/grad_check.hpp"
#include "gda/netpbm.hpp"
#include "gda/spectrum.hpp"

namespace gda {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- configuration --------------------------------------------------------------

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : obj.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read_key(const json& obj, const char* key, T& into, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

DomainSpec parse_domain(const json& j, std::size_t index) {
  const std::string where = "domains[" + std::to_string(index) + "]";
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  reject_unknown(j, {"name", "gain", "brightness", "blur_radius", "noise_std", "count", "test_fraction", "seed"}, where);
  DomainSpec d;
  read_key(j, "name", d.name, where);
  read_key(j, "gain", d.style.gain, where);
  read_key(j, "brightness", d.style.brightness, where);
  read_key(j, "blur_radius", d.style.blur_radius, where);
  read_key(j, "noise_std", d.style.noise_std, where);
  read_key(j, "count", d.count, where);
  read_key(j, "test_fraction", d.test_fraction, where);
  read_key(j, "seed", d.seed, where);
  if (d.name.empty()) throw ConfigError(where + " needs a name");
  return d;
}

json domain_to_json(const DomainSpec& d) {
  return {{"name", d.name},
          {"gain", d.style.gain},
          {"brightness", d.style.brightness},
          {"blur_radius", d.style.blur_radius},
          {"noise_std", d.style.noise_std},
          {"count", d.count},
          {"test_fraction", d.test_fraction},
          {"seed", d.seed}};
}

void validate_domain(const DomainSpec& d) {
  if (d.name.find_first_of("/\\ ") != std::string::npos) throw ConfigError("domain name '" + d.name + "' is not a plain word");
  if (d.count < 4 || d.count % 2 != 0) throw ConfigError("domain '" + d.name + "': count must be even and at least 4");
  if (!(d.test_fraction > 0.0 && d.test_fraction < 1.0))
    throw ConfigError("domain '" + d.name + "': test_fraction must lie in (0,1)");
  if (d.style.blur_radius < 0.0 || d.style.noise_std < 0.0)
    throw ConfigError("domain '" + d.name + "': blur and noise must be nonnegative");
}

void validate_config(const CliConfig& c) {
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  std::vector<std::string> names;
  for (const DomainSpec& d : c.domains) {
    validate_domain(d);
    names.push_back(d.name);
  }
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) throw ConfigError("duplicate domain names");
  if (c.ablation_seeds.empty()) throw ConfigError("ablation_seeds must not be empty");
}

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// --- output helpers ---------------------------------------------------------------

void emit(const json& summary) { std::cout << summary.dump() << std::endl; }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path.string());
}

void persist_config(const CliConfig& c, const fs::path& dir) { write_text(dir / "config.json", config_to_json(c)); }

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is required");
  if (!fs::exists(path)) throw ConfigError(what + " '" + path + "' does not exist");
}

DatasetManifest split_of(const std::string& data, const std::string& which) {
  const DatasetManifest m = load_manifest(data);
  if (which == "all") return m;
  if (which != "train" && which != "test") throw ConfigError("split must be train, test or all");
  return m.split(which);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "' in --seeds");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds is empty");
  return seeds;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// --- command state ------------------------------------------------------------------

struct TrainFlags {
  std::optional<std::size_t> batch_size, epochs, steps;
  std::optional<double> lr, source_lr, eta, lambda_ent, lambda_ph;

  void add_to(CLI::App* app, bool source, bool adapt) {
    app->add_option("--batch-size", batch_size, "Mini-batch size");
    if (source) {
      app->add_option("--epochs", epochs, "Stage-1 epochs");
      app->add_option("--source-lr", source_lr, "Stage-1 learning rate");
    }
    if (adapt) {
      app->add_option("--steps", steps, "Stage-2 steps");
      app->add_option("--lr", lr, "Generator learning rate");
      app->add_option("--eta", eta, "SpecMix strength");
      app->add_option("--lambda-ent", lambda_ent, "Entropy weight");
      app->add_option("--lambda-ph", lambda_ph, "Phase weight");
    }
  }

  void apply(TrainConfig& t) const {
    if (batch_size) t.batch_size = *batch_size;
    if (epochs) t.source_epochs = *epochs;
    if (steps) t.adapt_steps = *steps;
    if (lr) t.lr = *lr;
    if (source_lr) t.source_lr = *source_lr;
    if (eta) t.eta = *eta;
    if (lambda_ent) t.weights.lambda_ent = *lambda_ent;
    if (lambda_ph) t.weights.lambda_ph = *lambda_ph;
  }
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;

  void add_to(CLI::App* app, bool out_required) {
    app->add_option("--seed", seed, "Random seed");
    app->add_option("--config", config, "JSON configuration file");
    auto* o = app->add_option("--out", out, "Output location");
    if (out_required) o->required();
  }

  CliConfig load(const TrainFlags* flags) const {
    CliConfig c;
    if (!config.empty()) c = load_config(config);
    if (seed) c.train.seed = *seed;
    if (flags) flags->apply(c.train);
    validate_config(c);
    return c;
  }
};

ModelBundle load_bundle(const std::string& path) {
  require_file(path, "--model");
  return load_checkpoint(path);
}

// --- commands -----------------------------------------------------------------------

struct GenDataCmd {
  Common common;
  std::string domain;
  std::size_t count = 200;
  std::vector<double> gain{1.0, 1.0, 1.0};
  double brightness = 0.0, blur = 0.0, noise = 0.0, test_fraction = 0.25;

  void add(CLI::App& parent) {
    auto* app = parent.add_subcommand("gen-data", "Render synthetic domains to disk");
    common.add_to(app, true);
    app->add_option("--domain", domain, "Name of a single domain described by the flags below");
    app->add_option("--count", count, "Samples per domain, half live");
    app->add_option("--gain", gain, "Per-channel gain")->expected(3)->delimiter(',');
    app->add_option("--brightness", brightness, "Additive brightness");
    app->add_option("--blur", blur, "Gaussian blur sigma");
    app->add_option("--noise", noise, "Noise standard deviation");
    app->add_option("--test-fraction", test_fraction, "Fraction of each class held out");
  }

  int run() {
    CliConfig c = common.load(nullptr);
    if (!domain.empty()) {
      DomainSpec d;
      d.name = domain;
      d.style.gain = {gain[0], gain[1], gain[2]};
      d.style.brightness = brightness;
      d.style.blur_radius = blur;
      d.style.noise_std = noise;
      d.count = count;
      d.test_fraction = test_fraction;
      d.seed = c.train.seed;
      c.domains = {d};
    }
    if (c.domains.empty()) throw ConfigError("gen-data needs --domain or a config with domains");
    validate_config(c);

    const fs::path out = common.out;
    ensure_dir(out);
    persist_config(c, out);
    json rendered = json::array();
    for (const DomainSpec& d : c.domains) {
      const DatasetManifest m = generate_domain_dataset(d, out / d.name);
      rendered.push_back({{"name", d.name}, {"path", (out / d.name).string()}, {"records", m.records.size()}});
    }
    emit({{"command", "gen-data"}, {"domains", rendered}});
    return kExitOk;
  }
};

struct TrainSourceCmd {
  Common common;
  TrainFlags flags;
  std::vector<std::string> data;

  void add(CLI::App& parent) {
    auto* app = parent.add_subcommand("train-source", "Stage 1: train F, H and R on labeled source domains");
    common.add_to(app, true);
    flags.add_to(app, true, false);
    app->add_option("--data", data, "Source dataset root (repeatable)");
  }

  int run() {
    CliConfig c = common.load(&flags);
    if (!data.empty()) c.source_data = data;
    if (c.source_data.empty()) throw ConfigError("train-source needs --data or source_data in the config");
    std::vector<LabeledSet> train, test;
    for (const std::string& d : c.source_data) {
      require_file(d, "--data");
      train.push_back(load_labeled(split_of(d, "train")));
      test.push_back(load_labeled(split_of(d, "test")));
    }

    const fs::path out = common.out;
    ensure_dir(out);
    persist_config(c, out);
    SourceTrainResult r = train_source(c.train, concat_sets(train));
    save_checkpoint(r.bundle, out / "source.gdac");
    write_source_log_csv(r.log, out / "source_log.csv");
    const EvalReport report = evaluate(r.bundle, nullptr, concat_sets(test));
    write_eval_csv(report, out / "source_eval.csv");
    emit({{"command", "train-source"},
          {"checkpoint", (out / "source.gdac").string()},
          {"steps", r.log.size()},
          {"final_loss", r.log.empty() ? 0.0 : r.log.back().total},
          {"source_test_auc", report.auc}});
    return kExitOk;
  }
};

struct AdaptCmd {
  Common common;
  TrainFlags flags;
  std::string model, data;

  void add(CLI::App& parent) {
    auto* app = parent.add_subcommand("adapt", "Stage 2: train the generator on unlabeled target images");
    common.add_to(app, true);
    flags.add_to(app, false, true);
    app->add_option("--model", model, "Source checkpoint")->required();
    app->add_option("--data", data, "Target dataset root; its train split is used without labels");
  }

  int run() {
    CliConfig c = common.load(&flags);
    if (!data.empty()) c.target_data = data;
    require_file(c.target_data, "--data");
    const UnlabeledSet target = load_unlabeled(split_of(c.target_data, "train").without_labels());
    ModelBundle bundle = load_bundle(model);

    const fs::path out = common.out;
    ensure_dir(out);
    persist_config(c, out);
    AdaptResult r = adapt_generator(c.train, bundle, target);
    save_generator(r.generator, out / "generator.gdac");
    bundle.G = r.generator;
    save_checkpoint(bundle, out / "adapted.gdac");
    write_adapt_log_csv(r.log, out / "adapt_log.csv");
    emit({{"command", "adapt"},
          {"generator", (out / "generator.gdac").string()},
          {"checkpoint", (out / "adapted.gdac").string()},
          {"steps", r.log.size()},
          {"first_stat", r.log.front().loss.stat},
          {"final_stat", r.log.back().loss.stat}});
    return kExitOk;
  }
};

struct EvalCmd {
  Common common;
  std::string model, generator, data, report, roc, split = "test";
  bool no_generator = false;

  void add(CLI::App& parent) {
    auto* app = parent.add_subcommand("eval", "Score a labeled dataset and report HTER and AUC");
    common.add_to(app, false);
    app->add_option("--model", model, "Checkpoint")->required();
    app->add_option("--generator", generator, "Generator checkpoint; overrides one stored in --model");
    app->add_flag("--no-generator", no_generator, "Ignore any generator stored in --model");
    app->add_option("--data", data, "Dataset root")->required();
    app->add_option("--split", split, "train, test or all");
    app->add_option("--report", report, "Metric CSV path (default <out>/report.csv)");
    app->add_option("--roc", roc, "ROC CSV path (default <out>/roc.csv)");
  }

  int run() {
    const CliConfig c = common.load(nullptr);
    if (report.empty() && common.out.empty()) throw ConfigError("eval needs --report or --out");
    require_file(data, "--data");
    if (!generator.empty()) require_file(generator, "--generator");
    if (no_generator && !generator.empty()) throw ConfigError("--generator and --no-generator are exclusive");
    const LabeledSet set = load_labeled(split_of(data, split));
    ModelBundle bundle = load_bundle(model);
    std::optional<Generator> g = no_generator ? std::nullopt : bundle.G;
    if (!generator.empty()) g = load_generator(generator);

    fs::path report_path = report, roc_path = roc;
    if (!common.out.empty()) {
      ensure_dir(common.out);
      persist_config(c, common.out);
      if (report_path.empty()) report_path = fs::path(common.out) / "report.csv";
      if (roc_path.empty()) roc_path = fs::path(common.out) / "roc.csv";
    }
    const EvalReport r = evaluate(bundle, g ? &*g : nullptr, set);
    write_eval_csv(r, report_path);
    if (!roc_path.empty()) write_roc_csv(r.roc, roc_path);
    emit({{"command", "eval"},
          {"report", report_path.string()},
          {"auc", r.auc},
          {"hter", r.hter},
          {"eer_threshold", r.eer_threshold},
          {"stylized", g.has_value()}});
    return kExitOk;
  }
};

struct SpecMixCmd {
  Common common;
  std::string input, ref;
  double eta = 0.1;
  std::optional<double> lambda;

  void add(CLI::App& parent) {
    auto* app = parent.add_subcommand("specmix", "Mix the amplitude spectrum of --input toward --ref");
    common.add_to(app, true);
    app->add_option("--input", input, "PPM image")->required();
    app->add_option("--ref", ref, "PPM reference image")->required();
    app->add_option("--eta", eta, "lambda ~ U(0, eta)");
    app->add_option("--lambda", lambda, "Fixed lambda instead of a draw");
  }

  int run() {
    const CliConfig c = common.load(nullptr);
    require_file(input, "--input");
    require_file(ref, "--ref");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("--eta must lie in [0,1]");
    if (lambda && !(*lambda >= 0.0 && *lambda <= 1.0)) throw ConfigError("--lambda must lie in [0,1]");
    const Tensor x = ppm_read(input);
    const Tensor r = ppm_read(ref);
    if (x.shape() != r.shape()) throw ConfigError("--input and --ref differ in size");
    SplitMix64 rng(c.train.seed);
    const double l = lambda ? *lambda : sample_lambda({eta, c.train.seed}, rng);
    const fs::path out = common.out;
    if (out.has_parent_path()) ensure_dir(out.parent_path());
    ppm_write(out, specmix(x, r, l));
    emit({{"command", "specmix"}, {"out", out.string()}, {"lambda", l}});
    return kExitOk;
  }
};

struct AnalyzeCmd {
  Common common;
  std::string model, generator, source, target, split = "test", kernel = "rbf", features;

  void add(CLI::App& parent) {
    auto* app = parent.add_subcommand("analyze-stats", "BN discrepancy and MMD curves of raw and stylized target data");
    common.add_to(app, true);
    app->add_option("--model", model, "Checkpoint")->required();
    app->add_option("--generator", generator, "Generator checkpoint; defaults to the one in --model");
    app->add_option("--source", source, "Source dataset root, the MMD reference")->required();
    app->add_option("--target", target, "Target dataset root")->required();
    app->add_option("--split", split, "train, test or all");
    app->add_option("--kernel", kernel, "rbf or linear");
    app->add_option("--features", features, "Also export features of this layer: block1, block2, block3, logits");
  }

  int run() {
    const CliConfig c = common.load(nullptr);
    require_file(source, "--source");
    require_file(target, "--target");
    if (!generator.empty()) require_file(generator, "--generator");
    if (kernel != "rbf" && kernel != "linear") throw ConfigError("--kernel must be rbf or linear");
    if (!features.empty() && features != "block1" && features != "block2" && features != "block3" &&
        features != "logits")
      throw ConfigError("--features must be block1, block2, block3 or logits");
    const LabeledSet src = load_labeled(split_of(source, split));
    const LabeledSet tgt = load_labeled(split_of(target, split));
    ModelBundle bundle = load_bundle(model);
    std::optional<Generator> g = bundle.G;
    if (!generator.empty()) g = load_generator(generator);
    const MmdKernel k = kernel == "rbf" ? MmdKernel::Rbf : MmdKernel::Linear;

    const fs::path out = common.out;
    ensure_dir(out);
    persist_config(c, out);
    json summary{{"command", "analyze-stats"}};
    auto record = [&](const std::string& tag, const Generator* gen) {
      const auto bn = bn_discrepancy(bundle, tgt.images, gen);
      const auto mmd = mmd_curve(bundle, src.images, tgt.images, gen, k);
      write_bn_curve_csv(bn, out / ("bn_" + tag + ".csv"));
      write_mmd_curve_csv(mmd, out / ("mmd_" + tag + ".csv"));
      std::vector<double> dm, mm;
      for (const auto& p : bn) dm.push_back(p.d_mean);
      for (const auto& p : mmd) mm.push_back(p.mmd);
      summary[tag] = {{"mean_bn_d_mean", mean_of(dm)}, {"mmd_block1", mm.empty() ? 0.0 : mm.front()}};
      if (!features.empty())
        export_features_csv(bundle, tgt.images, tgt.domains, &tgt.labels, gen, features,
                            out / ("features_" + tag + "_" + features + ".csv"));
    };
    record("raw", nullptr);
    if (g) record("stylized", &*g);
    emit(summary);
    return kExitOk;
  }
};

struct AblateCmd {
  Common common;
  TrainFlags flags;
  std::string model, data, seeds;

  void add(CLI::App& parent) {
    auto* app = parent.add_subcommand("ablate", "Baseline, +NSC, +NSC+DSC and full adaptation over several seeds");
    common.add_to(app, true);
    flags.add_to(app, false, true);
    app->add_option("--model", model, "Source checkpoint")->required();
    app->add_option("--data", data, "Target dataset root");
    app->add_option("--seeds", seeds, "Comma-separated seeds");
  }

  int run() {
    CliConfig c = common.load(&flags);
    if (!data.empty()) c.target_data = data;
    if (!seeds.empty()) c.ablation_seeds = parse_seed_list(seeds);
    require_file(c.target_data, "--data");
    const UnlabeledSet train = load_unlabeled(split_of(c.target_data, "train").without_labels());
    const LabeledSet test = load_labeled(split_of(c.target_data, "test"));
    ModelBundle bundle = load_bundle(model);

    const fs::path out = common.out;
    ensure_dir(out);
    persist_config(c, out);
    const auto rows = ablation_run(c.train, bundle, train, test, c.ablation_seeds);
    write_ablation_csv(rows, out / "ablation.csv");
    json means = json::object();
    for (const std::string& name : ablation_configs()) {
      std::vector<double> auc, hter;
      for (const AblationRow& r : rows)
        if (r.config == name) {
          auc.push_back(r.auc);
          hter.push_back(r.hter);
        }
      means[name] = {{"auc", mean_of(auc)}, {"hter", mean_of(hter)}};
    }
    emit({{"command", "ablate"}, {"table", (out / "ablation.csv").string()}, {"mean", means}});
    return kExitOk;
  }
};

struct GradCheckCmd {
  Common common;
  std::size_t trials = 20;
  double tolerance = 1e-4;
  std::string flip;

  void add(CLI::App& parent) {
    auto* app = parent.add_subcommand("grad-check", "Compare every backward rule with central differences");
    common.add_to(app, false);
    app->add_option("--trials", trials, "Random inputs per op");
    app->add_option("--tolerance", tolerance, "Largest accepted relative error");
    app->add_option("--inject-sign-flip", flip, "Negate the backward rule of this op");
  }

  int run() {
    const CliConfig c = common.load(nullptr);
    GradCheckOptions o;
    o.seed = c.train.seed;
    o.trials = trials;
    o.tolerance = tolerance;
    if (!flip.empty()) {
      const auto ops = grad_check_ops();
      if (std::find(ops.begin(), ops.end(), flip) == ops.end()) throw ConfigError("unknown op '" + flip + "'");
      o.sign_flip = flip;
    }
    if (trials == 0) throw ConfigError("--trials must be positive");

    const auto rows = run_grad_check(o);
    std::ostringstream table;
    table << "op,trials,max_rel_error,passed\n";
    std::size_t failed = 0;
    for (const GradCheckRow& r : rows) {
      table << r.op << ',' << r.trials << ',' << format_float(r.max_rel_error) << ',' << (r.passed ? 1 : 0) << '\n';
      if (!r.passed) ++failed;
    }
    std::cerr << table.str();
    if (!common.out.empty()) {
      ensure_dir(common.out);
      write_text(fs::path(common.out) / "grad_check.csv", table.str());
    }
    emit({{"command", "grad-check"}, {"ops", rows.size()}, {"failed", failed}});
    return failed == 0 ? kExitOk : kExitRuntime;
  }
};

}  // namespace

CliConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ConfigError("malformed JSON at line " + std::to_string(line) + ", column " + std::to_string(col));
  }
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  const std::string where = "configuration";
  reject_unknown(j,
                 {"batch_size", "source_epochs", "adapt_steps", "lr", "source_lr", "eta", "lambda_ent", "lambda_ph",
                  "bn_alpha", "seed", "use_nsc", "use_dsc", "use_entropy", "domains", "source_data", "target_data",
                  "ablation_seeds"},
                 where);
  CliConfig c;
  TrainConfig& t = c.train;
  read_key(j, "batch_size", t.batch_size, where);
  read_key(j, "source_epochs", t.source_epochs, where);
  read_key(j, "adapt_steps", t.adapt_steps, where);
  read_key(j, "lr", t.lr, where);
  read_key(j, "source_lr", t.source_lr, where);
  read_key(j, "eta", t.eta, where);
  read_key(j, "lambda_ent", t.weights.lambda_ent, where);
  read_key(j, "lambda_ph", t.weights.lambda_ph, where);
  read_key(j, "bn_alpha", t.bn_alpha, where);
  read_key(j, "seed", t.seed, where);
  read_key(j, "use_nsc", t.use_nsc, where);
  read_key(j, "use_dsc", t.use_dsc, where);
  read_key(j, "use_entropy", t.use_entropy, where);
  read_key(j, "source_data", c.source_data, where);
  read_key(j, "target_data", c.target_data, where);
  read_key(j, "ablation_seeds", c.ablation_seeds, where);
  if (j.contains("domains")) {
    if (!j["domains"].is_array()) throw ConfigError("key 'domains' must be an array");
    for (std::size_t i = 0; i < j["domains"].size(); ++i) c.domains.push_back(parse_domain(j["domains"][i], i));
  }
  validate_config(c);
  return c;
}

CliConfig load_config(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const CliConfig& c) {
  const TrainConfig& t = c.train;
  json j{{"batch_size", t.batch_size},
         {"source_epochs", t.source_epochs},
         {"adapt_steps", t.adapt_steps},
         {"lr", t.lr},
         {"source_lr", t.source_lr},
         {"eta", t.eta},
         {"lambda_ent", t.weights.lambda_ent},
         {"lambda_ph", t.weights.lambda_ph},
         {"bn_alpha", t.bn_alpha},
         {"seed", t.seed},
         {"use_nsc", t.use_nsc},
         {"use_dsc", t.use_dsc},
         {"use_entropy", t.use_entropy},
         {"source_data", c.source_data},
         {"target_data", c.target_data},
         {"ablation_seeds", c.ablation_seeds}};
  json domains = json::array();
  for (const DomainSpec& d : c.domains) domains.push_back(domain_to_json(d));
  j["domains"] = domains;
  return j.dump(2) + "\n";
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Generative domain adaptation for face anti-spoofing on synthetic data", "gda"};
  app.require_subcommand(1, 1);
  GenDataCmd gen;
  TrainSourceCmd train;
  AdaptCmd adapt;
  EvalCmd eval;
  SpecMixCmd mix;
  AnalyzeCmd analyze;
  AblateCmd ablate;
  GradCheckCmd grad;
  gen.add(app);
  train.add(app);
  adapt.add(app);
  eval.add(app);
  mix.add(app);
  analyze.add(app);
  ablate.add(app);
  grad.add(app);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cerr << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "gen-data") return gen.run();
    if (name == "train-source") return train.run();
    if (name == "adapt") return adapt.run();
    if (name == "eval") return eval.run();
    if (name == "specmix") return mix.run();
    if (name == "analyze-stats") return analyze.run();
    if (name == "ablate") return ablate.run();
    return grad.run();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const NetpbmError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int dispatch(int argc, const char* const* argv) {
  return dispatch(std::vector<std::string>(argv, argv + argc));
}

}  // namespace gda
