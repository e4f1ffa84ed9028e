#include "gda/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>
#include <thread>

#include "json.hpp"

#include "gda/netpbm.hpp"
#include "gda/spectrum.hpp"

namespace gda {

namespace {

constexpr std::size_t kSize = 32;
constexpr std::size_t kCell = kSize / 8;

struct Content {
  std::array<double, 3> bg;
  double grad_x, grad_y;
  double cx, cy, rx, ry;
  std::array<double, 3> skin;
  double amp, k1x, k1y, ph1, k2x, k2y, ph2;
};

Content draw_content(SplitMix64& rng) {
  Content c{};
  for (double& b : c.bg) b = rng.uniform(0.25, 0.45);
  c.grad_x = rng.uniform(-0.1, 0.1);
  c.grad_y = rng.uniform(-0.1, 0.1);
  c.cx = 16.0 + rng.uniform(-3.0, 3.0);
  c.cy = 16.0 + rng.uniform(-3.0, 3.0);
  c.rx = rng.uniform(8.0, 11.0);
  c.ry = rng.uniform(10.0, 13.0);
  const std::array<double, 3> skin{0.72, 0.58, 0.48};
  for (std::size_t i = 0; i < 3; ++i) c.skin[i] = skin[i] + rng.uniform(-0.07, 0.07);
  // Two fine gratings whose beat gives the moiré look.
  c.amp = rng.uniform(0.08, 0.12);
  const double theta1 = rng.uniform(0.0, std::numbers::pi);
  const double period1 = rng.uniform(2.2, 3.0);
  const double theta2 = theta1 + rng.uniform(0.3, 0.8);
  const double period2 = rng.uniform(2.5, 3.5);
  c.k1x = 2.0 * std::numbers::pi * std::cos(theta1) / period1;
  c.k1y = 2.0 * std::numbers::pi * std::sin(theta1) / period1;
  c.k2x = 2.0 * std::numbers::pi * std::cos(theta2) / period2;
  c.k2y = 2.0 * std::numbers::pi * std::sin(theta2) / period2;
  c.ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  c.ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return c;
}

double ellipse_radius(const Content& c, double x, double y) {
  const double dx = (x - c.cx) / c.rx;
  const double dy = (y - c.cy) / c.ry;
  return std::sqrt(dx * dx + dy * dy);
}

std::vector<double> gaussian_kernel(double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= s;
  return k;
}

// Separable Gaussian blur with clamp-to-edge.
void blur_plane(std::vector<double>& plane, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int n = static_cast<int>(kSize);
  std::vector<double> tmp(plane.size());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * plane[y * n + std::clamp(x + i, 0, n - 1)];
      tmp[y * n + x] = acc;
    }
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[std::clamp(y + i, 0, n - 1) * n + x];
      plane[y * n + x] = acc;
    }
}

nlohmann::json record_json(const SampleRecord& r) {
  nlohmann::json j{{"image", r.image}, {"domain", r.domain}, {"split", r.split}};
  if (r.depth) j["depth"] = *r.depth;
  if (r.label) j["label"] = *r.label;
  return j;
}

SampleRecord record_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"image", "depth", "label", "domain", "split"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ManifestError("unknown manifest record key '" + k + "'");
  SampleRecord r;
  r.image = j.at("image").get<std::string>();
  r.domain = j.at("domain").get<std::string>();
  r.split = j.at("split").get<std::string>();
  if (j.contains("depth")) r.depth = j.at("depth").get<std::string>();
  if (j.contains("label")) r.label = j.at("label").get<int>();
  return r;
}

std::string sample_stem(const std::string& domain, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return domain + "_" + buf;
}

}  // namespace

RenderedSample render_sample(int label, const DomainStyle& style, std::uint64_t seed) {
  if (label != kLive && label != kSpoof) throw std::invalid_argument("render_sample: label must be 0 or 1");
  SplitMix64 rng(seed);
  const Content c = draw_content(rng);

  std::vector<double> img(3 * kSize * kSize);
  for (std::size_t y = 0; y < kSize; ++y)
    for (std::size_t x = 0; x < kSize; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double d = ellipse_radius(c, px, py);
      const double m = 1.0 / (1.0 + std::exp((d - 1.0) * 10.0));
      const double shade = 0.8 + 0.2 * std::max(0.0, 1.0 - d * d);
      double grating = 0.0;
      if (label == kSpoof)
        grating = c.amp * 0.5 * (std::sin(c.k1x * px + c.k1y * py + c.ph1) + std::sin(c.k2x * px + c.k2y * py + c.ph2));
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double base = c.bg[ch] + c.grad_x * (x / 31.0 - 0.5) + c.grad_y * (y / 31.0 - 0.5);
        img[(ch * kSize + y) * kSize + x] = (1.0 - m) * base + m * c.skin[ch] * shade + grating;
      }
    }

  SplitMix64 noise(mix_seed(seed, 0x5EEDu));
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::vector<double> plane(img.begin() + ch * kSize * kSize, img.begin() + (ch + 1) * kSize * kSize);
    if (style.blur_radius > 0.0) blur_plane(plane, style.blur_radius);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      double v = style.gain[ch] * plane[i] + style.brightness;
      if (style.noise_std > 0.0) v += style.noise_std * noise.gaussian();
      img[ch * kSize * kSize + i] = std::clamp(v, 0.0, 1.0);
    }
  }

  std::vector<double> depth(64, 0.0);
  if (label == kLive) {
    double peak = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) {
        const double d = ellipse_radius(c, j * kCell + kCell / 2.0, i * kCell + kCell / 2.0);
        depth[i * 8 + j] = std::max(0.0, 1.0 - d * d);
        peak = std::max(peak, depth[i * 8 + j]);
      }
    if (peak > 0.0)
      for (double& v : depth) v /= peak;
  }
  return {Tensor::from_values({3, kSize, kSize}, std::move(img)), Tensor::from_values({1, 8, 8}, std::move(depth))};
}

double high_frequency_energy(const Tensor& image, double radius) {
  const Spectrum s = dft2d(image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  const auto re = s.re.data();
  const auto im = s.im.data();
  double e = 0.0;
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        const double fu = u <= h / 2 ? static_cast<double>(u) : static_cast<double>(u) - static_cast<double>(h);
        const double fv = v <= w / 2 ? static_cast<double>(v) : static_cast<double>(v) - static_cast<double>(w);
        if (std::hypot(fu, fv) <= radius) continue;
        const std::size_t i = (c * h + u) * w + v;
        e += re[i] * re[i] + im[i] * im[i];
      }
  return e;
}

double style_mean_separation(const DomainStyle& a, const DomainStyle& b) {
  std::array<double, 3> diff{};
  constexpr std::size_t kRefs = 32;
  for (std::size_t i = 0; i < kRefs; ++i) {
    const int label = i % 2 == 0 ? kLive : kSpoof;
    const Tensor xa = render_sample(label, a, mix_seed(0xC0FFEE, i)).image;
    const Tensor xb = render_sample(label, b, mix_seed(0xC0FFEE, i)).image;
    const std::size_t plane = kSize * kSize;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) diff[c] += xa[c * plane + p] - xb[c * plane + p];
  }
  double best = 0.0;
  for (double d : diff) best = std::max(best, std::abs(d) / (kRefs * kSize * kSize));
  return best;
}

// --- manifest -------------------------------------------------------------------

DatasetManifest DatasetManifest::without_labels() const {
  DatasetManifest m = *this;
  for (auto& r : m.records) {
    r.label.reset();
    r.depth.reset();
  }
  return m;
}

DatasetManifest DatasetManifest::split(const std::string& which) const {
  DatasetManifest m;
  m.schema_version = schema_version;
  m.root = root;
  for (const auto& r : records)
    if (r.split == which) m.records.push_back(r);
  return m;
}

std::size_t DatasetManifest::count_split(const std::string& which) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [&](const SampleRecord& r) { return r.split == which; }));
}

void validate_manifest(const DatasetManifest& m, bool check_files) {
  if (m.schema_version != kManifestSchemaVersion)
    throw ManifestError("unsupported manifest schema version " + std::to_string(m.schema_version));
  std::set<std::string> paths;
  std::set<std::pair<std::string, std::string>> domain_splits;
  std::set<std::string> domains;
  for (const auto& r : m.records) {
    if (!paths.insert(r.image).second) throw ManifestError("duplicate image path " + r.image);
    if (r.depth && !paths.insert(*r.depth).second) throw ManifestError("duplicate depth path " + *r.depth);
    if (r.label.has_value() != r.depth.has_value())
      throw ManifestError("record " + r.image + ": depth must be present exactly when a label is");
    if (r.label && *r.label != kLive && *r.label != kSpoof) throw ManifestError("record " + r.image + ": bad label");
    if (r.split != "train" && r.split != "test") throw ManifestError("record " + r.image + ": bad split " + r.split);
    if (check_files) {
      if (!std::filesystem::exists(m.root / r.image)) throw ManifestError("missing file " + (m.root / r.image).string());
      if (r.depth && !std::filesystem::exists(m.root / *r.depth))
        throw ManifestError("missing file " + (m.root / *r.depth).string());
    }
    domains.insert(r.domain);
    domain_splits.insert({r.domain, r.split});
  }
  for (const auto& d : domains)
    if (!domain_splits.count({d, "train"}) || !domain_splits.count({d, "test"}))
      throw ManifestError("domain " + d + " lacks a train or test split");
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  nlohmann::json j;
  j["schema_version"] = m.schema_version;
  j["records"] = nlohmann::json::array();
  for (const auto& r : m.records) j["records"].push_back(record_json(r));
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ManifestError("cannot write " + path.string());
  f << j.dump(1) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const std::filesystem::path file = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
  std::ifstream f(file);
  if (!f) throw ManifestError("cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  try {
    const nlohmann::json j = nlohmann::json::parse(f);
    for (const auto& [k, v] : j.items())
      if (k != "schema_version" && k != "records") throw ManifestError("unknown manifest key '" + k + "'");
    m.schema_version = j.at("schema_version").get<int>();
    for (const auto& r : j.at("records")) m.records.push_back(record_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError("malformed manifest " + file.string() + ": " + e.what());
  }
  validate_manifest(m);
  return m;
}

DatasetManifest generate_domain_dataset(const DomainSpec& spec, const std::filesystem::path& out_dir,
                                        unsigned threads) {
  if (spec.name.empty()) throw std::invalid_argument("domain name must be nonempty");
  if (spec.count < 4 || spec.count % 2 != 0) throw std::invalid_argument("domain count must be even and >= 4");
  if (!(spec.test_fraction > 0.0 && spec.test_fraction < 1.0))
    throw std::invalid_argument("test_fraction must lie in (0,1)");
  const std::size_t per_class = spec.count / 2;
  const auto n_test =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(per_class * spec.test_fraction)), 1, per_class - 1);
  const std::size_t n_train = per_class - n_test;

  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "depth");

  DatasetManifest m;
  m.root = out_dir;
  m.records.resize(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    const std::string stem = sample_stem(spec.name, i);
    SampleRecord& r = m.records[i];
    r.image = "images/" + stem + ".ppm";
    r.depth = "depth/" + stem + ".pgm";
    r.label = i % 2 == 0 ? kLive : kSpoof;
    r.domain = spec.name;
    r.split = i / 2 < n_train ? "train" : "test";
  }

  if (threads == 0) threads = default_threads();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(spec.count)));
  auto work = [&](unsigned t) {
    for (std::size_t i = t; i < spec.count; i += threads) {
      const SampleRecord& r = m.records[i];
      const RenderedSample s = render_sample(*r.label, spec.style, mix_seed(spec.seed, i));
      ppm_write(out_dir / r.image, s.image);
      pgm_write(out_dir / *r.depth, s.depth);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

// --- in-memory sets ----------------------------------------------------------------

LabeledSet load_labeled(const DatasetManifest& m) {
  LabeledSet s;
  for (const auto& r : m.records) {
    if (!r.label || !r.depth) throw ManifestError("manifest without labels: record " + r.image);
    s.images.push_back(ppm_read(m.root / r.image));
    s.depths.push_back(pgm_read(m.root / *r.depth));
    s.labels.push_back(*r.label);
    s.domains.push_back(r.domain);
  }
  return s;
}

UnlabeledSet load_unlabeled(const DatasetManifest& m) {
  UnlabeledSet s;
  for (const auto& r : m.records) {
    s.images.push_back(ppm_read(m.root / r.image));
    s.domains.push_back(r.domain);
  }
  return s;
}

LabeledSet concat_sets(const std::vector<LabeledSet>& sets) {
  LabeledSet out;
  for (const auto& s : sets) {
    out.images.insert(out.images.end(), s.images.begin(), s.images.end());
    out.depths.insert(out.depths.end(), s.depths.begin(), s.depths.end());
    out.labels.insert(out.labels.end(), s.labels.begin(), s.labels.end());
    out.domains.insert(out.domains.end(), s.domains.begin(), s.domains.end());
  }
  return out;
}

Tensor stack(const std::vector<Tensor>& items, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("stack of zero items");
  const Shape& item_shape = items.at(indices.front()).shape();
  const std::size_t n = items[indices.front()].numel();
  std::vector<double> out;
  out.reserve(n * indices.size());
  for (std::size_t i : indices) {
    if (items.at(i).shape() != item_shape) throw ShapeError("stack: inconsistent item shapes");
    const auto d = items[i].data();
    out.insert(out.end(), d.begin(), d.end());
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  return Tensor::from_values(std::move(shape), std::move(out));
}

std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n, std::size_t batch_size,
                                                     std::optional<std::uint64_t> seed, std::uint64_t epoch,
                                                     bool drop_last) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (seed) {
    SplitMix64 rng(mix_seed(*seed, epoch));
    order = permutation(n, rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

std::vector<std::size_t> specmix_partners(std::size_t n, SplitMix64& rng) {
  if (n < 2) {
    std::vector<std::size_t> id(n);
    for (std::size_t i = 0; i < n; ++i) id[i] = i;
    return id;
  }
  // Rejection sampling: uniform over derangements, e^-1 acceptance.
  for (;;) {
    auto p = permutation(n, rng);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) ok = p[i] != i;
    if (ok) return p;
  }
}

unsigned default_threads() {
  if (const char* env = std::getenv("GDA_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace gda
