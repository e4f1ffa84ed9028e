#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gda/random.hpp"
#include "gda/tensor.hpp"

namespace gda {

inline constexpr int kLive = 1;
inline constexpr int kSpoof = 0;
inline constexpr int kManifestSchemaVersion = 1;

/// Capture style of a synthetic domain, applied as
///   clamp(gain_c * blur(content) + brightness + noise * N(0,1), 0, 1).
struct DomainStyle {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  double brightness = 0.0;
  double blur_radius = 0.0;  // Gaussian sigma in pixels; 0 disables
  double noise_std = 0.0;
};

struct DomainSpec {
  std::string name;
  DomainStyle style;
  std::size_t count = 200;  // total samples, half live and half spoof
  double test_fraction = 0.25;
  std::uint64_t seed = 0;
};

struct RenderedSample {
  Tensor image;  // [3,32,32] in [0,1]
  Tensor depth;  // [1,8,8]; dome for live, zeros for spoof
};

/// Live: smooth face-like blob. Spoof: the same blob under a fine moiré grating.
RenderedSample render_sample(int label, const DomainStyle& style, std::uint64_t seed);

/// Energy of bins whose signed frequency radius exceeds `radius`.
double high_frequency_energy(const Tensor& image, double radius);

/// Largest per-channel difference of the mean image value between two styles,
/// measured on a fixed reference set of renders.
double style_mean_separation(const DomainStyle& a, const DomainStyle& b);
inline constexpr double kMinDomainSeparation = 0.05;

struct SampleRecord {
  std::string image;                 // relative to the manifest root
  std::optional<std::string> depth;  // present iff labeled
  std::optional<int> label;
  std::string domain;
  std::string split;  // "train" | "test"
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  std::filesystem::path root;
  std::vector<SampleRecord> records;

  /// Same records with labels and depth paths removed.
  DatasetManifest without_labels() const;
  DatasetManifest split(const std::string& which) const;
  std::size_t count_split(const std::string& which) const;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
/// Accepts a manifest file or a dataset root directory. Validates the invariants.
DatasetManifest load_manifest(const std::filesystem::path& path);
void validate_manifest(const DatasetManifest& m, bool check_files = true);

/// Renders `spec` under `out_dir` (images/, depth/, manifest.json). Pure function of spec.
DatasetManifest generate_domain_dataset(const DomainSpec& spec, const std::filesystem::path& out_dir,
                                        unsigned threads = 0);

/// In-memory images with labels and depth targets.
struct LabeledSet {
  std::vector<Tensor> images;
  std::vector<Tensor> depths;
  std::vector<int> labels;
  std::vector<std::string> domains;
  std::size_t size() const { return images.size(); }
};

/// In-memory images without any supervision.
struct UnlabeledSet {
  std::vector<Tensor> images;
  std::vector<std::string> domains;
  std::size_t size() const { return images.size(); }
};

LabeledSet load_labeled(const DatasetManifest& m);
UnlabeledSet load_unlabeled(const DatasetManifest& m);
LabeledSet concat_sets(const std::vector<LabeledSet>& sets);

/// Stacks [C,H,W] tensors into [B,C,H,W] in index order.
Tensor stack(const std::vector<Tensor>& items, const std::vector<std::size_t>& indices);

/// Index batches of one epoch. Shuffled with (seed, epoch) unless seed is nullopt.
std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n, std::size_t batch_size,
                                                     std::optional<std::uint64_t> seed, std::uint64_t epoch,
                                                     bool drop_last);

/// Random in-batch partner permutation with no fixed points when n >= 2.
std::vector<std::size_t> specmix_partners(std::size_t n, SplitMix64& rng);

/// Worker count: GDA_THREADS if set, else hardware concurrency, at least 1.
unsigned default_threads();

}  // namespace gda
