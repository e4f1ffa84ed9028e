#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gda/models.hpp"

namespace gda {

// .gdac layout, all integers little-endian:
//   "GDAC" | u16 version | u32 tensor count
//   per tensor: u16 name length | UTF-8 name | u8 ndim | u32 dims[ndim] | f32 payload[prod(dims)]
//   u32 CRC-32 (IEEE) of every preceding byte
// BN variances are the biased (divide-by-N) estimates.
inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class CheckpointErrc {
  Io,
  BadMagic,
  UnsupportedVersion,
  CrcMismatch,
  Truncated,
  DimOverflow,
  MissingTensor,
  ShapeMismatch,
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  CheckpointErrc code() const { return code_; }

 private:
  CheckpointErrc code_;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Every parameter and running statistic of the bundle (including G when present).
std::vector<NamedTensor> bundle_tensors(ModelBundle& bundle);

void save_checkpoint(ModelBundle& bundle, const std::filesystem::path& path);
/// Loads F, H, R and φ (and G when the file carries it). φ comes back frozen.
ModelBundle load_checkpoint(const std::filesystem::path& path);

void save_generator(Generator& generator, const std::filesystem::path& path);
Generator load_generator(const std::filesystem::path& path);

}  // namespace gda
