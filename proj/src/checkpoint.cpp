#include "gda/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <zlib.h>

namespace gda {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', 'D', 'A', 'C'};
constexpr std::uint64_t kMaxPayload = std::uint64_t{1} << 32;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw CheckpointError(CheckpointErrc::Truncated, "checkpoint ends inside a record");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string bn_prefix(const BNLayerState& bn) {
  const std::string& g = bn.gamma.name;
  return g.substr(0, g.size() - std::string(".gamma").size());
}

void add_params(std::vector<NamedTensor>& out, const std::vector<Param*>& params) {
  for (const Param* p : params) out.push_back({p->name, p->value.detach()});
}

void add_bn(std::vector<NamedTensor>& out, const BNLayerState& bn) {
  const std::string prefix = bn_prefix(bn);
  out.push_back({prefix + ".running_mean", bn.running_mean});
  out.push_back({prefix + ".running_var", bn.running_var});
  out.push_back({prefix + ".num_updates", Tensor::scalar(static_cast<double>(bn.num_updates))});
}

using TensorMap = std::map<std::string, Tensor>;

TensorMap to_map(std::vector<NamedTensor> tensors) {
  TensorMap m;
  for (auto& t : tensors) m.emplace(std::move(t.name), std::move(t.value));
  return m;
}

Tensor take(const TensorMap& m, const std::string& name, const Shape& expected) {
  const auto it = m.find(name);
  if (it == m.end()) throw CheckpointError(CheckpointErrc::MissingTensor, "checkpoint has no tensor '" + name + "'");
  if (it->second.shape() != expected)
    throw CheckpointError(CheckpointErrc::ShapeMismatch, "tensor '" + name + "' has shape " +
                                                             shape_str(it->second.shape()) + ", expected " +
                                                             shape_str(expected));
  return it->second;
}

void fill_params(const TensorMap& m, const std::vector<Param*>& params) {
  for (Param* p : params) p->value = take(m, p->name, p->value.shape());
}

void fill_bn(const TensorMap& m, BNLayerState& bn) {
  const std::string prefix = bn_prefix(bn);
  bn.running_mean = take(m, prefix + ".running_mean", bn.running_mean.shape());
  bn.running_var = take(m, prefix + ".running_var", bn.running_var.shape());
  bn.num_updates = static_cast<std::uint64_t>(take(m, prefix + ".num_updates", {1}).item());
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    if (t.name.size() > 0xFFFF) throw CheckpointError(CheckpointErrc::DimOverflow, "tensor name too long");
    if (t.value.rank() > 0xFF) throw CheckpointError(CheckpointErrc::DimOverflow, "tensor rank too large");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) {
      if (d > 0xFFFFFFFFu) throw CheckpointError(CheckpointErrc::DimOverflow, "dimension exceeds u32");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (double v : t.value.data()) put<float>(out, static_cast<float>(v));
  }
  put<std::uint32_t>(out, crc_of(out.data(), out.size()));
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(CheckpointErrc::BadMagic, "not a GDAC checkpoint (bad magic)");
  if (bytes.size() < 6) throw CheckpointError(CheckpointErrc::Truncated, "checkpoint truncated before version");
  std::uint16_t version;
  std::memcpy(&version, bytes.data() + 4, 2);
  if (version != kCheckpointVersion)
    throw CheckpointError(CheckpointErrc::UnsupportedVersion,
                          "checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < 14) throw CheckpointError(CheckpointErrc::CrcMismatch, "checkpoint too short for CRC");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc_of(bytes.data(), body) != stored) throw CheckpointError(CheckpointErrc::CrcMismatch, "checkpoint CRC mismatch");

  Reader r(bytes, body);
  r.get_string(6);
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name = r.get_string(name_len);
    const auto ndim = r.get<std::uint8_t>();
    if (ndim == 0) throw CheckpointError(CheckpointErrc::DimOverflow, "tensor '" + name + "' has zero rank");
    Shape shape;
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const auto dim = r.get<std::uint32_t>();
      if (dim == 0) throw CheckpointError(CheckpointErrc::DimOverflow, "tensor '" + name + "' has a zero dimension");
      n *= dim;
      if (n > kMaxPayload) throw CheckpointError(CheckpointErrc::DimOverflow, "tensor '" + name + "' is too large");
      shape.push_back(dim);
    }
    if (n * sizeof(float) > r.remaining())
      throw CheckpointError(CheckpointErrc::DimOverflow, "tensor '" + name + "' dims exceed the file payload");
    std::vector<double> values(n);
    for (auto& v : values) v = static_cast<double>(r.get<float>());
    out.push_back({std::move(name), Tensor::from_values(std::move(shape), std::move(values))});
  }
  if (r.remaining() != 0) throw CheckpointError(CheckpointErrc::Truncated, "trailing bytes after tensor table");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointErrc::Io, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError(CheckpointErrc::Io, "write failed for " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointErrc::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::vector<NamedTensor> bundle_tensors(ModelBundle& bundle) {
  std::vector<NamedTensor> out;
  add_params(out, bundle.F.params());
  for (const auto& bn : bundle.F.bn) add_bn(out, bn);
  add_params(out, bundle.H.params());
  add_params(out, bundle.R.params());
  for (const auto& bn : bundle.R.bn) add_bn(out, bn);
  add_params(out, bundle.phi.params());
  if (bundle.G) add_params(out, bundle.G->params());
  return out;
}

void save_checkpoint(ModelBundle& bundle, const std::filesystem::path& path) {
  write_checkpoint(path, bundle_tensors(bundle));
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  const TensorMap m = to_map(read_checkpoint(path));
  ModelBundle b = build_source_bundle(0);
  fill_params(m, b.source_params());
  for (BNLayerState* bn : b.bn_layers()) fill_bn(m, *bn);
  fill_params(m, b.phi.params());
  const bool has_g = std::any_of(m.begin(), m.end(), [](const auto& kv) { return kv.first.rfind("G.", 0) == 0; });
  if (has_g) {
    b.G = build_generator(0);
    fill_params(m, b.G->params());
  }
  return b;
}

void save_generator(Generator& generator, const std::filesystem::path& path) {
  std::vector<NamedTensor> out;
  add_params(out, generator.params());
  write_checkpoint(path, out);
}

Generator load_generator(const std::filesystem::path& path) {
  const TensorMap m = to_map(read_checkpoint(path));
  Generator g = build_generator(0);
  fill_params(m, g.params());
  return g;
}

}  // namespace gda
