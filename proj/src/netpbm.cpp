#include "gda/netpbm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>

namespace gda {

namespace {

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> header(const char* magic, std::size_t w, std::size_t h) {
  const std::string s = std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  return {s.begin(), s.end()};
}

struct Header {
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 0;
  std::size_t offset = 0;
};

class HeaderParser {
 public:
  explicit HeaderParser(const std::vector<std::uint8_t>& b) : b_(b) {}

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) throw NetpbmError("malformed netpbm header: expected a number");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      if (v > (1u << 24)) throw NetpbmError("malformed netpbm header: value too large");
    }
    return v;
  }

  std::size_t end_of_header() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) throw NetpbmError("malformed netpbm header: missing separator");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 2;
};

Header parse_header(const std::vector<std::uint8_t>& bytes, char binary_kind, char ascii_kind) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw NetpbmError("malformed netpbm header: missing magic");
  if (bytes[1] == ascii_kind)
    throw NetpbmError(std::string("ASCII netpbm variant P") + ascii_kind + " is not supported; use binary P" +
                      binary_kind);
  if (bytes[1] != binary_kind)
    throw NetpbmError(std::string("expected netpbm type P") + binary_kind + ", got P" + static_cast<char>(bytes[1]));
  HeaderParser p(bytes);
  Header h;
  h.width = p.number();
  h.height = p.number();
  h.maxval = static_cast<unsigned>(p.number());
  if (h.width == 0 || h.height == 0) throw NetpbmError("malformed netpbm header: zero image size");
  if (h.maxval == 0 || h.maxval > 255) throw NetpbmError("unsupported netpbm maxval (need 1..255)");
  h.offset = p.end_of_header();
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("ppm expects [3,H,W], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);
  auto out = header("P6", w, h);
  const auto d = image.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.push_back(quantize(d[(c * h + y) * w + x]));
  return out;
}

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
  const Header hd = parse_header(bytes, '6', '3');
  const std::size_t n = hd.width * hd.height * 3;
  if (bytes.size() < hd.offset + n) throw NetpbmError("truncated PPM payload");
  std::vector<double> v(n);
  const double scale = 1.0 / hd.maxval;
  for (std::size_t y = 0; y < hd.height; ++y)
    for (std::size_t x = 0; x < hd.width; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        v[(c * hd.height + y) * hd.width + x] = bytes[hd.offset + (y * hd.width + x) * 3 + c] * scale;
  return Tensor::from_values({3, hd.height, hd.width}, std::move(v));
}

std::vector<std::uint8_t> encode_pgm(const Tensor& image) {
  const bool chw = image.rank() == 3 && image.dim(0) == 1;
  if (!chw && image.rank() != 2) throw ShapeError("pgm expects [1,H,W] or [H,W], got " + shape_str(image.shape()));
  const std::size_t h = image.dim(image.rank() - 2), w = image.dim(image.rank() - 1);
  auto out = header("P5", w, h);
  for (double v : image.data()) out.push_back(quantize(v));
  return out;
}

Tensor decode_pgm(const std::vector<std::uint8_t>& bytes) {
  const Header hd = parse_header(bytes, '5', '2');
  const std::size_t n = hd.width * hd.height;
  if (bytes.size() < hd.offset + n) throw NetpbmError("truncated PGM payload");
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = bytes[hd.offset + i] / static_cast<double>(hd.maxval);
  return Tensor::from_values({1, hd.height, hd.width}, std::move(v));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NetpbmError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw NetpbmError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw NetpbmError("write failed for " + path.string());
}

void ppm_write(const std::filesystem::path& path, const Tensor& image) { write_file_bytes(path, encode_ppm(image)); }
Tensor ppm_read(const std::filesystem::path& path) { return decode_ppm(read_file_bytes(path)); }
void pgm_write(const std::filesystem::path& path, const Tensor& image) { write_file_bytes(path, encode_pgm(image)); }
Tensor pgm_read(const std::filesystem::path& path) { return decode_pgm(read_file_bytes(path)); }

}  // namespace gda
