#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gda/tensor.hpp"

namespace gda {

class NetpbmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary P6 (RGB) and P5 (gray), 8 bits. Values in [0,1] map to round(v*255).

std::vector<std::uint8_t> encode_ppm(const Tensor& image);  // [3,H,W]
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes);   // -> [3,H,W]
std::vector<std::uint8_t> encode_pgm(const Tensor& image);  // [1,H,W] or [H,W]
Tensor decode_pgm(const std::vector<std::uint8_t>& bytes);   // -> [1,H,W]

void ppm_write(const std::filesystem::path& path, const Tensor& image);
Tensor ppm_read(const std::filesystem::path& path);
void pgm_write(const std::filesystem::path& path, const Tensor& image);
Tensor pgm_read(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace gda
