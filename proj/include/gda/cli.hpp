#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gda/pipeline.hpp"
#include "gda/synth_data.hpp"

namespace gda {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Bad flags, malformed or inconsistent configuration, unusable inputs.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a command may read from a configuration file.
struct CliConfig {
  TrainConfig train;
  std::vector<DomainSpec> domains;
  std::vector<std::string> source_data;
  std::string target_data;
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3};
};

/// Parses and validates a JSON configuration. Unknown keys are rejected by name,
/// syntax errors carry line and column. Missing keys keep their defaults.
CliConfig load_config(const std::filesystem::path& path);
CliConfig parse_config(const std::string& text);
std::string config_to_json(const CliConfig& config);

int dispatch(int argc, const char* const* argv);
int dispatch(const std::vector<std::string>& args);

}  // namespace gda
