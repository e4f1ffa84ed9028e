#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gda {

struct GradCheckRow {
  std::string op;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 20;
  double tolerance = 1e-4;
  /// Name of an op whose backward rule is replaced by its negation.
  std::optional<std::string> sign_flip;
};

/// Relative error of a trial: max|analytic − numeric| / max(max|analytic|, max|numeric|, 1e-8).
std::vector<GradCheckRow> run_grad_check(const GradCheckOptions& options);

std::vector<std::string> grad_check_ops();

}  // namespace gda
