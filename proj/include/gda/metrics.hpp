#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gda {

/// Mann–Whitney AUC: fraction of (live, spoof) pairs ordered correctly, ties ½.
/// Labels are 1 for the positive (live) class and 0 otherwise.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
  double far;
  double tpr;
  double threshold;  // accept when score >= threshold
};

/// One point per distinct score, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

struct ErrorRates {
  double far;  // spoof accepted / spoofs
  double frr;  // live rejected / lives
  double hter;
};

ErrorRates error_rates(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Threshold among the observed scores minimizing |FAR − FRR|; ties go to the lower HTER, then the lower threshold.
double eer_threshold(std::span<const double> scores, std::span<const int> labels);

enum class MmdKernel { Linear, Rbf };
enum class MmdEstimator { Biased, Unbiased };

/// Median pairwise squared distance among the n rows of a [n,d]; 1 when it is zero or n < 2.
double median_sq_distance(std::span<const double> a, std::size_t n, std::size_t d);

/// Squared MMD between row sets a [n,d] and b [m,d], stored row-major.
/// Without an explicit bandwidth the RBF kernel uses the median heuristic on the pooled rows.
double mmd(std::span<const double> a, std::size_t n, std::span<const double> b, std::size_t m, std::size_t d,
           MmdKernel kernel, MmdEstimator estimator = MmdEstimator::Unbiased,
           std::optional<double> bandwidth = std::nullopt);

/// printf "%.9g".
std::string format_float(double v);

}  // namespace gda
