#include "gda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gda {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size()))
    throw std::invalid_argument("metrics need both live and spoof samples");
}

double sq_dist(const double* x, const double* y, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += (x[k] - y[k]) * (x[k] - y[k]);
  return s;
}

double dot(const double* x, const double* y, std::size_t d) {
  double s = 0.0;
  for (std::size_t k = 0; k < d; ++k) s += x[k] * y[k];
  return s;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  // Rank-sum form with midranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    i = j;
  }
  const double n_neg = static_cast<double>(scores.size() - n_pos);
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    out.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, s});
  }
  return out;
}

ErrorRates error_rates(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  std::size_t fa = 0, fr = 0, n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool accept = scores[i] >= threshold;
    if (labels[i] == 1) {
      ++n_pos;
      if (!accept) ++fr;
    } else if (accept) {
      ++fa;
    }
  }
  ErrorRates r;
  r.far = static_cast<double>(fa) / static_cast<double>(scores.size() - n_pos);
  r.frr = static_cast<double>(fr) / static_cast<double>(n_pos);
  r.hter = 0.5 * (r.far + r.frr);
  return r;
}

double eer_threshold(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::vector<double> candidates(scores.begin(), scores.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  double best_t = candidates.front();
  double best_gap = std::numeric_limits<double>::infinity();
  double best_hter = std::numeric_limits<double>::infinity();
  for (double t : candidates) {
    const ErrorRates r = error_rates(scores, labels, t);
    const double gap = std::abs(r.far - r.frr);
    if (gap < best_gap || (gap == best_gap && r.hter < best_hter)) {
      best_gap = gap;
      best_hter = r.hter;
      best_t = t;
    }
  }
  return best_t;
}

namespace {

double median_of_pairs(const std::vector<const double*>& rows, std::size_t d) {
  std::vector<double> dists;
  dists.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) dists.push_back(sq_dist(rows[i], rows[j], d));
  if (dists.empty()) return 1.0;
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double med = *mid;
  if (dists.size() % 2 == 0) med = 0.5 * (med + *std::max_element(dists.begin(), mid));
  return med > 0.0 ? med : 1.0;
}

}  // namespace

double median_sq_distance(std::span<const double> a, std::size_t n, std::size_t d) {
  if (a.size() != n * d) throw std::invalid_argument("median_sq_distance: buffer does not match [n,d]");
  std::vector<const double*> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(a.data() + i * d);
  return median_of_pairs(rows, d);
}

double mmd(std::span<const double> a, std::size_t n, std::span<const double> b, std::size_t m, std::size_t d,
           MmdKernel kernel, MmdEstimator estimator, std::optional<double> bandwidth_override) {
  if (a.size() != n * d || b.size() != m * d) throw std::invalid_argument("mmd: feature buffers do not match [n,d]");
  if (n == 0 || m == 0) throw std::invalid_argument("mmd: empty feature set");
  if (estimator == MmdEstimator::Unbiased && (n < 2 || m < 2))
    throw std::invalid_argument("mmd: unbiased estimate needs at least two rows per set");
  if (bandwidth_override && !(*bandwidth_override > 0.0)) throw std::invalid_argument("mmd: bandwidth must be positive");

  std::vector<const double*> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(a.data() + i * d);
  for (std::size_t j = 0; j < m; ++j) rows.push_back(b.data() + j * d);

  double bandwidth = 1.0;
  if (kernel == MmdKernel::Rbf) bandwidth = bandwidth_override ? *bandwidth_override : median_of_pairs(rows, d);
  auto k = [&](std::size_t i, std::size_t j) {
    return kernel == MmdKernel::Linear ? dot(rows[i], rows[j], d)
                                       : std::exp(-sq_dist(rows[i], rows[j], d) / bandwidth);
  };

  const bool unbiased = estimator == MmdEstimator::Unbiased;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!unbiased || i != j) saa += k(i, j);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (!unbiased || i != j) sbb += k(n + i, n + j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) sab += k(i, n + j);

  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  const double waa = unbiased ? dn * (dn - 1.0) : dn * dn;
  const double wbb = unbiased ? dm * (dm - 1.0) : dm * dm;
  return saa / waa + sbb / wbb - 2.0 * sab / (dn * dm);
}

std::string format_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace gda
