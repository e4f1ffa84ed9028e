#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "gda/metrics.hpp"
#include "gda/random.hpp"

using namespace gda;

namespace {

// Pair enumeration: each (live, spoof) pair scores 1 when ordered, ½ when tied.
double pair_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double hits = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return hits / pairs;
}

struct Scored {
  std::vector<double> scores;
  std::vector<int> labels;
};

Scored random_scored(std::uint64_t seed, std::size_t n, bool coarse) {
  SplitMix64 rng(seed);
  Scored out;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.next() % 2);
    double s = rng.uniform() + 0.3 * y;
    if (coarse) s = std::round(s * 4.0) / 4.0;
    out.scores.push_back(s);
    out.labels.push_back(y);
  }
  return out;
}

}  // namespace

TEST(Auc, Examples) {
  const std::vector<int> y{1, 1, 0, 0};
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, y), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.1, 0.8, 0.2}, y), 0.5);
  EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y), 0.5);
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y), 0.0);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
}

TEST(Auc, MatchesPairEnumeration) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scored d = random_scored(seed, 5 + seed % 40, seed % 2 == 0);
    EXPECT_NEAR(roc_auc(d.scores, d.labels), pair_auc(d.scores, d.labels), 1e-12) << seed;
  }
}

TEST(Auc, LabelInversionAndMonotoneInvariance) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scored d = random_scored(seed, 30, seed % 3 == 0);
    std::vector<int> flipped;
    for (int y : d.labels) flipped.push_back(1 - y);
    std::vector<double> warped;
    for (double s : d.scores) warped.push_back(std::exp(3.0 * s) - 7.0);
    const double a = roc_auc(d.scores, d.labels);
    EXPECT_NEAR(roc_auc(d.scores, flipped), 1.0 - a, 1e-12);
    EXPECT_EQ(roc_auc(warped, d.labels), a);
  }
}

TEST(Roc, EndpointsMonotoneAndAreaMatchesAuc) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scored d = random_scored(seed, 40, seed % 2 == 1);
    const auto roc = roc_curve(d.scores, d.labels);
    ASSERT_GE(roc.size(), 2u);
    EXPECT_EQ(roc.front().far, 0.0);
    EXPECT_EQ(roc.front().tpr, 0.0);
    EXPECT_EQ(roc.back().far, 1.0);
    EXPECT_EQ(roc.back().tpr, 1.0);
    double area = 0.0;
    for (std::size_t i = 1; i < roc.size(); ++i) {
      EXPECT_GE(roc[i].far, roc[i - 1].far);
      EXPECT_GE(roc[i].tpr, roc[i - 1].tpr);
      EXPECT_LT(roc[i].threshold, roc[i - 1].threshold);
      area += (roc[i].far - roc[i - 1].far) * 0.5 * (roc[i].tpr + roc[i - 1].tpr);
    }
    EXPECT_NEAR(area, roc_auc(d.scores, d.labels), 1e-12);
  }
}

TEST(ErrorRates, HterExample) {
  // Ten lives with two below the threshold, ten spoofs with one above.
  std::vector<double> s{0.9, 0.8, 0.85, 0.7, 0.6, 0.95, 0.55, 0.75, 0.3, 0.2,
                        0.1, 0.2, 0.3, 0.4, 0.45, 0.05, 0.15, 0.25, 0.35, 0.6};
  std::vector<int> y(20, 0);
  for (int i = 0; i < 10; ++i) y[i] = 1;
  const ErrorRates r = error_rates(s, y, 0.5);
  EXPECT_NEAR(r.frr, 0.2, 1e-15);
  EXPECT_NEAR(r.far, 0.1, 1e-15);
  EXPECT_NEAR(r.hter, 0.15, 1e-15);
  // A score equal to the threshold is accepted.
  EXPECT_EQ(error_rates(s, y, 0.6).far, 0.1);
}

TEST(ErrorRates, EerThresholdBalancesErrors) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Scored d = random_scored(seed, 60, false);
    const double t = eer_threshold(d.scores, d.labels);
    const ErrorRates best = error_rates(d.scores, d.labels, t);
    for (double c : d.scores) {
      const ErrorRates r = error_rates(d.scores, d.labels, c);
      EXPECT_LE(std::abs(best.far - best.frr), std::abs(r.far - r.frr) + 1e-15);
    }
  }
  const std::vector<double> sep{0.9, 0.8, 0.2, 0.1};
  const std::vector<int> y{1, 1, 0, 0};
  EXPECT_EQ(error_rates(sep, y, eer_threshold(sep, y)).hter, 0.0);
}

TEST(Mmd, IdenticalSetsAndLinearOffset) {
  SplitMix64 rng(4);
  const std::size_t n = 12, d = 3;
  std::vector<double> a(n * d);
  for (double& v : a) v = rng.uniform(-1.0, 1.0);
  EXPECT_NEAR(mmd(a, n, a, n, d, MmdKernel::Rbf, MmdEstimator::Biased), 0.0, 1e-14);
  EXPECT_NEAR(mmd(a, n, a, n, d, MmdKernel::Linear, MmdEstimator::Biased), 0.0, 1e-14);

  // Biased linear MMD is the squared distance of the means, so a shift by c gives |c|^2.
  const std::vector<double> c{0.5, -1.0, 2.0};
  std::vector<double> b = a;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) b[i * d + k] += c[k];
  EXPECT_NEAR(mmd(a, n, b, n, d, MmdKernel::Linear, MmdEstimator::Biased), 0.25 + 1.0 + 4.0, 1e-12);
}

TEST(Mmd, RbfHandExpansion) {
  // A = {0, 1}, B = {3, 4}. Pooled squared distances 1,1,4,9,9,16 have median 6.5.
  const std::vector<double> a{0.0, 1.0}, b{3.0, 4.0};
  auto k = [](double d2) { return std::exp(-d2 / 6.5); };
  const double cross = (k(9.0) + k(16.0) + k(4.0) + k(9.0)) / 4.0;
  const double unbiased = k(1.0) + k(1.0) - 2.0 * cross;
  const double biased = (2.0 + 2.0 * k(1.0)) / 4.0 * 2.0 - 2.0 * cross;
  EXPECT_NEAR(mmd(a, 2, b, 2, 1, MmdKernel::Rbf), unbiased, 1e-14);
  EXPECT_NEAR(mmd(a, 2, b, 2, 1, MmdKernel::Rbf, MmdEstimator::Biased), biased, 1e-14);
  EXPECT_THROW(mmd(a, 1, b, 2, 1, MmdKernel::Rbf), std::invalid_argument);
  EXPECT_THROW(mmd(a, 2, b, 3, 1, MmdKernel::Rbf), std::invalid_argument);
}

TEST(Mmd, FixedBandwidth) {
  // Pairwise squared distances of {0, 1, 3} are 1, 9, 4.
  EXPECT_EQ(median_sq_distance(std::vector<double>{0.0, 1.0, 3.0}, 3, 1), 4.0);
  EXPECT_EQ(median_sq_distance(std::vector<double>{2.0, 2.0}, 2, 1), 1.0);
  const std::vector<double> a{0.0, 1.0}, b{3.0, 4.0};
  auto k = [](double d2) { return std::exp(-d2 / 2.0); };
  const double expect = 2.0 * k(1.0) - 2.0 * (k(9.0) + k(16.0) + k(4.0) + k(9.0)) / 4.0;
  EXPECT_NEAR(mmd(a, 2, b, 2, 1, MmdKernel::Rbf, MmdEstimator::Unbiased, 2.0), expect, 1e-14);
  EXPECT_THROW(mmd(a, 2, b, 2, 1, MmdKernel::Rbf, MmdEstimator::Unbiased, 0.0), std::invalid_argument);
}

TEST(Mmd, UnbiasedEstimateCentersOnZeroForSameDistribution) {
  double total = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    SplitMix64 rng(1000 + r);
    std::vector<double> a(8 * 2), b(8 * 2);
    for (double& v : a) v = rng.gaussian();
    for (double& v : b) v = rng.gaussian();
    total += mmd(a, 8, b, 8, 2, MmdKernel::Linear);
  }
  EXPECT_NEAR(total / reps, 0.0, 0.05);
}

TEST(Format, NineSignificantDigits) {
  EXPECT_EQ(format_float(0.1), "0.1");
  EXPECT_EQ(format_float(1.0 / 3.0), "0.333333333");
  EXPECT_EQ(format_float(123456789012.0), "1.23456789e+11");
}
