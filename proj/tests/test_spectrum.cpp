#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "gda/random.hpp"
#include "gda/spectrum.hpp"

using namespace gda;

namespace {

using cd = std::complex<double>;

Tensor random_image(Shape shape, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform();
  return Tensor::from_values(std::move(shape), std::move(v));
}

// Textbook double sum with std::complex, independent of the library's kernels.
std::vector<cd> oracle_dft(const Tensor& x) {
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<cd> out(C * H * W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v) {
        cd s = 0.0;
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            const double ang = -2.0 * std::numbers::pi *
                               (static_cast<double>(h * u) / static_cast<double>(H) +
                                static_cast<double>(w * v) / static_cast<double>(W));
            s += x[(c * H + h) * W + w] * std::polar(1.0, ang);
          }
        out[(c * H + u) * W + v] = s;
      }
  return out;
}

// -Σ cos between coefficient pairs, skipping bins where either norm is below 1e-8.
double oracle_phase_loss(const Tensor& a, const Tensor& b) {
  const auto fa = oracle_dft(a), fb = oracle_dft(b);
  double s = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    const double na = std::abs(fa[i]), nb = std::abs(fb[i]);
    if (na < 1e-8 || nb < 1e-8) continue;
    s += (fa[i].real() * fb[i].real() + fa[i].imag() * fb[i].imag()) / (na * nb);
  }
  return -s;
}

}  // namespace

TEST(Dft, TwoByTwoExample) {
  // Oracle: 1+2+3+4, (1-2)+(3-4), (1+2)-(3+4), 1-2-3+4.
  const Tensor x = Tensor::from_values({1, 2, 2}, {1, 2, 3, 4});
  const auto want = oracle_dft(x);
  const std::vector<double> frozen{10, -2, -4, 0};
  const Spectrum s = dft2d(x);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(want[i].real(), frozen[i], 1e-12);
    EXPECT_NEAR(s.re[i], frozen[i], 1e-12);
    EXPECT_NEAR(s.im[i], 0.0, 1e-12);
  }
}

TEST(Dft, ConstantImageHasOnlyDc) {
  const Spectrum s = dft2d(Tensor::full({1, 4, 8}, 0.25));
  EXPECT_NEAR(s.re[0], 0.25 * 32, 1e-12);
  for (std::size_t i = 1; i < 32; ++i) {
    EXPECT_NEAR(s.re[i], 0.0, 1e-12);
    EXPECT_NEAR(s.im[i], 0.0, 1e-12);
  }
}

TEST(Dft, FastPathEqualsNaiveOn8x8) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_image({3, 8, 8}, seed);
    const Spectrum fast = dft2d(x), direct = dft2d_direct(x);
    const auto oracle = oracle_dft(x);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      EXPECT_NEAR(fast.re[i], direct.re[i], 1e-9);
      EXPECT_NEAR(fast.im[i], direct.im[i], 1e-9);
      EXPECT_NEAR(fast.re[i], oracle[i].real(), 1e-9);
      EXPECT_NEAR(fast.im[i], oracle[i].imag(), 1e-9);
    }
  }
}

TEST(Dft, NonPowerOfTwoUsesDirectSum) {
  const Tensor x = random_image({2, 5, 3}, 7);
  const Spectrum s = dft2d(x);
  const auto oracle = oracle_dft(x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_NEAR(s.re[i], oracle[i].real(), 1e-10);
    EXPECT_NEAR(s.im[i], oracle[i].imag(), 1e-10);
  }
}

TEST(Dft, RoundTripAndParseval) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x = random_image({3, 32, 32}, seed);
    const Spectrum s = dft2d(x);
    const Tensor back = idft2d(s);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(back[i], x[i], 1e-9);
    double energy = 0.0, spec = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      energy += x[i] * x[i];
      spec += s.re[i] * s.re[i] + s.im[i] * s.im[i];
    }
    EXPECT_NEAR(energy, spec / (32.0 * 32.0), 1e-6);
  }
}

TEST(Idft, DcOnlyIsConstantAndInverseIsLinear) {
  Spectrum dc{Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 4, 4})};
  dc.re.mutable_data()[0] = 32.0;
  const Tensor flat = idft2d(dc);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(flat[i], 2.0, 1e-12);

  const Spectrum a = dft2d(random_image({1, 8, 8}, 1)), b = dft2d(random_image({1, 8, 8}, 2));
  const Spectrum ab{add(a.re, b.re), add(a.im, b.im)};
  const Tensor lhs = idft2d(ab), ra = idft2d(a), rb = idft2d(b);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(lhs[i], ra[i] + rb[i], 1e-12);
}

TEST(AmpPhase, Examples) {
  const AmpPhase ap = amp_phase({Tensor::from_values({1, 1, 2}, {3, -1}), Tensor::from_values({1, 1, 2}, {4, 0})});
  EXPECT_NEAR(ap.amplitude[0], 5.0, 1e-15);
  EXPECT_NEAR(ap.phase[0], std::atan2(4.0, 3.0), 1e-15);
  EXPECT_NEAR(ap.phase[0], 0.9273, 1e-4);
  EXPECT_NEAR(ap.phase[1], std::numbers::pi, 1e-15);

  const Spectrum r = reconstruct(Tensor::from_values({1, 1, 2}, {1, 2}),
                                 Tensor::from_values({1, 1, 2}, {0, std::numbers::pi / 2}));
  EXPECT_NEAR(r.re[0], 1.0, 1e-15);
  EXPECT_NEAR(r.im[0], 0.0, 1e-15);
  EXPECT_NEAR(r.re[1], 0.0, 1e-15);
  EXPECT_NEAR(r.im[1], 2.0, 1e-15);
}

TEST(AmpPhase, ReconstructInvertsDecomposition) {
  const Spectrum s{Tensor::gaussian({2, 4, 4}, 0, 3, 1), Tensor::gaussian({2, 4, 4}, 0, 3, 2)};
  const AmpPhase ap = amp_phase(s);
  const Spectrum r = reconstruct(ap.amplitude, ap.phase);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_NEAR(r.re[i], s.re[i], 1e-12);
    EXPECT_NEAR(r.im[i], s.im[i], 1e-12);
    EXPECT_GT(ap.phase[i], -std::numbers::pi);
    EXPECT_LE(ap.phase[i], std::numbers::pi);
  }
}

TEST(SampleLambda, RangeMeanAndDeterminism) {
  SplitMix64 zero(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_lambda({0.0, 1}, zero), 0.0);
  SplitMix64 rng(42);
  double s = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double l = sample_lambda({0.1, 42}, rng);
    ASSERT_GE(l, 0.0);
    ASSERT_LT(l, 0.1);
    s += l;
  }
  EXPECT_NEAR(s / n, 0.05, 0.002);
  SplitMix64 a(3), b(3);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(sample_lambda({0.1, 3}, a), sample_lambda({0.1, 3}, b));
  SplitMix64 bad(0);
  EXPECT_THROW(sample_lambda({1.5, 0}, bad), std::invalid_argument);
}

TEST(SpecMix, IdentityCases) {
  const Tensor x = random_image({3, 32, 32}, 1), ref = random_image({3, 32, 32}, 2);
  const Tensor same = specmix(x, ref, 0.0), self = specmix(x, x, 0.7);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_NEAR(same[i], x[i], 1e-6);
    EXPECT_NEAR(self[i], x[i], 1e-6);
  }
  EXPECT_THROW(specmix(x, random_image({3, 16, 16}, 3), 0.1), ShapeError);
}

TEST(SpecMix, AmplitudeIsInterpolatedAndPhaseKept) {
  const double lambda = 0.37;
  const Tensor x = random_image({2, 8, 8}, 4), ref = random_image({2, 8, 8}, 5);
  const Tensor y = specmix_unclamped(x, ref, lambda);
  const auto fx = oracle_dft(x), fr = oracle_dft(ref), fy = oracle_dft(y);
  for (std::size_t i = 0; i < fx.size(); ++i) {
    EXPECT_NEAR(std::abs(fy[i]), (1 - lambda) * std::abs(fx[i]) + lambda * std::abs(fr[i]), 1e-6);
    if (std::abs(fx[i]) > 1e-8 && std::abs(fy[i]) > 1e-8) {
      const double d = std::remainder(std::arg(fy[i]) - std::arg(fx[i]), 2 * std::numbers::pi);
      EXPECT_NEAR(d, 0.0, 1e-6);
    }
  }
}

TEST(SpecMix, ClampedOutputStaysInUnitRange) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor y = specmix(random_image({3, 16, 16}, seed), random_image({3, 16, 16}, seed + 9), 0.9);
    for (std::size_t i = 0; i < y.numel(); ++i) {
      EXPECT_GE(y[i], 0.0);
      EXPECT_LE(y[i], 1.0);
    }
  }
}

TEST(PhaseLoss, Examples) {
  // Spectrum of [[1,2],[3,4]] is [10,-2,-4,0]: three nonzero bins.
  const Tensor x = Tensor::from_values({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_NEAR(oracle_phase_loss(x, x), -3.0, 1e-12);
  EXPECT_NEAR(phase_consistency_loss(x, x).item(), -3.0, 1e-12);
  const Tensor c = Tensor::full({1, 4, 4}, 0.6);
  EXPECT_NEAR(phase_consistency_loss(c, c).item(), -1.0, 1e-12);
  EXPECT_THROW(phase_consistency_loss(x, Tensor::zeros({1, 2, 3})), ShapeError);
}

TEST(PhaseLoss, MatchesOracleAndBatchAverages) {
  const Tensor a = random_image({3, 8, 8}, 1), b = random_image({3, 8, 8}, 2);
  const Tensor c = random_image({3, 8, 8}, 3), d = random_image({3, 8, 8}, 4);
  const double ab = oracle_phase_loss(a, b), cd_ = oracle_phase_loss(c, d);
  EXPECT_NEAR(phase_consistency_loss(a, b).item(), ab, 1e-10);
  const Tensor batch1 = reshape(concat({a, c}, 0), {2, 3, 8, 8});
  const Tensor batch2 = reshape(concat({b, d}, 0), {2, 3, 8, 8});
  EXPECT_NEAR(phase_consistency_loss(batch1, batch2).item(), 0.5 * (ab + cd_), 1e-10);
}

TEST(PhaseLoss, SelfSimilarityIsMinimalAndBounded) {
  const Tensor x = random_image({3, 8, 8}, 11);
  const double self = phase_consistency_loss(x, x).item();
  for (std::uint64_t s = 0; s < 20; ++s) {
    const double other = phase_consistency_loss(x, random_image({3, 8, 8}, 100 + s)).item();
    EXPECT_GE(other, self - 1e-12);
    EXPECT_LE(std::abs(other), 3.0 * 64.0);
  }
  // A positive gain leaves every phase in place.
  EXPECT_NEAR(phase_consistency_loss(x, mul_scalar(x, 0.4)).item(), self, 1e-9);
}

TEST(PhaseLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor ref = random_image({3, 8, 8}, seed), y0 = random_image({3, 8, 8}, seed + 50);
    Tape& tape = active_tape();
    const Tensor y = tape.watch(y0);
    const Gradients g = backward(phase_consistency_loss(ref, y));
    const Tensor fd =
        finite_diff_gradient([&](const Tensor& t) { return phase_consistency_loss(ref, t).item(); }, y0);
    double diff = 0.0, mag = 1e-8;
    for (std::size_t i = 0; i < fd.numel(); ++i) {
      diff = std::max(diff, std::abs(fd[i] - g.of(y)[i]));
      mag = std::max(mag, std::abs(fd[i]));
    }
    EXPECT_LT(diff / mag, 1e-4);
  }
}
