#pragma once

#include <cstdint>

#include "gda/random.hpp"
#include "gda/tensor.hpp"

namespace gda {

/// Per-channel 2D spectrum of a [C,H,W] image. Forward kernel e^{-j2π(hu/H + wv/W)}, unnormalized.
struct Spectrum {
  Tensor re;  // [C,H,W]
  Tensor im;  // [C,H,W]
};

/// Polar form of a spectrum. Phase lies in (-π, π].
struct AmpPhase {
  Tensor amplitude;
  Tensor phase;
};

struct SpecMixConfig {
  double eta = 0.1;  // λ ~ U(0, eta)
  std::uint64_t seed = 0;
};

/// Radix-2 FFT when H and W are powers of two, direct double sum otherwise.
Spectrum dft2d(const Tensor& image);
/// Direct evaluation of the transform definition, O(H²W²) per channel.
Spectrum dft2d_direct(const Tensor& image);
/// Inverse transform, keeping the real part.
Tensor idft2d(const Spectrum& spec);

AmpPhase amp_phase(const Spectrum& spec);
/// re = A cos P, im = A sin P; exact inverse of amp_phase.
Spectrum reconstruct(const Tensor& amplitude, const Tensor& phase);

/// Draws λ in [0, eta). One draw per image.
double sample_lambda(const SpecMixConfig& cfg, SplitMix64& rng);

/// Mixes amplitudes (1-λ)A(x) + λA(x_ref), keeps the phase of x. No clamping.
Tensor specmix_unclamped(const Tensor& x, const Tensor& x_ref, double lambda);
/// specmix_unclamped followed by clamping pixels to [0,1].
Tensor specmix(const Tensor& x, const Tensor& x_ref, double lambda);

/// Bins whose coefficient norm falls below this contribute nothing to the phase loss.
inline constexpr double kPhaseNormEps = 1e-8;

/// Negative sum over bins and channels of the cosine between the spectra of
/// `target` (constant) and `generated` (differentiable). Accepts [C,H,W] or
/// [B,C,H,W]; batched input is averaged over B.
Tensor phase_consistency_loss(const Tensor& target, const Tensor& generated);

}  // namespace gda
