#include "gda/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace gda {

namespace {

using cd = std::complex<double>;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void require_chw(const Tensor& image, const char* op) {
  if (image.rank() != 3) throw ShapeError(std::string(op) + " expects [C,H,W], got " + shape_str(image.shape()));
}

// Angle 2π(num mod den)/den with the index reduced first for accuracy.
double angle(std::size_t num, std::size_t den) {
  return 2.0 * std::numbers::pi * static_cast<double>(num % den) / static_cast<double>(den);
}

// In-place iterative radix-2 transform with stride; sign -1 forward, +1 inverse.
void fft1d(cd* data, std::size_t n, std::size_t stride, int sign, std::vector<cd>& scratch) {
  scratch.resize(n);
  for (std::size_t i = 0; i < n; ++i) scratch[i] = data[i * stride];
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(scratch[i], scratch[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t start = 0; start < n; start += len)
      for (std::size_t k = 0; k < half; ++k) {
        const double a = angle(k * (n / len), n);
        const cd tw(std::cos(a), sign * std::sin(a));
        const cd u = scratch[start + k];
        const cd v = scratch[start + k + half] * tw;
        scratch[start + k] = u + v;
        scratch[start + k + half] = u - v;
      }
  }
  for (std::size_t i = 0; i < n; ++i) data[i * stride] = scratch[i];
}

void fft2d_plane(cd* plane, std::size_t h, std::size_t w, int sign) {
  std::vector<cd> scratch;
  for (std::size_t r = 0; r < h; ++r) fft1d(plane + r * w, w, 1, sign, scratch);
  for (std::size_t c = 0; c < w; ++c) fft1d(plane + c, h, w, sign, scratch);
}

void direct_plane(const cd* in, cd* out, std::size_t h, std::size_t w, int sign) {
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      cd acc(0.0, 0.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          // (yu/H + xv/W) reduced modulo 1 over the common denominator H*W
          const double a = angle(y * u * w + x * v * h, h * w);
          acc += in[y * w + x] * cd(std::cos(a), sign * std::sin(a));
        }
      out[u * w + v] = acc;
    }
}

std::vector<cd> transform(const std::vector<cd>& in, std::size_t planes, std::size_t h, std::size_t w, int sign,
                          bool force_direct) {
  std::vector<cd> out(in.size());
  const bool fast = !force_direct && is_pow2(h) && is_pow2(w);
  for (std::size_t p = 0; p < planes; ++p) {
    if (fast) {
      std::copy_n(in.begin() + p * h * w, h * w, out.begin() + p * h * w);
      fft2d_plane(out.data() + p * h * w, h, w, sign);
    } else {
      direct_plane(in.data() + p * h * w, out.data() + p * h * w, h, w, sign);
    }
  }
  return out;
}

Spectrum forward(const Tensor& image, bool force_direct) {
  require_chw(image, "dft2d");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<cd> buf(image.numel());
  const auto d = image.data();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = cd(d[i], 0.0);
  const auto out = transform(buf, c, h, w, -1, force_direct);
  std::vector<double> re(out.size()), im(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    re[i] = out[i].real();
    im[i] = out[i].imag();
  }
  return {Tensor::from_values(image.shape(), std::move(re)), Tensor::from_values(image.shape(), std::move(im))};
}

// DFT matrices cos(2π uh/n) and sin(2π uh/n), both symmetric.
std::pair<Tensor, Tensor> dft_matrices(std::size_t n) {
  std::vector<double> c(n * n), s(n * n);
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t k = 0; k < n; ++k) {
      const double a = angle(u * k, n);
      c[u * n + k] = std::cos(a);
      s[u * n + k] = std::sin(a);
    }
  return {Tensor::from_values({n, n}, std::move(c)), Tensor::from_values({n, n}, std::move(s))};
}

// Taped transform of [N,H,W]; returns (re, im) laid out as [N*W, H] (bin order v-major).
std::pair<Tensor, Tensor> taped_dft(const Tensor& planes) {
  const std::size_t n = planes.dim(0), h = planes.dim(1), w = planes.dim(2);
  const auto [cw, sw] = dft_matrices(w);
  const auto [ch, sh] = dft_matrices(h);
  const Tensor rows = reshape(planes, {n * h, w});
  const Tensor p = transpose(reshape(matmul(rows, cw), {n, h, w}), {0, 2, 1});
  const Tensor q = transpose(reshape(matmul(rows, sw), {n, h, w}), {0, 2, 1});
  const Tensor pt = reshape(p, {n * w, h});
  const Tensor qt = reshape(q, {n * w, h});
  Tensor re = matmul(pt, ch) - matmul(qt, sh);
  Tensor im = -(matmul(pt, sh) + matmul(qt, ch));
  return {re, im};
}

}  // namespace

Spectrum dft2d(const Tensor& image) { return forward(image, false); }
Spectrum dft2d_direct(const Tensor& image) { return forward(image, true); }

Tensor idft2d(const Spectrum& spec) {
  require_chw(spec.re, "idft2d");
  if (spec.re.shape() != spec.im.shape()) throw ShapeError("idft2d: real/imag shapes differ");
  const std::size_t c = spec.re.dim(0), h = spec.re.dim(1), w = spec.re.dim(2);
  std::vector<cd> buf(spec.re.numel());
  const auto re = spec.re.data();
  const auto im = spec.im.data();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = cd(re[i], im[i]);
  const auto out = transform(buf, c, h, w, +1, false);
  const double scale = 1.0 / static_cast<double>(h * w);
  std::vector<double> x(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) x[i] = out[i].real() * scale;
  return Tensor::from_values(spec.re.shape(), std::move(x));
}

AmpPhase amp_phase(const Spectrum& spec) {
  if (spec.re.shape() != spec.im.shape()) throw ShapeError("amp_phase: real/imag shapes differ");
  const auto re = spec.re.data();
  const auto im = spec.im.data();
  std::vector<double> a(re.size()), p(re.size());
  for (std::size_t i = 0; i < re.size(); ++i) {
    a[i] = std::hypot(re[i], im[i]);
    p[i] = std::atan2(im[i], re[i]);
    if (p[i] == -std::numbers::pi) p[i] = std::numbers::pi;  // atan2(-0, x<0)
  }
  return {Tensor::from_values(spec.re.shape(), std::move(a)), Tensor::from_values(spec.re.shape(), std::move(p))};
}

Spectrum reconstruct(const Tensor& amplitude, const Tensor& phase) {
  if (amplitude.shape() != phase.shape()) throw ShapeError("reconstruct: amplitude/phase shapes differ");
  const auto a = amplitude.data();
  const auto p = phase.data();
  std::vector<double> re(a.size()), im(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    re[i] = a[i] * std::cos(p[i]);
    im[i] = a[i] * std::sin(p[i]);
  }
  return {Tensor::from_values(amplitude.shape(), std::move(re)), Tensor::from_values(amplitude.shape(), std::move(im))};
}

double sample_lambda(const SpecMixConfig& cfg, SplitMix64& rng) {
  if (!(cfg.eta >= 0.0 && cfg.eta <= 1.0)) throw std::invalid_argument("SpecMix eta must lie in [0,1]");
  return cfg.eta * rng.uniform();
}

Tensor specmix_unclamped(const Tensor& x, const Tensor& x_ref, double lambda) {
  if (x.shape() != x_ref.shape())
    throw ShapeError("specmix shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(x_ref.shape()));
  const AmpPhase own = amp_phase(dft2d(x));
  const AmpPhase ref = amp_phase(dft2d(x_ref));
  const auto a = own.amplitude.data();
  const auto b = ref.amplitude.data();
  std::vector<double> mixed(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mixed[i] = (1.0 - lambda) * a[i] + lambda * b[i];
  return idft2d(reconstruct(Tensor::from_values(x.shape(), std::move(mixed)), own.phase));
}

Tensor specmix(const Tensor& x, const Tensor& x_ref, double lambda) {
  Tensor out = specmix_unclamped(x, x_ref, lambda);
  for (double& v : out.mutable_data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Tensor phase_consistency_loss(const Tensor& target, const Tensor& generated) {
  if (target.shape() != generated.shape())
    throw ShapeError("phase_consistency_loss shape mismatch: " + shape_str(target.shape()) + " vs " +
                     shape_str(generated.shape()));
  if (target.rank() != 3 && target.rank() != 4)
    throw ShapeError("phase_consistency_loss expects [C,H,W] or [B,C,H,W]");
  const std::size_t batch = target.rank() == 4 ? target.dim(0) : 1;
  const std::size_t h = target.dim(target.rank() - 2);
  const std::size_t w = target.dim(target.rank() - 1);
  const std::size_t planes = target.numel() / (h * w);

  Tensor t_re, t_im;
  {
    NoGradGuard guard;
    std::tie(t_re, t_im) = taped_dft(reshape(target.detach(), {planes, h, w}));
  }
  const auto [g_re, g_im] = taped_dft(reshape(generated, {planes, h, w}));

  const auto tr = t_re.data();
  const auto ti = t_im.data();
  const auto gr = g_re.data();
  const auto gi = g_im.data();
  std::vector<double> keep(tr.size());
  std::vector<double> t_norm(tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) {
    t_norm[i] = std::hypot(tr[i], ti[i]);
    keep[i] = (t_norm[i] >= kPhaseNormEps && std::hypot(gr[i], gi[i]) >= kPhaseNormEps) ? 1.0 : 0.0;
  }
  const Shape s = t_re.shape();
  const Tensor dot = g_re * t_re + g_im * t_im;
  const Tensor g_norm = sqrt(square(g_re) + square(g_im));
  const Tensor cosine = dot / (g_norm * Tensor::from_values(s, std::move(t_norm)));
  return mul_scalar(sum_all(mask(cosine, keep)), -1.0 / static_cast<double>(batch));
}

}  // namespace gda
