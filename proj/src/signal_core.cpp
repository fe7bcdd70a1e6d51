#include "fedweight/signal_core.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fedweight/error.hpp"

namespace fedweight {

namespace {

using cplx = std::complex<double>;

void fft_inplace(std::vector<cplx>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    std::vector<cplx> tw(half);
    for (std::size_t k = 0; k < half; ++k) {
      tw[k] = std::polar(1.0, ang * static_cast<double>(k));
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + half] * tw[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

// |X_k|^2 / n for k = 0..pad_to/2 of the zero-padded input.
std::vector<double> one_sided_power(std::span<const double> x,
                                    std::size_t pad_to) {
  const std::size_t bins = pad_to / 2 + 1;
  std::vector<double> power(bins);
  const double norm = 1.0 / static_cast<double>(x.size());
  if (std::has_single_bit(pad_to)) {
    std::vector<cplx> buf(pad_to);
    std::copy(x.begin(), x.end(), buf.begin());
    fft_inplace(buf);
    for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(buf[k]) * norm;
  } else {
    for (std::size_t k = 0; k < bins; ++k) {
      cplx acc{};
      const double w = -2.0 * std::numbers::pi * static_cast<double>(k) /
                       static_cast<double>(pad_to);
      for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x[i] * std::polar(1.0, w * static_cast<double>(i));
      }
      power[k] = std::norm(acc) * norm;
    }
  }
  return power;
}

std::vector<double> demeaned(std::span<const double> x) {
  const double mean =
      std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v -= mean;
  return out;
}

std::vector<cplx> poly_from_roots(const std::vector<cplx>& roots) {
  std::vector<cplx> c{1.0};
  for (const cplx& r : roots) {
    std::vector<cplx> next(c.size() + 1);
    for (std::size_t i = 0; i < c.size(); ++i) {
      next[i] += c[i];
      next[i + 1] -= c[i] * r;
    }
    c = std::move(next);
  }
  return c;
}

// Direct form II transposed, state of length max(len) - 1.
std::vector<double> lfilter(const FilterCoefficients& f,
                            std::span<const double> x,
                            std::vector<double> state) {
  const std::size_t m = state.size();
  std::vector<double> y(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double xn = x[n];
    const double yn = f.b[0] * xn + (m > 0 ? state[0] : 0.0);
    for (std::size_t i = 0; i + 1 < m; ++i) {
      state[i] = f.b[i + 1] * xn + state[i + 1] - f.a[i + 1] * yn;
    }
    if (m > 0) state[m - 1] = f.b[m] * xn - f.a[m] * yn;
    y[n] = yn;
  }
  return y;
}

// Steady-state state for a unit step, as (I - A') zi = b[1:] - a[1:] * b[0].
std::vector<double> lfilter_zi(const FilterCoefficients& f) {
  const std::size_t m = f.a.size() - 1;
  std::vector<std::vector<double>> mat(m, std::vector<double>(m, 0.0));
  std::vector<double> rhs(m);
  for (std::size_t i = 0; i < m; ++i) {
    mat[i][i] = 1.0;
    mat[i][0] += f.a[i + 1];
    if (i + 1 < m) mat[i][i + 1] -= 1.0;
    rhs[i] = f.b[i + 1] - f.a[i + 1] * f.b[0];
  }
  // Gaussian elimination with partial pivoting; m is tiny.
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(mat[r][col]) > std::abs(mat[piv][col])) piv = r;
    }
    std::swap(mat[col], mat[piv]);
    std::swap(rhs[col], rhs[piv]);
    for (std::size_t r = col + 1; r < m; ++r) {
      const double factor = mat[r][col] / mat[col][col];
      for (std::size_t c = col; c < m; ++c) mat[r][c] -= factor * mat[col][c];
      rhs[r] -= factor * rhs[col];
    }
  }
  std::vector<double> zi(m);
  for (std::size_t i = m; i-- > 0;) {
    double acc = rhs[i];
    for (std::size_t c = i + 1; c < m; ++c) acc -= mat[i][c] * zi[c];
    zi[i] = acc / mat[i][i];
  }
  return zi;
}

std::vector<double> scaled(const std::vector<double>& v, double s) {
  std::vector<double> out(v);
  for (double& x : out) x *= s;
  return out;
}

void validate_spec(const BandpassSpec& spec) {
  if (!(spec.fs > 0.0) || !(spec.low_hz > 0.0) || !(spec.low_hz < spec.high_hz) ||
      !(spec.high_hz < spec.fs / 2.0)) {
    throw InvalidArgument("invalid band edges");
  }
  if (spec.order < 1) throw InvalidArgument("filter order must be >= 1");
}

}  // namespace

PpgTrace::PpgTrace(std::vector<double> samples, double fs)
    : samples_(std::move(samples)), fs_(fs) {
  if (samples_.empty()) throw InvalidArgument("trace must be nonempty");
  if (!(fs_ > 0.0) || !std::isfinite(fs_)) {
    throw InvalidArgument("sampling rate must be positive");
  }
  for (double v : samples_) {
    if (!std::isfinite(v)) throw InvalidArgument("trace contains non-finite samples");
  }
}

PpgTrace cumulative_sum(const PpgTrace& trace) {
  std::vector<double> out(trace.size());
  std::partial_sum(trace.samples().begin(), trace.samples().end(), out.begin());
  return {std::move(out), trace.fs()};
}

PpgTrace trend(const PpgTrace& trace, double lambda) {
  const std::size_t n = trace.size();
  if (n < 3) throw InvalidArgument("trace too short to detrend");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");

  // Bands of A = I + lambda^2 D2'D2, accumulated row by row of D2.
  const double l2 = lambda * lambda;
  std::vector<double> d0(n, 1.0), d1(n, 0.0), d2(n, 0.0);
  constexpr double row[3] = {1.0, -2.0, 1.0};
  for (std::size_t r = 0; r + 2 < n; ++r) {
    for (int i = 0; i < 3; ++i) {
      d0[r + i] += l2 * row[i] * row[i];
      if (i < 2) d1[r + i] += l2 * row[i] * row[i + 1];
    }
    d2[r] += l2 * row[0] * row[2];
  }

  // Banded Cholesky, L has the main diagonal and two subdiagonals.
  std::vector<double> l0(n), l1(n, 0.0), l2v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= 2) l2v[i] = d2[i - 2] / l0[i - 2];
    if (i >= 1) {
      const double prev = (i >= 2) ? l2v[i] * l1[i - 1] : 0.0;
      l1[i] = (d1[i - 1] - prev) / l0[i - 1];
    }
    l0[i] = std::sqrt(d0[i] - l1[i] * l1[i] - l2v[i] * l2v[i]);
  }

  const auto& z = trace.samples();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = z[i];
    if (i >= 1) acc -= l1[i] * y[i - 1];
    if (i >= 2) acc -= l2v[i] * y[i - 2];
    y[i] = acc / l0[i];
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double acc = y[i];
    if (i + 1 < n) acc -= l1[i + 1] * x[i + 1];
    if (i + 2 < n) acc -= l2v[i + 2] * x[i + 2];
    x[i] = acc / l0[i];
  }
  return {std::move(x), trace.fs()};
}

PpgTrace detrend(const PpgTrace& trace, double lambda) {
  const PpgTrace t = trend(trace, lambda);
  std::vector<double> out(trace.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = trace.samples()[i] - t.samples()[i];
  }
  return {std::move(out), trace.fs()};
}

FilterCoefficients design_butterworth_bandpass(const BandpassSpec& spec) {
  validate_spec(spec);
  const int order = spec.order;
  const double fs2 = 2.0 * spec.fs;
  const double wl = fs2 * std::tan(std::numbers::pi * spec.low_hz / spec.fs);
  const double wh = fs2 * std::tan(std::numbers::pi * spec.high_hz / spec.fs);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  // Analog prototype poles on the left half of the unit circle.
  std::vector<cplx> proto;
  for (int m = -order + 1; m < order; m += 2) {
    proto.push_back(-std::polar(1.0, std::numbers::pi * m / (2.0 * order)));
  }

  // Lowpass -> bandpass: each prototype pole splits into a pair, and
  // `order` zeros land at s = 0.
  std::vector<cplx> poles;
  for (const cplx& p : proto) {
    const cplx half = p * bw / 2.0;
    poles.push_back(half + std::sqrt(half * half - w0sq));
  }
  for (const cplx& p : proto) {
    const cplx half = p * bw / 2.0;
    poles.push_back(half - std::sqrt(half * half - w0sq));
  }
  double gain = std::pow(bw, order);

  // Bilinear transform. Zeros at s = 0 map to z = 1; the degree surplus
  // of the poles maps to z = -1.
  std::vector<cplx> zz(order, cplx{1.0, 0.0});
  zz.insert(zz.end(), order, cplx{-1.0, 0.0});
  std::vector<cplx> pz;
  cplx denom{1.0, 0.0};
  for (const cplx& p : poles) {
    pz.push_back((fs2 + p) / (fs2 - p));
    denom *= (fs2 - p);
  }
  gain *= std::pow(fs2, order) / denom.real();
  // The imaginary part of denom is rounding noise: poles come in conjugates.

  const std::vector<cplx> bc = poly_from_roots(zz);
  const std::vector<cplx> ac = poly_from_roots(pz);
  FilterCoefficients out;
  for (const cplx& c : bc) out.b.push_back(gain * c.real());
  for (const cplx& c : ac) out.a.push_back(c.real());
  return out;
}

std::complex<double> frequency_response(const FilterCoefficients& coeffs,
                                        double f_hz, double fs) {
  const double w = 2.0 * std::numbers::pi * f_hz / fs;
  cplx num{}, den{};
  for (std::size_t k = 0; k < coeffs.b.size(); ++k) {
    num += coeffs.b[k] * std::polar(1.0, -w * static_cast<double>(k));
  }
  for (std::size_t k = 0; k < coeffs.a.size(); ++k) {
    den += coeffs.a[k] * std::polar(1.0, -w * static_cast<double>(k));
  }
  return num / den;
}

std::vector<double> filtfilt(const FilterCoefficients& coeffs,
                             std::span<const double> x) {
  const std::size_t ntaps = std::max(coeffs.a.size(), coeffs.b.size());
  const std::size_t padlen = 3 * ntaps;
  const std::size_t n = x.size();
  if (n <= padlen) {
    throw InvalidArgument("trace too short for zero-phase filtering");
  }
  FilterCoefficients f = coeffs;
  f.b.resize(ntaps, 0.0);
  f.a.resize(ntaps, 0.0);

  std::vector<double> ext;
  ext.reserve(n + 2 * padlen);
  for (std::size_t i = padlen; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= padlen; ++i) {
    ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);
  }

  const std::vector<double> zi = lfilter_zi(f);
  std::vector<double> y = lfilter(f, ext, scaled(zi, ext.front()));
  std::reverse(y.begin(), y.end());
  y = lfilter(f, y, scaled(zi, y.front()));
  std::reverse(y.begin(), y.end());
  return {y.begin() + static_cast<std::ptrdiff_t>(padlen),
          y.end() - static_cast<std::ptrdiff_t>(padlen)};
}

PpgTrace butterworth_bandpass(const PpgTrace& trace, const BandpassSpec& spec) {
  BandpassSpec s = spec;
  s.fs = trace.fs();
  const FilterCoefficients f = design_butterworth_bandpass(s);
  return {filtfilt(f, trace.samples()), trace.fs()};
}

PowerSpectrum power_spectrum(const PpgTrace& trace, std::size_t pad_to) {
  if (pad_to < trace.size()) {
    throw InvalidArgument("pad_to must be >= trace length");
  }
  const std::vector<double> x = demeaned(trace.samples());
  PowerSpectrum out;
  out.power = one_sided_power(x, pad_to);
  out.freqs.resize(out.power.size());
  for (std::size_t k = 0; k < out.freqs.size(); ++k) {
    out.freqs[k] = static_cast<double>(k) * trace.fs() / static_cast<double>(pad_to);
  }
  return out;
}

std::size_t spectrum_pad_length(std::size_t n, double fs, double max_bin_bpm) {
  if (!(max_bin_bpm > 0.0)) throw InvalidArgument("bin width must be positive");
  const auto min_len = static_cast<std::size_t>(std::ceil(60.0 * fs / max_bin_bpm));
  return std::bit_ceil(std::max(n, min_len));
}

double estimate_hr(const PpgTrace& trace, double hr_min_bpm, double hr_max_bpm,
                   double max_bin_bpm) {
  if (!(hr_min_bpm > 0.0) || !(hr_min_bpm < hr_max_bpm)) {
    throw InvalidArgument("invalid HR range");
  }
  if (trace.duration_s() < 2.0) {
    throw InvalidArgument("trace must be at least 2 s long");
  }
  const PowerSpectrum spec =
      power_spectrum(trace, spectrum_pad_length(trace.size(), trace.fs(), max_bin_bpm));
  const double lo = hr_min_bpm / 60.0;
  const double hi = hr_max_bpm / 60.0;
  std::size_t best = spec.freqs.size();
  for (std::size_t k = 0; k < spec.freqs.size(); ++k) {
    if (spec.freqs[k] < lo || spec.freqs[k] > hi) continue;
    if (best == spec.freqs.size() || spec.power[k] > spec.power[best]) best = k;
  }
  if (best == spec.freqs.size()) throw InvalidArgument("HR band outside Nyquist");
  return 60.0 * spec.freqs[best];
}

SnrEstimate snr_db(const PpgTrace& trace, double hr_bpm, const SnrConfig& config) {
  if (!(hr_bpm > 40.0) || !(hr_bpm < 150.0)) {
    throw InvalidArgument("hr_bpm must lie in (40, 150)");
  }
  // Kaiser taper whose main lobe half-width equals the template half-width,
  // so a clean tone at hr_bpm leaks little energy outside the template.
  const std::size_t n = trace.size();
  std::vector<double> x = demeaned(trace.samples());
  if (n > 1) {
    const double beta = std::numbers::pi * trace.duration_s() *
                        config.template_halfwidth_bpm / 60.0;
    const double norm = std::cyl_bessel_i(0.0, beta);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
      x[i] *= std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    }
  }
  const std::size_t pad = spectrum_pad_length(n, trace.fs());
  const std::vector<double> power = one_sided_power(x, pad);

  double p_in = 0.0, p_out = 0.0;
  for (std::size_t k = 0; k < power.size(); ++k) {
    const double bpm = 60.0 * static_cast<double>(k) * trace.fs() / static_cast<double>(pad);
    const bool in_template =
        std::abs(bpm - hr_bpm) <= config.template_halfwidth_bpm ||
        std::abs(bpm - 2.0 * hr_bpm) <= config.template_halfwidth_bpm;
    if (in_template) {
      p_in += power[k];
    } else if (bpm >= config.band_low_bpm && bpm <= config.band_high_bpm) {
      p_out += power[k];
    }
  }
  if (p_out <= 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(p_in / p_out), false};
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw InvalidArgument("length mismatch");
  if (pred.empty()) throw InvalidArgument("mae of empty sequences");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred[i] - truth[i]);
  return acc / static_cast<double>(pred.size());
}

double pearson(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw InvalidArgument("length mismatch");
  if (pred.size() < 2) throw InvalidArgument("pearson needs at least two pairs");
  const double n = static_cast<double>(pred.size());
  const double mp = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  const double mt = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i] - mp;
    const double dy = truth[i] - mt;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidArgument("undefined correlation");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace fedweight
