#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace fedweight {

/// A uniformly sampled waveform. Samples are finite and nonempty; fs > 0.
class PpgTrace {
 public:
  PpgTrace(std::vector<double> samples, double fs);

  const std::vector<double>& samples() const { return samples_; }
  double fs() const { return fs_; }
  std::size_t size() const { return samples_.size(); }
  double duration_s() const { return static_cast<double>(samples_.size()) / fs_; }

  bool operator==(const PpgTrace&) const = default;

 private:
  std::vector<double> samples_;
  double fs_;
};

/// One-sided power spectrum over [0, fs/2].
struct PowerSpectrum {
  std::vector<double> freqs;  // Hz, strictly increasing
  std::vector<double> power;  // >= 0
};

struct BandpassSpec {
  double low_hz = 0.75;
  double high_hz = 2.5;
  int order = 2;
  double fs = 30.0;
};

/// Transfer-function coefficients, a[0] == 1.
struct FilterCoefficients {
  std::vector<double> b;
  std::vector<double> a;
};

struct SnrConfig {
  double template_halfwidth_bpm = 6.0;
  double band_low_bpm = 30.0;
  double band_high_bpm = 240.0;
};

struct SnrEstimate {
  double db = 0.0;
  /// Set when no power falls outside the template; db is then +inf.
  bool degenerate = false;
};

PpgTrace cumulative_sum(const PpgTrace& trace);

/// Smoothness-priors trend: solves (I + lambda^2 D2' D2) x = z.
PpgTrace trend(const PpgTrace& trace, double lambda);

/// Stationary part z - trend(z). Requires at least three samples.
PpgTrace detrend(const PpgTrace& trace, double lambda);

/// Digital Butterworth bandpass (analog prototype, lowpass-to-bandpass,
/// bilinear transform with prewarped edges). The result has 2*order + 1
/// coefficients in b and a.
FilterCoefficients design_butterworth_bandpass(const BandpassSpec& spec);

/// H(exp(j*2*pi*f/fs)).
std::complex<double> frequency_response(const FilterCoefficients& coeffs,
                                        double f_hz, double fs);

/// Zero-phase forward-backward filtering with odd reflection padding of
/// 3 * max(len(a), len(b)) samples and steady-state initial conditions.
std::vector<double> filtfilt(const FilterCoefficients& coeffs,
                             std::span<const double> x);

PpgTrace butterworth_bandpass(const PpgTrace& trace, const BandpassSpec& spec);

PowerSpectrum power_spectrum(const PpgTrace& trace, std::size_t pad_to);

/// Smallest power of two >= max(n, 60 * fs / max_bin_bpm); the default
/// gives a bin width of at most 0.5 bpm.
std::size_t spectrum_pad_length(std::size_t n, double fs, double max_bin_bpm = 0.5);

/// Heart rate in beats/min at the spectral peak within [hr_min, hr_max] bpm.
double estimate_hr(const PpgTrace& trace, double hr_min_bpm = 40.0,
                   double hr_max_bpm = 150.0, double max_bin_bpm = 0.5);

/// Template SNR around the fundamental and second harmonic of hr_bpm.
SnrEstimate snr_db(const PpgTrace& trace, double hr_bpm,
                   const SnrConfig& config = {});

double mae(std::span<const double> pred, std::span<const double> truth);
double pearson(std::span<const double> pred, std::span<const double> truth);

}  // namespace fedweight
