#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "fedweight/error.hpp"
#include "fedweight/rng.hpp"
#include "fedweight/signal_core.hpp"
#include "fedweight/synth.hpp"
#include "oracles.hpp"

using namespace fedweight;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> sine(double f, double fs, std::size_t n, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * kPi * f * static_cast<double>(i) / fs + phase);
  return x;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

std::vector<double> random_trace(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (double& v : x) v = rng.normal() * 3.0 + rng.uniform(-5.0, 5.0);
  return x;
}

}  // namespace

TEST_SUITE("signal_core") {

TEST_CASE("cumulative sum") {
  CHECK(cumulative_sum(PpgTrace({1, 1, 1}, 30)).samples() == std::vector<double>{1, 2, 3});
  CHECK(cumulative_sum(PpgTrace({0, 0, 0}, 30)).samples() == std::vector<double>{0, 0, 0});

  Rng rng(3);
  const auto x = random_trace(rng, 50);
  const auto c = cumulative_sum(PpgTrace(x, 30)).samples();
  for (std::size_t i = 1; i < x.size(); ++i) CHECK(c[i] - c[i - 1] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("trace validation") {
  CHECK_THROWS_AS(PpgTrace({}, 30), InvalidArgument);
  CHECK_THROWS_AS(PpgTrace({1.0}, 0.0), InvalidArgument);
  CHECK_THROWS_AS(PpgTrace({1.0, NAN}, 30), InvalidArgument);
}

TEST_CASE("detrend matches a dense solve") {
  std::vector<double> ramp(360);
  for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = static_cast<double>(i);
  const auto expect_trend = oracle::dense_trend(ramp, 10.0);
  const auto got = detrend(PpgTrace(ramp, 30), 10.0).samples();
  double expect_max = 0.0;
  for (std::size_t i = 0; i < ramp.size(); ++i) {
    const double expect = ramp[i] - expect_trend[i];
    expect_max = std::max(expect_max, std::abs(expect));
    CHECK(std::abs(got[i] - expect) < 1e-9);
  }
  CHECK(std::abs(max_abs(got) - expect_max) < 1e-9);

  Rng rng(11);
  const auto z = random_trace(rng, 120);
  for (double lambda : {0.5, 10.0, 300.0}) {
    const auto t_oracle = oracle::dense_trend(z, lambda);
    const auto t = trend(PpgTrace(z, 30), lambda).samples();
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(t[i] - t_oracle[i]) < 1e-9 * (1.0 + std::abs(z[i])));
  }
}

TEST_CASE("detrend edge cases") {
  Rng rng(5);
  const auto z = random_trace(rng, 100);
  CHECK(max_abs(detrend(PpgTrace(z, 30), 0.0).samples()) == 0.0);

  const double c = 123.5;
  const auto flat = detrend(PpgTrace(std::vector<double>(360, c), 30), 10.0).samples();
  CHECK(max_abs(flat) < 1e-9 * c);

  CHECK_THROWS_WITH_AS(detrend(PpgTrace({1, 2}, 30), 10.0), "trace too short to detrend", InvalidArgument);
  CHECK_THROWS_AS(detrend(PpgTrace({1, 2, 3}, 30), -1.0), InvalidArgument);
}

TEST_CASE("detrend decomposition and linearity") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const PpgTrace x(random_trace(rng, 360), 30);
    const PpgTrace y(random_trace(rng, 360), 30);
    const auto d = detrend(x, 10.0).samples();
    const auto t = trend(x, 10.0).samples();
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(std::abs(d[i] + t[i] - x.samples()[i]) <= 1e-9 * std::max(1.0, std::abs(x.samples()[i])));
    }

    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    std::vector<double> mix(360);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x.samples()[i] + b * y.samples()[i];
    const auto dm = detrend(PpgTrace(mix, 30), 10.0).samples();
    const auto dy = detrend(y, 10.0).samples();
    const double scale = max_abs(dm) + 1.0;
    for (std::size_t i = 0; i < dm.size(); ++i) CHECK(std::abs(dm[i] - (a * d[i] + b * dy[i])) <= 1e-9 * scale);
  }
}

TEST_CASE("butterworth design matches substitution oracle") {
  for (int order : {1, 2, 3, 4}) {
    CAPTURE(order);
    const auto got = design_butterworth_bandpass({0.75, 2.5, order, 30.0});
    const auto want = oracle::butter_bandpass_substitution(order, 0.75, 2.5, 30.0);
    REQUIRE(got.b.size() == static_cast<std::size_t>(2 * order + 1));
    REQUIRE(got.a.size() == want.a.size());
    for (std::size_t i = 0; i < want.a.size(); ++i) {
      CHECK(std::abs(got.b[i] - want.b[i]) < 1e-8);
      CHECK(std::abs(got.a[i] - want.a[i]) < 1e-8);
    }
  }
}

TEST_CASE("butterworth design matches frozen reference coefficients") {
  // Reference values from scipy.signal.butter(N, [0.75, 2.5], 'band', fs=30).
  const auto c2 = design_butterworth_bandpass({0.75, 2.5, 2, 30.0});
  const std::vector<double> b2{0.02649566776566331, 0.0, -0.05299133553132662, 0.0, 0.02649566776566331};
  const std::vector<double> a2{1.0, -3.345530383885989, 4.3253819313262785, -2.5702418396927422,
                               0.5956541945905177};
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(std::abs(c2.b[i] - b2[i]) < 1e-12);
    CHECK(std::abs(c2.a[i] - a2[i]) < 1e-12);
  }
  const auto c3 = design_butterworth_bandpass({0.75, 2.5, 3, 30.0});
  const std::vector<double> b3{0.00440360999645738, 0.0, -0.01321082998937214, 0.0,
                               0.01321082998937214, 0.0, -0.00440360999645738};
  const std::vector<double> a3{1.0, -5.0530083837192326, 10.84200617232669, -12.650873770683999,
                               8.470450074887708, -3.086592294046163, 0.47840815065569786};
  for (std::size_t i = 0; i < 7; ++i) {
    CHECK(std::abs(c3.b[i] - b3[i]) < 1e-12);
    CHECK(std::abs(c3.a[i] - a3[i]) < 1e-12);
  }
}

TEST_CASE("butterworth band edges and stopband") {
  const auto c = design_butterworth_bandpass({0.75, 2.5, 2, 30.0});
  for (double f : {0.75, 2.5}) {
    const double db = 20.0 * std::log10(oracle::magnitude(c.b, c.a, f, 30.0));
    CHECK(std::abs(db + 3.0103) < 0.25);
    CHECK(std::abs(std::abs(frequency_response(c, f, 30.0)) - oracle::magnitude(c.b, c.a, f, 30.0)) < 1e-12);
  }
  // One pass gives about -18 dB at 5 Hz; the forward-backward filter squares it.
  CHECK(20.0 * std::log10(oracle::magnitude(c.b, c.a, 5.0, 30.0)) < -18.0);
  CHECK(40.0 * std::log10(oracle::magnitude(c.b, c.a, 5.0, 30.0)) < -20.0);
  CHECK(oracle::magnitude(c.b, c.a, 0.0, 30.0) < 1e-12);

  CHECK_THROWS_WITH_AS(design_butterworth_bandpass({2.5, 0.75, 2, 30.0}), "invalid band edges", InvalidArgument);
  CHECK_THROWS_AS(design_butterworth_bandpass({0.75, 15.0, 2, 30.0}), InvalidArgument);
  CHECK_THROWS_AS(design_butterworth_bandpass({0.0, 2.5, 2, 30.0}), InvalidArgument);
  CHECK_THROWS_AS(design_butterworth_bandpass({0.75, 2.5, 0, 30.0}), InvalidArgument);
}

TEST_CASE("filtfilt matches frozen reference output") {
  // scipy.signal.filtfilt(b, a, x) with default padding.
  std::vector<double> x(64);
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double t = static_cast<double>(n);
    x[n] = std::sin(2 * kPi * 1.2 * t / 30) + 0.3 * std::cos(2 * kPi * 4 * t / 30) + 0.01 * t;
  }
  const auto y = filtfilt(design_butterworth_bandpass({0.75, 2.5, 2, 30.0}), x);
  REQUIRE(y.size() == 64);
  const std::vector<std::pair<std::size_t, double>> ref{
      {0, 0.0702262202286618}, {1, 0.2101714705624565},  {10, 0.5138219752759275},
      {31, 1.0487365748183979}, {50, -0.158523118312208}, {62, 0.5068549119965489},
      {63, 0.22170513940953385}};
  for (auto [i, v] : ref) {
    CAPTURE(i);
    CHECK(std::abs(y[i] - v) < 1e-9);
  }
}

TEST_CASE("bandpass behaviour on simple inputs") {
  const BandpassSpec spec{};
  const auto dc = butterworth_bandpass(PpgTrace(std::vector<double>(900, 1.0), 30), spec).samples();
  CHECK(max_abs(dc) < 1e-6);

  // Zero-phase, so the output amplitude is |H|^2 times the input amplitude.
  const double f = 1.37;
  const auto in = sine(f, 30, 900);
  const auto out = butterworth_bandpass(PpgTrace(in, 30), spec).samples();
  const auto c = design_butterworth_bandpass(spec);
  const double gain = std::pow(oracle::magnitude(c.b, c.a, f, 30.0), 2);
  std::vector<double> inner(out.begin() + 60, out.end() - 60);
  CHECK(std::abs(max_abs(inner) - gain) < 0.02 * gain);
  CHECK(std::abs(max_abs(inner) - 1.0) < 0.02);

  const auto hf = butterworth_bandpass(PpgTrace(sine(5.0, 30, 900), 30), spec).samples();
  std::vector<double> hf_inner(hf.begin() + 60, hf.end() - 60);
  CHECK(20 * std::log10(max_abs(hf_inner)) < -20.0);

  // Cross-correlation of input and output peaks at lag 0.
  int best_lag = 99;
  double best = -1e300;
  for (int lag = -10; lag <= 10; ++lag) {
    double acc = 0.0;
    for (int i = 100; i < 800; ++i) acc += in[static_cast<std::size_t>(i)] * out[static_cast<std::size_t>(i + lag)];
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  CHECK(best_lag == 0);

  CHECK_THROWS_AS(butterworth_bandpass(PpgTrace({1, 2, 3, 4, 5}, 30), spec), InvalidArgument);
}

TEST_CASE("bandpass is linear") {
  Rng rng(23);
  const auto x = random_trace(rng, 400);
  const auto y = random_trace(rng, 400);
  std::vector<double> mix(400);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.0 * x[i] - 0.5 * y[i];
  const BandpassSpec spec{};
  const auto fx = butterworth_bandpass(PpgTrace(x, 30), spec).samples();
  const auto fy = butterworth_bandpass(PpgTrace(y, 30), spec).samples();
  const auto fm = butterworth_bandpass(PpgTrace(mix, 30), spec).samples();
  for (std::size_t i = 0; i < mix.size(); ++i) CHECK(std::abs(fm[i] - (2.0 * fx[i] - 0.5 * fy[i])) < 1e-9);
}

TEST_CASE("power spectrum") {
  const auto s = power_spectrum(PpgTrace(sine(1.2, 30, 360), 30), 8192);
  REQUIRE(s.freqs.size() == s.power.size());
  CHECK(s.freqs.size() == 4097);
  CHECK(s.freqs.back() == doctest::Approx(15.0));
  for (std::size_t i = 1; i < s.freqs.size(); ++i) CHECK(s.freqs[i] > s.freqs[i - 1]);
  const auto peak = std::max_element(s.power.begin(), s.power.end()) - s.power.begin();
  CHECK(std::abs(s.freqs[static_cast<std::size_t>(peak)] - 1.2) <= 30.0 / 8192);

  const auto flat = power_spectrum(PpgTrace(std::vector<double>(100, 7.0), 30), 128);
  CHECK(max_abs(flat.power) < 1e-18);

  // Both tones land exactly on bins, so the power ratio is the squared amplitude ratio.
  std::vector<double> two(360);
  for (std::size_t i = 0; i < two.size(); ++i) {
    const double t = static_cast<double>(i) / 30.0;
    two[i] = std::sin(2 * kPi * 1.0 * t) + 0.5 * std::sin(2 * kPi * 2.0 * t);
  }
  const auto s2 = power_spectrum(PpgTrace(two, 30), 360);
  const double ratio = s2.power[12] / s2.power[24];
  CHECK(ratio == doctest::Approx(4.0).epsilon(1e-6));

  CHECK_THROWS_AS(power_spectrum(PpgTrace(std::vector<double>(10, 1.0), 30), 8), InvalidArgument);
}

TEST_CASE("pad length gives the requested bin width") {
  CHECK(spectrum_pad_length(360, 30.0) == 4096);
  CHECK(30.0 / static_cast<double>(spectrum_pad_length(360, 30.0)) * 60.0 <= 0.5);
  CHECK(spectrum_pad_length(10000, 30.0) == 16384);
  CHECK(30.0 / static_cast<double>(spectrum_pad_length(360, 30.0, 0.05)) * 60.0 <= 0.05);
  CHECK_THROWS_AS(spectrum_pad_length(360, 30.0, 0.0), InvalidArgument);
}

TEST_CASE("estimate_hr") {
  CHECK(std::abs(estimate_hr(PpgTrace(sine(1.2, 30, 360), 30)) - 72.0) <= 0.5);

  auto mix = sine(0.5, 30, 360, 3.0);
  const auto hi = sine(1.5, 30, 360);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] += hi[i];
  CHECK(std::abs(estimate_hr(PpgTrace(mix, 30)) - 90.0) <= 0.5);

  const auto base = sine(1.43, 30, 360, 1.0, 0.3);
  const double hr = estimate_hr(PpgTrace(base, 30));
  for (double c : {1e-6, 0.37, 12.0, 4e5}) {
    std::vector<double> scaled(base);
    for (double& v : scaled) v *= c;
    CHECK(estimate_hr(PpgTrace(scaled, 30)) == hr);
  }

  CHECK_THROWS_AS(estimate_hr(PpgTrace(sine(1.2, 30, 30), 30)), InvalidArgument);
  CHECK_THROWS_WITH_AS(estimate_hr(PpgTrace(sine(1.2, 4, 40), 4), 130, 150), "HR band outside Nyquist",
                       InvalidArgument);
  CHECK_THROWS_AS(estimate_hr(PpgTrace(sine(1.2, 30, 360), 30), 100, 90), InvalidArgument);
}

TEST_CASE("estimate_hr on a clean synthetic subject") {
  const auto rec = generate_subject(0, 14.0, 30.0, {4, 4}, {100.0}, 77);
  const auto ppg = cumulative_sum(rec.label);
  const auto filtered = butterworth_bandpass(detrend(ppg, 10.0), {});
  CHECK(std::abs(estimate_hr(filtered) - 100.0) <= 1.0);
}

TEST_CASE("snr") {
  const auto clean = snr_db(PpgTrace(sine(1.2, 30, 360), 30), 72.0);
  CHECK_FALSE(clean.degenerate);
  CHECK(clean.db > 20.0);

  // White noise: expected SNR is the template share of the band, measured
  // by averaging many noise spectra with the same template.
  Rng rng(29);
  double in_sum = 0.0;
  std::vector<double> snrs;
  for (int k = 0; k < 40; ++k) {
    std::vector<double> w(360);
    for (double& v : w) v = rng.normal();
    snrs.push_back(snr_db(PpgTrace(w, 30), 72.0).db);
    in_sum += std::pow(10.0, snrs.back() / 10.0);
  }
  const double mean_ratio_db = 10.0 * std::log10(in_sum / 40.0);
  // Template covers 4 x 6 bpm out of the 210 bpm band.
  const double expect_db = 10.0 * std::log10(24.0 / (210.0 - 24.0));
  CHECK(mean_ratio_db < 0.0);
  CHECK(std::abs(mean_ratio_db - expect_db) < 1.5);

  // Equal power in and out of the template.
  auto eq = sine(1.2, 30, 360);
  const auto off = sine(1.7, 30, 360, 1.0, 0.4);
  for (std::size_t i = 0; i < eq.size(); ++i) eq[i] += off[i];
  CHECK(std::abs(snr_db(PpgTrace(eq, 30), 72.0).db) < 1.0);

  CHECK_THROWS_AS(snr_db(PpgTrace(sine(1.2, 30, 360), 30), 30.0), InvalidArgument);
}

TEST_CASE("snr falls as noise grows") {
  const auto s = sine(1.2, 30, 360);
  Rng rng(31);
  std::vector<double> w(360);
  for (double& v : w) v = rng.normal();
  double prev = 1e300;
  for (double amp : {0.05, 0.1, 0.2, 0.4, 0.8, 1.6}) {
    std::vector<double> x(s);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += amp * w[i];
    const double db = snr_db(PpgTrace(x, 30), 72.0).db;
    CHECK(db < prev);
    prev = db;
  }
}

TEST_CASE("mae") {
  CHECK(mae(std::vector<double>{72}, std::vector<double>{72}) == 0.0);
  CHECK(mae(std::vector<double>{70, 74}, std::vector<double>{72, 72}) == 2.0);
  CHECK(mae(std::vector<double>{60, 80, 100}, std::vector<double>{62, 79, 104}) == doctest::Approx(7.0 / 3.0));
  CHECK_THROWS_AS(mae(std::vector<double>{1, 2}, std::vector<double>{1}), InvalidArgument);
  CHECK_THROWS_AS(mae(std::vector<double>{}, std::vector<double>{}), InvalidArgument);
}

TEST_CASE("pearson") {
  const std::vector<double> x{3, 1, 4, 1, 5, 9, 2, 6};
  std::vector<double> neg(x);
  for (double& v : neg) v = -v;
  CHECK(pearson(x, x) == doctest::Approx(1.0));
  CHECK(pearson(x, neg) == doctest::Approx(-1.0));
  const std::vector<double> a{1, 2, 3}, b{1, 2, 4};
  CHECK(pearson(a, b) == doctest::Approx(oracle::pearson(a, b)).epsilon(1e-12));

  Rng rng(37);
  for (int k = 0; k < 20; ++k) {
    std::vector<double> p(30), q(30);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = rng.normal();
      q[i] = 0.3 * p[i] + rng.normal();
    }
    const double r = pearson(p, q);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(r == doctest::Approx(oracle::pearson(p, q)).epsilon(1e-10));
  }
  CHECK_THROWS_WITH_AS(pearson(std::vector<double>{1, 1, 1}, a), "undefined correlation", InvalidArgument);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), InvalidArgument);
}

}  // TEST_SUITE
