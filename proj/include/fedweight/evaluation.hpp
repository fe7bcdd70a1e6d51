#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedweight/federation.hpp"
#include "fedweight/model.hpp"
#include "fedweight/signal_core.hpp"
#include "fedweight/synth.hpp"

namespace fedweight {

/// Where the reference heart rate of a window comes from.
enum class TruthHr {
  Programmed,  // mean of the generator's hr profile over the window
  Estimated,   // spectral peak of the reference trace
};

struct EvalOptions {
  double lambda = 10.0;
  std::size_t window = 360;
  /// Longer traces are detrended window by window.
  std::size_t global_detrend_limit = 2000;
  double band_low_hz = 0.75;
  double band_high_hz = 2.5;
  int band_order = 2;
  double hr_min_bpm = 40.0;
  double hr_max_bpm = 150.0;
  /// Spectral bin width used for HR peaks.
  double hr_bin_bpm = 0.05;
  SnrConfig snr;
  TruthHr truth = TruthHr::Programmed;
};

struct EvalWindow {
  int subject_id = 0;
  int window_index = 0;
  double pred_hr_bpm = 0.0;
  double true_hr_bpm = 0.0;
  double snr_db = 0.0;
  bool snr_degenerate = false;
};

struct RunScore {
  double mae_bpm = 0.0;
  /// Mean over windows with a finite SNR.
  double snr_db = 0.0;
  /// Missing when either HR series is constant.
  std::optional<double> pearson_r;
  int n_windows = 0;
};

struct MetricsRow {
  NoiseTarget noise_target = NoiseTarget::None;
  double noise_level = 0.0;
  AggregationPolicy policy = AggregationPolicy::FedAvg;
  std::uint64_t seed = 0;
  double mae_bpm = 0.0;
  double snr_db = 0.0;
  std::optional<double> pearson_r;
  int n_windows = 0;
  /// "ok" or "failed".
  std::string status = "ok";
};

/// Model output for every difference frame: a derivative trace of length
/// frames.t - 1 at frames.fps. Needs at least 21 frames.
PpgTrace predict_trace(const ModelParams& params, const FrameSequence& frames);

/// Cumulative sum, detrend, split into full windows, bandpass each window.
std::vector<PpgTrace> postprocess_windows(const PpgTrace& derivative, const EvalOptions& options = {});

/// Scores every full window of `pred` against the reference. `true_hr`
/// holds the programmed HR per sample (same length as the traces) and is
/// only read in TruthHr::Programmed mode.
std::vector<EvalWindow> postprocess_and_score(const PpgTrace& pred, const PpgTrace& truth,
                                              std::span<const double> true_hr, int subject_id,
                                              const EvalOptions& options = {});

RunScore score_windows(std::span<const EvalWindow> windows);

/// Predicts and scores every held-out subject, pooling windows.
RunScore score_run(const ModelParams& params, std::span<const SubjectRecord> heldout,
                   const EvalOptions& options = {});

const char* to_string(NoiseTarget t);
NoiseTarget parse_noise_target(const std::string& s);

std::string metrics_csv_header();
std::string to_csv_line(const MetricsRow& row);

}  // namespace fedweight
