#include "fedweight/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "fedweight/error.hpp"

namespace fedweight {

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

PpgTrace predict_trace(const ModelParams& params, const FrameSequence& frames) {
  if (frames.t < 21) throw InvalidArgument("need at least 21 frames to predict");
  const FrameFeatures features = make_difference_frames(frames);
  return {forward(params, features.data), frames.fps};
}

std::vector<PpgTrace> postprocess_windows(const PpgTrace& derivative, const EvalOptions& options) {
  const std::size_t w = options.window;
  const std::size_t n = derivative.size();
  if (w < 3 || n < w) {
    throw InvalidArgument("trace of " + std::to_string(n) + " samples is shorter than one " +
                          std::to_string(w) + "-sample window");
  }
  const double fs = derivative.fs();
  const std::size_t n_windows = n / w;
  const PpgTrace integrated = cumulative_sum(derivative);

  std::vector<double> stationary;
  const bool global = n <= options.global_detrend_limit;
  if (global) stationary = detrend(integrated, options.lambda).samples();

  const BandpassSpec band{options.band_low_hz, options.band_high_hz, options.band_order, fs};
  std::vector<PpgTrace> out;
  out.reserve(n_windows);
  for (std::size_t k = 0; k < n_windows; ++k) {
    const auto first = static_cast<std::ptrdiff_t>(k * w);
    const auto last = static_cast<std::ptrdiff_t>((k + 1) * w);
    std::vector<double> seg;
    if (global) {
      seg.assign(stationary.begin() + first, stationary.begin() + last);
    } else {
      const auto& s = integrated.samples();
      seg = detrend(PpgTrace({s.begin() + first, s.begin() + last}, fs), options.lambda).samples();
    }
    out.push_back(butterworth_bandpass(PpgTrace(std::move(seg), fs), band));
  }
  return out;
}

std::vector<EvalWindow> postprocess_and_score(const PpgTrace& pred, const PpgTrace& truth,
                                              std::span<const double> true_hr, int subject_id,
                                              const EvalOptions& options) {
  if (pred.size() != truth.size()) throw InvalidArgument("prediction and reference differ in length");
  if (pred.fs() != truth.fs()) throw InvalidArgument("prediction and reference differ in sampling rate");
  if (options.truth == TruthHr::Programmed && true_hr.size() != truth.size()) {
    throw InvalidArgument("true_hr must have one value per sample");
  }
  const std::vector<PpgTrace> pw = postprocess_windows(pred, options);
  std::vector<PpgTrace> tw;
  if (options.truth == TruthHr::Estimated) tw = postprocess_windows(truth, options);

  std::vector<EvalWindow> out;
  for (std::size_t k = 0; k < pw.size(); ++k) {
    EvalWindow ew;
    ew.subject_id = subject_id;
    ew.window_index = static_cast<int>(k);
    ew.pred_hr_bpm = estimate_hr(pw[k], options.hr_min_bpm, options.hr_max_bpm, options.hr_bin_bpm);
    if (options.truth == TruthHr::Programmed) {
      const auto first = true_hr.begin() + static_cast<std::ptrdiff_t>(k * options.window);
      ew.true_hr_bpm = std::accumulate(first, first + static_cast<std::ptrdiff_t>(options.window), 0.0) /
                       static_cast<double>(options.window);
    } else {
      ew.true_hr_bpm = estimate_hr(tw[k], options.hr_min_bpm, options.hr_max_bpm, options.hr_bin_bpm);
    }
    const SnrEstimate snr = snr_db(pw[k], ew.true_hr_bpm, options.snr);
    ew.snr_db = snr.db;
    ew.snr_degenerate = snr.degenerate;
    out.push_back(ew);
  }
  return out;
}

RunScore score_windows(std::span<const EvalWindow> windows) {
  if (windows.empty()) throw InvalidArgument("no evaluation windows to score");
  std::vector<double> pred, truth;
  double snr_sum = 0.0;
  int snr_count = 0;
  for (const EvalWindow& w : windows) {
    pred.push_back(w.pred_hr_bpm);
    truth.push_back(w.true_hr_bpm);
    if (std::isfinite(w.snr_db)) {
      snr_sum += w.snr_db;
      ++snr_count;
    }
  }
  RunScore s;
  s.n_windows = static_cast<int>(windows.size());
  s.mae_bpm = mae(pred, truth);
  s.snr_db = snr_count > 0 ? snr_sum / snr_count : std::numeric_limits<double>::infinity();
  try {
    s.pearson_r = pearson(pred, truth);
  } catch (const InvalidArgument&) {
    s.pearson_r.reset();
  }
  return s;
}

RunScore score_run(const ModelParams& params, std::span<const SubjectRecord> heldout,
                   const EvalOptions& options) {
  if (heldout.empty()) throw InvalidArgument("no held-out subjects");
  std::vector<EvalWindow> all;
  for (const SubjectRecord& rec : heldout) {
    const PpgTrace pred = predict_trace(params, rec.frames);
    const auto ws = postprocess_and_score(pred, rec.label, rec.true_hr_bpm, rec.subject_id, options);
    all.insert(all.end(), ws.begin(), ws.end());
  }
  return score_windows(all);
}

const char* to_string(NoiseTarget t) {
  switch (t) {
    case NoiseTarget::None:
      return "none";
    case NoiseTarget::Video:
      return "video";
    case NoiseTarget::Label:
      return "label";
  }
  return "?";
}

NoiseTarget parse_noise_target(const std::string& s) {
  if (s == "video") return NoiseTarget::Video;
  if (s == "label") return NoiseTarget::Label;
  if (s == "none") return NoiseTarget::None;
  throw InvalidArgument("unknown noise target '" + s + "' (expected video or label)");
}

std::string metrics_csv_header() {
  return "noise_target,noise_level,policy,seed,mae_bpm,snr_db,pearson_r,n_windows,status";
}

std::string to_csv_line(const MetricsRow& row) {
  const bool ok = row.status == "ok";
  std::string line = std::string(to_string(row.noise_target)) + ',' + fmt(row.noise_level) + ',' +
                     to_string(row.policy) + ',' + std::to_string(row.seed) + ',';
  if (ok) {
    line += fmt(row.mae_bpm) + ',' + fmt(row.snr_db) + ',' +
            (row.pearson_r ? fmt(*row.pearson_r) : std::string()) + ',' +
            std::to_string(row.n_windows);
  } else {
    line += ",,,0";
  }
  line += ',' + row.status;
  return line;
}

}  // namespace fedweight
