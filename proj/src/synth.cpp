#include "fedweight/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fedweight/error.hpp"
#include "fedweight/rng.hpp"

namespace fedweight {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Wave {
  double kx, ky, phase;
};

struct Sinusoid {
  double amp, freq, phase;
};

double eval(const std::vector<Sinusoid>& parts, double t) {
  double v = 0.0;
  for (const auto& s : parts) v += s.amp * std::sin(kTwoPi * s.freq * t + s.phase);
  return v;
}

}  // namespace

std::vector<double> sample_subject_noise(const NoiseConfig& config, int n_subjects) {
  if (n_subjects < 1) throw InvalidArgument("n_subjects must be >= 1");
  Rng rng(config.seed);
  std::vector<double> out(static_cast<std::size_t>(n_subjects));
  for (double& s : out) {
    s = std::max(0.0, rng.normal(config.experiment_level, config.subject_std));
  }
  return out;
}

std::vector<double> expand_hr_profile(std::span<const double> hr_profile, std::size_t n) {
  if (hr_profile.empty()) throw InvalidArgument("hr_profile must be nonempty");
  const std::size_t k = hr_profile.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = hr_profile[std::min(k - 1, i * k / n)];
  return out;
}

SubjectRecord generate_subject(int subject_id, double duration_s, double fps,
                               FrameSize hw, std::vector<double> hr_profile,
                               std::uint64_t rng_seed, const SynthConfig& config) {
  if (!(fps > 0.0)) throw InvalidArgument("fps must be positive");
  if (hw.h < 1 || hw.w < 1) throw InvalidArgument("frame size must be >= 1");
  if (duration_s * fps < 400.0) {
    throw InvalidArgument("duration too short: need at least 400 frames");
  }
  for (double hr : hr_profile) {
    if (!(hr > 0.0) || !std::isfinite(hr)) throw InvalidArgument("invalid hr_profile");
  }

  const int t_frames = static_cast<int>(std::lround(duration_s * fps)) + 1;
  const std::vector<double> hr_frames =
      expand_hr_profile(hr_profile, static_cast<std::size_t>(t_frames));

  Rng rng(rng_seed);
  const double phase0 = rng.uniform(0.0, kTwoPi);
  std::array<double, 3> base{};
  for (int c = 0; c < 3; ++c) {
    base[c] = config.skin_base[c] *
              (1.0 + rng.uniform(-config.skin_jitter, config.skin_jitter));
  }
  std::vector<Wave> texture;
  const bool has_texture = hw.h * hw.w >= 4 && config.texture_amplitude > 0.0;
  for (int k = 0; k < config.texture_components && has_texture; ++k) {
    // Integer wave numbers below the grid Nyquist give an exactly zero
    // spatial mean for every shift.
    const int max_kx = std::max(0, (hw.w - 1) / 2);
    const int max_ky = std::max(0, (hw.h - 1) / 2);
    int kx = max_kx > 0 ? 1 + static_cast<int>(rng.next() % max_kx) : 0;
    int ky = max_ky > 0 ? static_cast<int>(rng.next() % (max_ky + 1)) : 0;
    if (kx == 0 && ky == 0) ky = 1;
    texture.push_back({static_cast<double>(kx), static_cast<double>(ky),
                       rng.uniform(0.0, kTwoPi)});
  }
  std::array<std::vector<Sinusoid>, 2> motion;
  for (auto& axis : motion) {
    for (int j = 0; j < config.motion_components; ++j) {
      const double f = rng.uniform(config.motion_low_hz, config.motion_high_hz);
      axis.push_back({config.motion_amplitude_px / config.motion_components, f,
                      rng.uniform(0.0, kTwoPi)});
    }
  }

  std::vector<Sinusoid> flicker;
  const double strength = config.illumination_amplitude * rng.uniform(0.5, 1.5);
  for (int j = 0; j < config.illumination_components; ++j) {
    const double f = rng.uniform(config.motion_low_hz, config.motion_high_hz);
    flicker.push_back({strength / config.illumination_components, f, rng.uniform(0.0, kTwoPi)});
  }

  SubjectRecord rec;
  rec.subject_id = subject_id;
  rec.hr_profile = std::move(hr_profile);
  FrameSequence& fr = rec.frames;
  fr.t = t_frames;
  fr.h = hw.h;
  fr.w = hw.w;
  fr.c = 3;
  fr.fps = fps;
  fr.data.resize(static_cast<std::size_t>(t_frames) * fr.pixels_per_frame());

  std::vector<double> ppg(static_cast<std::size_t>(t_frames));
  double phase = phase0;
  for (int ti = 0; ti < t_frames; ++ti) {
    ppg[ti] = std::sin(phase) + config.second_harmonic * std::sin(2.0 * phase);
    phase += kTwoPi * hr_frames[ti] / 60.0 / fps;
  }

  const double tex_scale =
      texture.empty() ? 0.0 : config.texture_amplitude / static_cast<double>(texture.size());
  std::size_t idx = 0;
  for (int ti = 0; ti < t_frames; ++ti) {
    const double t = ti / fps;
    const double mx = eval(motion[0], t);
    const double my = eval(motion[1], t);
    const double light = eval(flicker, t);
    for (int y = 0; y < hw.h; ++y) {
      for (int x = 0; x < hw.w; ++x) {
        double pattern = 0.0;
        for (const Wave& wv : texture) {
          pattern += std::sin(kTwoPi * (wv.kx * (x - mx) / hw.w + wv.ky * (y - my) / hw.h) +
                              wv.phase);
        }
        for (int c = 0; c < 3; ++c) {
          const double v = base[c] * (1.0 + tex_scale * pattern) *
                               (1.0 + config.illumination_weights[c] * light) +
                           config.pulse_amplitude * config.channel_weights[c] * ppg[ti];
          fr.data[idx++] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }

  std::vector<double> diff(static_cast<std::size_t>(t_frames - 1));
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = ppg[i + 1] - ppg[i];
  const double n = static_cast<double>(diff.size());
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
  double var = 0.0;
  for (double d : diff) var += (d - mean) * (d - mean);
  const double sd = std::sqrt(var / n);
  for (double& d : diff) {
    d = static_cast<float>(sd > 0.0 ? (d - mean) / sd : 0.0);
  }
  rec.label = PpgTrace(std::move(diff), fps);
  rec.true_hr_bpm.assign(hr_frames.begin(), hr_frames.end() - 1);
  return rec;
}

FrameSequence add_video_noise(const FrameSequence& frames, double sigma,
                              std::uint64_t rng_seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
  FrameSequence out = frames;
  if (sigma == 0.0) return out;
  Rng rng(rng_seed);
  for (float& v : out.data) {
    const double noisy = static_cast<double>(v) + sigma * rng.normal();
    v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
  return out;
}

PpgTrace add_label_noise(const PpgTrace& label, double sigma, std::uint64_t rng_seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
  if (sigma == 0.0) return label;
  Rng rng(rng_seed);
  std::vector<double> out(label.samples());
  for (double& v : out) v = static_cast<float>(v + sigma * rng.normal());
  return {std::move(out), label.fs()};
}

}  // namespace fedweight
