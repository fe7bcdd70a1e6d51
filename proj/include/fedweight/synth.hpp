#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "fedweight/signal_core.hpp"

namespace fedweight {

enum class NoiseTarget { None, Video, Label };

/// Noise levels are 8-bit intensity units; frames live on [0, 1].
inline constexpr double kVideoNoiseUnit = 1.0 / 255.0;

/// T x H x W x C intensities, row-major with channel fastest.
struct FrameSequence {
  int t = 0;
  int h = 0;
  int w = 0;
  int c = 3;
  double fps = 30.0;
  std::vector<float> data;

  std::size_t pixels_per_frame() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) *
           static_cast<std::size_t>(c);
  }
  std::span<const float> frame(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * pixels_per_frame(),
            pixels_per_frame()};
  }
  float at(int ti, int y, int x, int ch) const {
    return data[((static_cast<std::size_t>(ti) * h + y) * w + x) * c + ch];
  }

  bool operator==(const FrameSequence&) const = default;
};

struct SubjectRecord {
  int subject_id = 0;
  FrameSequence frames;
  /// Standardized first difference of the pulse; length frames.t - 1.
  PpgTrace label{{0.0}, 30.0};
  /// Equal-length segments of constant heart rate over the recording.
  std::vector<double> hr_profile;
  /// Programmed HR for every label sample.
  std::vector<double> true_hr_bpm;
  double sigma_video = 0.0;
  double sigma_label = 0.0;

  bool operator==(const SubjectRecord&) const = default;
};

struct NoiseConfig {
  double experiment_level = 0.0;
  double subject_std = 0.1;
  NoiseTarget target = NoiseTarget::Video;
  std::uint64_t seed = 0;
};

/// Appearance and nuisance parameters of the synthetic face patch.
struct SynthConfig {
  std::array<double, 3> skin_base{0.70, 0.50, 0.40};
  /// Per-subject multiplicative jitter of skin_base, uniform in +/- this.
  double skin_jitter = 0.08;
  double pulse_amplitude = 2.0 / 255.0;
  std::array<double, 3> channel_weights{0.6, 1.0, 0.4};
  double second_harmonic = 0.5;
  /// Relative amplitude of the zero-mean periodic skin texture.
  double texture_amplitude = 0.10;
  int texture_components = 3;
  /// Peak in-band head motion, in pixels, that shifts the texture.
  double motion_amplitude_px = 0.0;
  int motion_components = 2;
  double motion_low_hz = 0.75;
  double motion_high_hz = 2.5;
  /// In-band multiplicative illumination flicker. Each subject draws a
  /// strength in [0.5, 1.5] times this; channels are scaled by
  /// illumination_weights, so the flicker is mostly chromatic.
  double illumination_amplitude = 0.0;
  std::array<double, 3> illumination_weights{1.0, 0.2, 1.0};
  int illumination_components = 2;
};

struct FrameSize {
  int h = 8;
  int w = 8;
};

std::vector<double> sample_subject_noise(const NoiseConfig& config, int n_subjects);

/// hr_profile expanded to one value per sample over `n` samples.
std::vector<double> expand_hr_profile(std::span<const double> hr_profile, std::size_t n);

SubjectRecord generate_subject(int subject_id, double duration_s, double fps,
                               FrameSize hw, std::vector<double> hr_profile,
                               std::uint64_t rng_seed,
                               const SynthConfig& config = {});

/// Adds i.i.d. N(0, sigma) to every pixel of every frame, then clamps to [0, 1].
/// sigma is on the normalized intensity scale.
FrameSequence add_video_noise(const FrameSequence& frames, double sigma,
                              std::uint64_t rng_seed);

PpgTrace add_label_noise(const PpgTrace& label, double sigma, std::uint64_t rng_seed);

}  // namespace fedweight
