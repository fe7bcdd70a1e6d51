#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fedweight/error.hpp"
#include "fedweight/evaluation.hpp"
#include "fedweight/federation.hpp"
#include "fedweight/synth.hpp"

namespace fedweight {

class ConfigError : public Error {
 public:
  ConfigError(std::string origin, const std::string& what)
      : Error(origin.empty() ? what : origin + ": " + what), origin_(std::move(origin)) {}
  /// "file:line" or "--flag"; empty when not tied to one setting.
  const std::string& origin() const { return origin_; }

 private:
  std::string origin_;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out = "fedweight_out";

  // dataset.*
  int subjects = 25;
  double duration_s = 60.0;
  double fps = 30.0;
  FrameSize frame;
  double hr_min_bpm = 75.0;
  double hr_max_bpm = 135.0;
  /// Constant-HR segments; 5 over 60 s lines them up with 360-frame windows.
  int hr_segments = 5;
  /// Pre-generated clean dataset; when empty subjects are generated per seed.
  std::filesystem::path dataset_path;

  SynthConfig synth;

  // noise.*
  NoiseTarget noise_target = NoiseTarget::Video;
  std::vector<double> levels{0.0, 0.5, 1.0, 1.5};
  double subject_std = 0.1;
  /// Intensity of one video noise level on the [0, 1] pixel scale.
  double video_unit = kVideoNoiseUnit;

  // model.*
  int hidden = kDefaultHidden;
  int window = kDefaultWindow;

  /// federation.*; aggregation and seed are set per cell.
  RoundConfig federation;

  // run.*
  std::vector<AggregationPolicy> policies{AggregationPolicy::FedAvg, AggregationPolicy::FedWeight};
  int repeats = 3;

  // eval.*
  double train_fraction = 0.8;
  EvalOptions eval;
};

/// A raw setting and where it came from.
struct Setting {
  std::string value;
  std::string origin;
};
using SettingMap = std::map<std::string, Setting>;

/// Parses "key = value" lines. '#' starts a comment, blank lines are
/// ignored, keys are dotted names. Errors carry "name:line".
SettingMap parse_config_text(const std::string& text, const std::string& source_name);
SettingMap load_config_file(const std::filesystem::path& path);

/// Every key accepted by apply_setting, in canonical order.
std::vector<std::string> config_keys();

void apply_setting(ExperimentConfig& config, const std::string& key, const Setting& setting);

/// Defaults, then the file settings, then the overrides.
ExperimentConfig build_config(const SettingMap& file, const SettingMap& overrides);

/// Throws ConfigError on the first invalid field.
void validate(const ExperimentConfig& config);

/// Canonical "key = value" rendering of every key; parses back to the same config.
std::string dump_config(const ExperimentConfig& config);

/// Clean subjects with ids 0..subjects-1, each seeded from (seed, id).
std::vector<SubjectRecord> generate_dataset(const ExperimentConfig& config, std::uint64_t seed);

struct SubjectSplit {
  std::vector<SubjectRecord> train;
  std::vector<SubjectRecord> heldout;
};

/// Lowest ids train, the rest are held out.
SubjectSplit split_subjects(std::vector<SubjectRecord> records, double train_fraction);

/// Per-subject noise levels for one cell; level 0 means every subject is clean.
std::vector<double> cell_subject_noise(const ExperimentConfig& config, NoiseTarget target,
                                       double level, int n_subjects, std::uint64_t seed);

/// Training clients with noise injected according to (target, level, seed).
std::vector<ClientData> build_clients(const ExperimentConfig& config,
                                      const std::vector<SubjectRecord>& train, NoiseTarget target,
                                      double level, std::uint64_t seed);

struct CellResult {
  MetricsRow row;
  ServerState state;
};

/// Federated training from the seed's shared initialization, then held-out scoring.
CellResult run_cell(const ExperimentConfig& config, const std::vector<ClientData>& clients,
                    const std::vector<SubjectRecord>& heldout, NoiseTarget target, double level,
                    AggregationPolicy policy, std::uint64_t seed);

/// Seed used by repeat r.
std::uint64_t repeat_seed(const ExperimentConfig& config, int r);

/// Writes the clean dataset for config.seed plus manifest.json into config.out.
void cmd_generate(const ExperimentConfig& config);

/// Runs every (seed, level, policy) cell and appends rows to
/// config.out/results.csv as they finish. Failed cells are recorded with
/// status "failed". Returns the number of failed cells.
int cmd_run(const ExperimentConfig& config, std::ostream& log);

}  // namespace fedweight
