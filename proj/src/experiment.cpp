#include "fedweight/experiment.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "fedweight/dataset_io.hpp"
#include "fedweight/rng.hpp"

namespace fedweight {

namespace fs = std::filesystem;

namespace {

// Stream ids for derive_seed; fixed so datasets stay stable across versions.
constexpr std::uint64_t kStreamSubject = 1;
constexpr std::uint64_t kStreamHr = 2;
constexpr std::uint64_t kStreamNoise = 3;
constexpr std::uint64_t kStreamInit = 4;
constexpr std::uint64_t kStreamFederation = 5;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) {
    throw InvalidArgument("'" + s + "' is not a valid number");
  }
  return v;
}

double parse_double(const std::string& s) {
  // from_chars for double is incomplete in some standard libraries.
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw InvalidArgument("'" + s + "' is not a valid number");
  }
  if (pos != s.size()) throw InvalidArgument("'" + s + "' is not a valid number");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InvalidArgument("'" + s + "' is not a boolean");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T, typename Fn>
std::string join(const std::vector<T>& v, Fn&& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += f(v[i]);
  }
  return out;
}

const char* to_string(TruthHr t) { return t == TruthHr::Programmed ? "programmed" : "estimated"; }

struct KeyDef {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define FW_INT(KEY, FIELD)                                                        \
  KeyDef {                                                                        \
    KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_number<int>(v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }         \
  }
#define FW_DOUBLE(KEY, FIELD)                                                     \
  KeyDef {                                                                        \
    KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = parse_double(v); }, \
        [](const ExperimentConfig& c) { return fmt_double(c.FIELD); }             \
  }

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      {"out", [](ExperimentConfig& c, const std::string& v) { c.out = v; },
       [](const ExperimentConfig& c) { return c.out.string(); }},
      FW_INT("dataset.subjects", subjects),
      FW_DOUBLE("dataset.duration_s", duration_s),
      FW_DOUBLE("dataset.fps", fps),
      FW_INT("dataset.height", frame.h),
      FW_INT("dataset.width", frame.w),
      FW_DOUBLE("dataset.hr_min", hr_min_bpm),
      FW_DOUBLE("dataset.hr_max", hr_max_bpm),
      FW_INT("dataset.hr_segments", hr_segments),
      {"dataset.path", [](ExperimentConfig& c, const std::string& v) { c.dataset_path = v; },
       [](const ExperimentConfig& c) { return c.dataset_path.string(); }},
      FW_DOUBLE("synth.pulse_amplitude", synth.pulse_amplitude),
      FW_DOUBLE("synth.second_harmonic", synth.second_harmonic),
      FW_DOUBLE("synth.skin_jitter", synth.skin_jitter),
      FW_DOUBLE("synth.texture_amplitude", synth.texture_amplitude),
      FW_INT("synth.texture_components", synth.texture_components),
      FW_DOUBLE("synth.motion_amplitude_px", synth.motion_amplitude_px),
      FW_INT("synth.motion_components", synth.motion_components),
      FW_DOUBLE("synth.illumination_amplitude", synth.illumination_amplitude),
      FW_INT("synth.illumination_components", synth.illumination_components),
      {"noise.target",
       [](ExperimentConfig& c, const std::string& v) { c.noise_target = parse_noise_target(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.noise_target)); }},
      {"noise.levels",
       [](ExperimentConfig& c, const std::string& v) {
         c.levels.clear();
         for (const auto& item : split_list(v)) c.levels.push_back(parse_double(item));
       },
       [](const ExperimentConfig& c) { return join(c.levels, fmt_double); }},
      FW_DOUBLE("noise.subject_std", subject_std),
      FW_DOUBLE("noise.video_unit", video_unit),
      FW_INT("model.hidden", hidden),
      FW_INT("model.window", window),
      FW_INT("federation.rounds", federation.n_rounds),
      FW_DOUBLE("federation.fraction", federation.client_fraction),
      FW_INT("federation.local_steps", federation.local_steps),
      {"federation.quality_map",
       [](ExperimentConfig& c, const std::string& v) { c.federation.quality_map = parse_quality_map(v); },
       [](const ExperimentConfig& c) { return std::string(to_string(c.federation.quality_map)); }},
      FW_DOUBLE("federation.quality_epsilon", federation.quality_epsilon),
      {"federation.weight_by_samples",
       [](ExperimentConfig& c, const std::string& v) { c.federation.weight_by_samples = parse_bool(v); },
       [](const ExperimentConfig& c) { return std::string(c.federation.weight_by_samples ? "true" : "false"); }},
      FW_DOUBLE("federation.lr", federation.lr),
      FW_INT("federation.threads", federation.threads),
      {"federation.transport",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "memory") {
           c.federation.serialize_transport = false;
         } else if (v == "serialized") {
           c.federation.serialize_transport = true;
         } else {
           throw InvalidArgument("transport must be memory or serialized");
         }
       },
       [](const ExperimentConfig& c) {
         return std::string(c.federation.serialize_transport ? "serialized" : "memory");
       }},
      {"run.policies",
       [](ExperimentConfig& c, const std::string& v) {
         c.policies.clear();
         for (const auto& item : split_list(v)) c.policies.push_back(parse_policy(item));
       },
       [](const ExperimentConfig& c) {
         return join(c.policies, [](AggregationPolicy p) { return std::string(to_string(p)); });
       }},
      FW_INT("run.repeats", repeats),
      FW_DOUBLE("eval.train_fraction", train_fraction),
      FW_DOUBLE("eval.lambda", eval.lambda),
      {"eval.window",
       [](ExperimentConfig& c, const std::string& v) {
         const int w = parse_number<int>(v);
         if (w < 3) throw InvalidArgument("eval.window must be >= 3");
         c.eval.window = static_cast<std::size_t>(w);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.eval.window); }},
      {"eval.truth_hr",
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "programmed") {
           c.eval.truth = TruthHr::Programmed;
         } else if (v == "estimated") {
           c.eval.truth = TruthHr::Estimated;
         } else {
           throw InvalidArgument("truth_hr must be programmed or estimated");
         }
       },
       [](const ExperimentConfig& c) { return std::string(to_string(c.eval.truth)); }},
  };
  return table;
}

#undef FW_INT
#undef FW_DOUBLE

std::uint64_t level_stream(NoiseTarget target, double level) {
  std::uint64_t s = std::bit_cast<std::uint64_t>(level) ^ (static_cast<std::uint64_t>(target) << 56);
  return splitmix64(s);
}

std::string cell_tag(NoiseTarget target, double level, AggregationPolicy policy, std::uint64_t seed) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s_%g_%s_seed%llu", to_string(target), level, to_string(policy),
                static_cast<unsigned long long>(seed));
  return buf;
}

}  // namespace

SettingMap parse_config_text(const std::string& text, const std::string& source_name) {
  SettingMap out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string origin = source_name + ":" + std::to_string(line_no);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin, "expected 'key = value'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError(origin, "missing key before '='");
    if (out.contains(key)) {
      throw ConfigError(origin, "duplicate key '" + key + "' (first set at " + out[key].origin + ")");
    }
    out[key] = {std::move(value), origin};
  }
  return out;
}

SettingMap load_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const KeyDef& k : key_table()) keys.emplace_back(k.key);
  return keys;
}

void apply_setting(ExperimentConfig& config, const std::string& key, const Setting& setting) {
  const auto& table = key_table();
  const auto it = std::find_if(table.begin(), table.end(), [&](const KeyDef& k) { return key == k.key; });
  if (it == table.end()) throw ConfigError(setting.origin, "unknown config key '" + key + "'");
  try {
    it->set(config, setting.value);
  } catch (const InvalidArgument& e) {
    throw ConfigError(setting.origin, key + ": " + e.what());
  }
}

ExperimentConfig build_config(const SettingMap& file, const SettingMap& overrides) {
  ExperimentConfig config;
  for (const auto& [k, s] : file) apply_setting(config, k, s);
  for (const auto& [k, s] : overrides) apply_setting(config, k, s);
  validate(config);
  return config;
}

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const char* key, const std::string& msg) {
    if (!ok) throw ConfigError("", std::string(key) + ": " + msg);
  };
  require(c.subjects >= 2, "dataset.subjects", "need at least 2 subjects");
  require(c.fps > 0.0, "dataset.fps", "must be positive");
  require(c.duration_s * c.fps >= 400.0, "dataset.duration_s", "need at least 400 frames");
  require(c.frame.h >= 1 && c.frame.w >= 1, "dataset.height/width", "frame size must be >= 1");
  require(c.hr_min_bpm > c.eval.hr_min_bpm && c.hr_max_bpm < c.eval.hr_max_bpm &&
              c.hr_min_bpm <= c.hr_max_bpm,
          "dataset.hr_min/hr_max", "must satisfy 40 < hr_min <= hr_max < 150");
  require(c.hr_segments >= 1, "dataset.hr_segments", "must be >= 1");
  require(c.synth.pulse_amplitude >= 0.0, "synth.pulse_amplitude", "must be >= 0");
  require(c.synth.texture_components >= 0 && c.synth.motion_components >= 1 &&
              c.synth.illumination_components >= 1,
          "synth.*_components", "texture >= 0, motion and illumination >= 1 required");
  require(!c.levels.empty(), "noise.levels", "must be nonempty");
  for (double l : c.levels) require(l >= 0.0 && std::isfinite(l), "noise.levels", "levels must be >= 0");
  require(c.noise_target != NoiseTarget::None, "noise.target", "must be video or label");
  require(c.subject_std >= 0.0, "noise.subject_std", "must be >= 0");
  require(c.video_unit > 0.0, "noise.video_unit", "must be positive");
  require(c.hidden >= 1, "model.hidden", "must be >= 1");
  require(c.window >= 1, "model.window", "must be >= 1");
  require(c.federation.n_rounds >= 1, "federation.rounds", "must be >= 1");
  require(c.federation.client_fraction > 0.0 && c.federation.client_fraction <= 1.0,
          "federation.fraction", "must lie in (0, 1]");
  require(c.federation.quality_epsilon > 0.0, "federation.quality_epsilon", "must be positive");
  require(c.federation.lr > 0.0, "federation.lr", "must be positive");
  require(c.federation.threads >= 0, "federation.threads", "must be >= 0");
  require(!c.policies.empty(), "run.policies", "must be nonempty");
  require(c.repeats >= 1, "run.repeats", "must be >= 1");
  require(c.train_fraction > 0.0 && c.train_fraction < 1.0, "eval.train_fraction",
          "must lie in (0, 1)");
  require(c.eval.lambda >= 0.0, "eval.lambda", "must be >= 0");
  require(c.duration_s * c.fps >= static_cast<double>(c.eval.window), "eval.window",
          "longer than a recording");
}

std::string dump_config(const ExperimentConfig& config) {
  std::string out;
  for (const KeyDef& k : key_table()) out += std::string(k.key) + " = " + k.get(config) + "\n";
  return out;
}

std::vector<SubjectRecord> generate_dataset(const ExperimentConfig& config, std::uint64_t seed) {
  std::vector<SubjectRecord> out;
  out.reserve(static_cast<std::size_t>(config.subjects));
  for (int id = 0; id < config.subjects; ++id) {
    const auto sid = static_cast<std::uint64_t>(id);
    Rng hr_rng(derive_seed(derive_seed(seed, kStreamHr), sid));
    std::vector<double> profile(static_cast<std::size_t>(config.hr_segments));
    for (double& hr : profile) hr = hr_rng.uniform(config.hr_min_bpm, config.hr_max_bpm);
    out.push_back(generate_subject(id, config.duration_s, config.fps, config.frame, std::move(profile),
                                   derive_seed(derive_seed(seed, kStreamSubject), sid), config.synth));
  }
  return out;
}

SubjectSplit split_subjects(std::vector<SubjectRecord> records, double train_fraction) {
  if (records.size() < 2) throw InvalidArgument("need at least two subjects to split");
  std::sort(records.begin(), records.end(),
            [](const SubjectRecord& a, const SubjectRecord& b) { return a.subject_id < b.subject_id; });
  const auto n = records.size();
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n))), 1, n - 1);
  SubjectSplit s;
  s.train.assign(std::make_move_iterator(records.begin()),
                 std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)));
  s.heldout.assign(std::make_move_iterator(records.begin() + static_cast<std::ptrdiff_t>(n_train)),
                   std::make_move_iterator(records.end()));
  return s;
}

std::vector<double> cell_subject_noise(const ExperimentConfig& config, NoiseTarget target,
                                       double level, int n_subjects, std::uint64_t seed) {
  if (level == 0.0) return std::vector<double>(static_cast<std::size_t>(n_subjects), 0.0);
  NoiseConfig nc;
  nc.experiment_level = level;
  nc.subject_std = config.subject_std;
  nc.target = target;
  nc.seed = derive_seed(derive_seed(seed, kStreamNoise), level_stream(target, level));
  return sample_subject_noise(nc, n_subjects);
}

std::vector<ClientData> build_clients(const ExperimentConfig& config,
                                      const std::vector<SubjectRecord>& train, NoiseTarget target,
                                      double level, std::uint64_t seed) {
  const std::vector<double> sigmas =
      cell_subject_noise(config, target, level, static_cast<int>(train.size()), seed);
  const std::uint64_t cell_seed = derive_seed(derive_seed(seed, kStreamNoise), level_stream(target, level) + 1);
  std::vector<ClientData> clients;
  clients.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const SubjectRecord& rec = train[i];
    const double s = sigmas[i];
    const std::uint64_t subject_seed = derive_seed(cell_seed, static_cast<std::uint64_t>(rec.subject_id));
    if (s == 0.0 || target == NoiseTarget::None) {
      clients.push_back(make_client_data(rec, s, config.window));
      continue;
    }
    SubjectRecord noisy;
    noisy.subject_id = rec.subject_id;
    if (target == NoiseTarget::Video) {
      noisy.frames = add_video_noise(rec.frames, s * config.video_unit, subject_seed);
      noisy.label = rec.label;
      noisy.sigma_video = s;
    } else {
      noisy.frames = rec.frames;
      noisy.label = add_label_noise(rec.label, s, subject_seed);
      noisy.sigma_label = s;
    }
    clients.push_back(make_client_data(noisy, s, config.window));
  }
  return clients;
}

std::uint64_t repeat_seed(const ExperimentConfig& config, int r) {
  return config.seed + static_cast<std::uint64_t>(r);
}

CellResult run_cell(const ExperimentConfig& config, const std::vector<ClientData>& clients,
                    const std::vector<SubjectRecord>& heldout, NoiseTarget target, double level,
                    AggregationPolicy policy, std::uint64_t seed) {
  if (clients.empty()) throw InvalidArgument("no training clients");
  const int dim = static_cast<int>(clients.front().windows.empty() ? 0 : clients.front().windows.front().dim);
  if (dim < 1) throw InvalidArgument("client " + std::to_string(clients.front().client_id) + " has no windows");
  const ModelParams init = init_params(dim, config.hidden, derive_seed(seed, kStreamInit));
  RoundConfig rc = config.federation;
  rc.aggregation = policy;
  rc.seed = derive_seed(seed, kStreamFederation);

  CellResult res;
  res.state = run_federation(clients, init, rc);
  const RunScore score = score_run(res.state.global_params, heldout, config.eval);
  res.row.noise_target = target;
  res.row.noise_level = level;
  res.row.policy = policy;
  res.row.seed = seed;
  res.row.mae_bpm = score.mae_bpm;
  res.row.snr_db = score.snr_db;
  res.row.pearson_r = score.pearson_r;
  res.row.n_windows = score.n_windows;
  return res;
}

void cmd_generate(const ExperimentConfig& config) {
  validate(config);
  const std::vector<SubjectRecord> records = generate_dataset(config, config.seed);
  std::error_code ec;
  fs::create_directories(config.out, ec);
  if (ec) throw DatasetError(DatasetError::Kind::Io, config.out, ec.message());
  write_dataset(records, config.out);

  nlohmann::json manifest;
  manifest["format"] = "fedweight-dataset";
  manifest["version"] = 1;
  manifest["created_utc"] = [] {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return std::string(buf);
  }();
  manifest["seed"] = config.seed;
  nlohmann::json cfg = nlohmann::json::object();
  for (const KeyDef& k : key_table()) cfg[k.key] = k.get(config);
  manifest["config"] = cfg;
  nlohmann::json subjects = nlohmann::json::array();
  for (const SubjectRecord& r : records) {
    subjects.push_back({{"subject_id", r.subject_id},
                        {"dir", subject_dir_name(r.subject_id)},
                        {"seed", derive_seed(derive_seed(config.seed, kStreamSubject),
                                             static_cast<std::uint64_t>(r.subject_id))},
                        {"hr_profile", r.hr_profile}});
  }
  manifest["subjects"] = subjects;
  const fs::path path = config.out / "manifest.json";
  std::ofstream out(path);
  if (!out) throw DatasetError(DatasetError::Kind::Io, path, "cannot write manifest");
  out << manifest.dump(2) << '\n';
}

int cmd_run(const ExperimentConfig& config, std::ostream& log) {
  validate(config);
  std::error_code ec;
  fs::create_directories(config.out / "history", ec);
  if (ec) throw DatasetError(DatasetError::Kind::Io, config.out, ec.message());
  {
    std::ofstream cfg(config.out / "config.txt");
    cfg << dump_config(config);
  }
  const fs::path csv_path = config.out / "results.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw DatasetError(DatasetError::Kind::Io, csv_path, "cannot write results");
  csv << metrics_csv_header() << '\n' << std::flush;

  std::vector<SubjectRecord> shared;
  if (!config.dataset_path.empty()) shared = read_dataset(config.dataset_path);

  int failed = 0;
  auto fail_row = [&](double level, AggregationPolicy policy, std::uint64_t seed, const std::string& why) {
    MetricsRow row;
    row.noise_target = config.noise_target;
    row.noise_level = level;
    row.policy = policy;
    row.seed = seed;
    row.status = "failed";
    csv << to_csv_line(row) << '\n' << std::flush;
    log << "FAILED " << cell_tag(config.noise_target, level, policy, seed) << ": " << why << '\n';
    ++failed;
  };

  for (int r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = repeat_seed(config, r);
    SubjectSplit split;
    try {
      split = split_subjects(shared.empty() ? generate_dataset(config, seed) : shared, config.train_fraction);
    } catch (const std::exception& e) {
      for (double level : config.levels) {
        for (AggregationPolicy p : config.policies) fail_row(level, p, seed, e.what());
      }
      continue;
    }
    for (double level : config.levels) {
      std::vector<ClientData> clients;
      std::string client_error;
      try {
        clients = build_clients(config, split.train, config.noise_target, level, seed);
      } catch (const std::exception& e) {
        client_error = e.what();
      }
      for (AggregationPolicy policy : config.policies) {
        if (!client_error.empty()) {
          fail_row(level, policy, seed, client_error);
          continue;
        }
        try {
          const CellResult res = run_cell(config, clients, split.heldout, config.noise_target, level, policy, seed);
          csv << to_csv_line(res.row) << '\n' << std::flush;
          std::ofstream hist(config.out / "history" /
                             (cell_tag(config.noise_target, level, policy, seed) + ".jsonl"));
          write_history_jsonl(res.state.history, hist);
          char buf[160];
          std::snprintf(buf, sizeof buf, "%-42s mae=%.3f snr=%.2f windows=%d",
                        cell_tag(config.noise_target, level, policy, seed).c_str(), res.row.mae_bpm,
                        res.row.snr_db, res.row.n_windows);
          log << buf << '\n';
        } catch (const std::exception& e) {
          fail_row(level, policy, seed, e.what());
        }
      }
    }
  }
  return failed;
}

}  // namespace fedweight
