// fedweight: generate synthetic datasets, run FedAvg/FedWeight sweeps, report.
//
//   fedweight generate --config exp.cfg --out data/
//   fedweight run --noise-target video --levels 0,0.5,1.0 --repeats 5 --out runs/video
//   fedweight report runs/video/results.csv
//
// Any config key may also be given as --<dotted.key>=<value>.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedweight/checkpoint.hpp"
#include "fedweight/dataset_io.hpp"
#include "fedweight/experiment.hpp"
#include "fedweight/report.hpp"

namespace fw = fedweight;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::string> out, seed, noise_target, levels, policies, repeats, quality_map;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value experiment file");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--noise-target", f.noise_target, "video or label")
      ->check(CLI::IsMember({"video", "label"}));
  cmd->add_option("--levels", f.levels, "comma-separated noise levels");
  cmd->add_option("--policies", f.policies, "comma-separated subset of fedavg,fedweight");
  cmd->add_option("--repeats", f.repeats, "seeds per cell");
  cmd->add_option("--quality-map", f.quality_map, "inverse, maxminus or literal")
      ->check(CLI::IsMember({"inverse", "maxminus", "literal"}));
  cmd->allow_extras();
}

// "--a.b=v" or "--a.b v" pairs left over by CLI11.
fw::SettingMap dotted_overrides(const std::vector<std::string>& extras) {
  fw::SettingMap out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.find('.') == std::string::npos) {
      throw fw::ConfigError(arg, "unrecognized argument");
    }
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else if (i + 1 < extras.size()) {
      value = extras[++i];
    } else {
      throw fw::ConfigError(arg, "missing value");
    }
    out[key] = {value, "--" + key};
  }
  return out;
}

fw::ExperimentConfig resolve(const CommonFlags& f, const std::vector<std::string>& extras) {
  fw::SettingMap file;
  if (!f.config.empty()) file = fw::load_config_file(f.config);
  fw::SettingMap over = dotted_overrides(extras);
  auto put = [&](const std::optional<std::string>& v, const char* key, const char* flag) {
    if (v) over[key] = {*v, flag};
  };
  put(f.out, "out", "--out");
  put(f.seed, "seed", "--seed");
  put(f.noise_target, "noise.target", "--noise-target");
  put(f.levels, "noise.levels", "--levels");
  put(f.policies, "run.policies", "--policies");
  put(f.repeats, "run.repeats", "--repeats");
  put(f.quality_map, "federation.quality_map", "--quality-map");
  return fw::build_config(file, over);
}

void emit_error(const char* kind, const std::string& message, const std::string& origin = {}) {
  nlohmann::json j = {{"status", "error"}, {"kind", kind}, {"message", message}};
  if (!origin.empty()) j["origin"] = origin;
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated rPPG simulator: FedAvg vs quality-weighted aggregation"};
  app.require_subcommand(1);

  CommonFlags gen_flags, run_flags;
  auto* gen = app.add_subcommand("generate", "write a synthetic clean dataset and manifest");
  add_common(gen, gen_flags);
  auto* run = app.add_subcommand("run", "run the noise sweep and write results.csv");
  add_common(run, run_flags);

  std::string csv_path;
  std::optional<std::string> report_out;
  auto* rep = app.add_subcommand("report", "summarize a results CSV as markdown and SVG");
  rep->add_option("csv", csv_path, "results.csv from a run")->required();
  rep->add_option("--out", report_out, "output directory (default: next to the CSV)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const fw::ExperimentConfig config = resolve(gen_flags, gen->remaining());
      fw::cmd_generate(config);
      std::cout << "wrote " << config.subjects << " subjects to " << config.out.string() << '\n';
      return 0;
    }
    if (run->parsed()) {
      const fw::ExperimentConfig config = resolve(run_flags, run->remaining());
      const int failed = fw::cmd_run(config, std::cout);
      const auto results = (config.out / "results.csv").string();
      if (failed > 0) {
        std::cerr << nlohmann::json{{"status", "partial"}, {"failed_cells", failed}, {"results", results}}.dump()
                  << '\n';
        return kExitPartial;
      }
      std::cout << "results: " << results << '\n';
      return 0;
    }
    const std::filesystem::path csv(csv_path);
    const std::filesystem::path out = report_out ? std::filesystem::path(*report_out) : csv.parent_path();
    const fw::ReportPaths paths = fw::cmd_report(csv, out.empty() ? "." : out);
    std::cout << "report: " << paths.markdown.string() << "\nchart: " << paths.svg.string() << '\n';
    return 0;
  } catch (const fw::ConfigError& e) {
    emit_error("config", e.what(), e.origin());
    return kExitUsage;
  } catch (const fw::DatasetError& e) {
    emit_error("dataset", e.what(), e.file().string());
  } catch (const fw::CheckpointError& e) {
    emit_error("checkpoint", e.what());
  } catch (const std::exception& e) {
    emit_error("runtime", e.what());
  }
  return kExitFailure;
}
