#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedweight/evaluation.hpp"

namespace fedweight {

/// Reads a results CSV. A malformed row raises ConfigError whose origin is
/// "name:line".
std::vector<MetricsRow> read_metrics_csv(std::istream& in, const std::string& name);

/// Aggregate over the successful seeds of one (target, level, policy).
struct SummaryCell {
  NoiseTarget target = NoiseTarget::Video;
  double level = 0.0;
  AggregationPolicy policy = AggregationPolicy::FedAvg;
  int n_ok = 0;
  int n_failed = 0;
  double mae_median = 0.0;
  /// Sample standard deviation over seeds divided by sqrt(n); 0 for one seed.
  double mae_se = 0.0;
  double snr_median = 0.0;
  double snr_se = 0.0;
  std::optional<double> pearson_median;
};

std::vector<SummaryCell> summarize(const std::vector<MetricsRow>& rows);

double median(std::vector<double> v);
double standard_error(const std::vector<double>& v);

std::string render_markdown(const std::vector<SummaryCell>& cells, const std::vector<MetricsRow>& rows);
std::string render_svg(const std::vector<SummaryCell>& cells);

struct ReportPaths {
  std::filesystem::path markdown;
  std::filesystem::path svg;
};

/// Writes report.md and mae.svg into out_dir.
ReportPaths cmd_report(const std::filesystem::path& csv_path, const std::filesystem::path& out_dir);

}  // namespace fedweight
