#include "fedweight/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <tuple>

#include "fedweight/dataset_io.hpp"
#include "fedweight/experiment.hpp"

namespace fedweight {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double number(const std::string& s, const char* column) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != s.size()) throw InvalidArgument(std::string("bad ") + column + " value '" + s + "'");
  return v;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

using CellKey = std::tuple<NoiseTarget, double, AggregationPolicy>;

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::vector<MetricsRow> read_metrics_csv(std::istream& in, const std::string& name) {
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line)) throw ConfigError(name + ":1", "empty file, expected a header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != metrics_csv_header()) {
    throw ConfigError(name + ":1", "unexpected header, expected '" + metrics_csv_header() + "'");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string origin = name + ":" + std::to_string(line_no);
    const auto f = split_csv(line);
    if (f.size() != 9) {
      throw ConfigError(origin, "expected 9 fields, found " + std::to_string(f.size()));
    }
    MetricsRow r;
    try {
      r.noise_target = parse_noise_target(f[0]);
      r.noise_level = number(f[1], "noise_level");
      r.policy = parse_policy(f[2]);
      r.seed = static_cast<std::uint64_t>(number(f[3], "seed"));
      r.status = f[8];
      if (r.status == "ok") {
        r.mae_bpm = number(f[4], "mae_bpm");
        r.snr_db = number(f[5], "snr_db");
        if (!f[6].empty()) r.pearson_r = number(f[6], "pearson_r");
        r.n_windows = static_cast<int>(number(f[7], "n_windows"));
        if (r.mae_bpm < 0.0) throw InvalidArgument("negative mae_bpm");
      } else if (r.status != "failed") {
        throw InvalidArgument("status must be ok or failed, got '" + r.status + "'");
      }
    } catch (const InvalidArgument& e) {
      throw ConfigError(origin, e.what());
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

std::vector<SummaryCell> summarize(const std::vector<MetricsRow>& rows) {
  struct Acc {
    std::vector<double> mae, snr, pearson;
    int failed = 0;
  };
  std::map<CellKey, Acc> groups;
  for (const MetricsRow& r : rows) {
    Acc& a = groups[{r.noise_target, r.noise_level, r.policy}];
    if (r.status != "ok") {
      ++a.failed;
      continue;
    }
    a.mae.push_back(r.mae_bpm);
    if (std::isfinite(r.snr_db)) a.snr.push_back(r.snr_db);
    if (r.pearson_r) a.pearson.push_back(*r.pearson_r);
  }
  std::vector<SummaryCell> out;
  for (const auto& [key, a] : groups) {
    SummaryCell c;
    std::tie(c.target, c.level, c.policy) = key;
    c.n_ok = static_cast<int>(a.mae.size());
    c.n_failed = a.failed;
    if (!a.mae.empty()) {
      c.mae_median = median(a.mae);
      c.mae_se = standard_error(a.mae);
    }
    if (!a.snr.empty()) {
      c.snr_median = median(a.snr);
      c.snr_se = standard_error(a.snr);
    }
    if (!a.pearson.empty()) c.pearson_median = median(a.pearson);
    out.push_back(c);
  }
  return out;
}

std::string render_markdown(const std::vector<SummaryCell>& cells, const std::vector<MetricsRow>& rows) {
  std::ostringstream md;
  md << "# Heart-rate error by noise level\n\n";
  md << "Medians over seeds, +/- standard error.\n\n";
  md << "| noise | level | policy | seeds | MAE (bpm) | SNR (dB) | Pearson |\n";
  md << "|---|---:|---|---:|---:|---:|---:|\n";
  bool any_failed = false;
  for (const SummaryCell& c : cells) {
    md << "| " << to_string(c.target) << " | " << fmt("%.2f", c.level) << " | " << to_string(c.policy)
       << " | " << c.n_ok;
    if (c.n_failed > 0) {
      md << " [^failed]";
      any_failed = true;
    }
    if (c.n_ok > 0) {
      md << " | " << fmt("%.3f", c.mae_median) << " +/- " << fmt("%.3f", c.mae_se) << " | "
         << fmt("%.2f", c.snr_median) << " +/- " << fmt("%.2f", c.snr_se) << " | "
         << (c.pearson_median ? fmt("%.3f", *c.pearson_median) : std::string("n/a")) << " |\n";
    } else {
      md << " | n/a | n/a | n/a |\n";
    }
  }
  if (any_failed) {
    md << "\n[^failed]: Failed cells are left out of the aggregates:";
    for (const MetricsRow& r : rows) {
      if (r.status == "ok") continue;
      md << " " << to_string(r.noise_target) << " " << fmt("%.2f", r.noise_level) << " "
         << to_string(r.policy) << " seed " << r.seed << ";";
    }
    md << "\n";
  }
  return md.str();
}

std::string render_svg(const std::vector<SummaryCell>& cells) {
  constexpr double W = 640, H = 400, left = 64, right = 160, top = 32, bottom = 56;
  const double pw = W - left - right;
  const double ph = H - top - bottom;

  std::map<std::pair<NoiseTarget, AggregationPolicy>, std::vector<const SummaryCell*>> series;
  double xmin = 0.0, xmax = 0.0, ymax = 0.0;
  bool first = true;
  for (const SummaryCell& c : cells) {
    if (c.n_ok == 0) continue;
    series[{c.target, c.policy}].push_back(&c);
    xmin = first ? c.level : std::min(xmin, c.level);
    xmax = first ? c.level : std::max(xmax, c.level);
    ymax = std::max(ymax, c.mae_median + c.mae_se);
    first = false;
  }
  if (xmax <= xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax <= 0.0) ymax = 1.0;
  ymax *= 1.1;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
  auto sy = [&](double y) { return top + ph - y / ymax * ph; };

  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
      << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double yv = ymax * i / 5.0;
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    svg << "<text x=\"" << left - 6 << "\" y=\"" << fmt("%.1f", sy(yv) + 4) << "\" text-anchor=\"end\">"
        << fmt("%.2f", yv) << "</text>\n";
    svg << "<text x=\"" << fmt("%.1f", sx(xv)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">"
        << fmt("%.2f", xv) << "</text>\n";
  }
  svg << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">noise level</text>\n";
  svg << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << top + ph / 2 << ")\">MAE (bpm)</text>\n";

  int k = 0;
  for (const auto& [key, pts] : series) {
    const char* color = palette[k % 4];
    std::string points;
    for (const SummaryCell* c : pts) {
      points += fmt("%.2f", sx(c->level)) + "," + fmt("%.2f", sy(c->mae_median)) + " ";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << points << "\"/>\n";
    for (const SummaryCell* c : pts) {
      const double x = sx(c->level);
      svg << "<line x1=\"" << fmt("%.2f", x) << "\" y1=\"" << fmt("%.2f", sy(c->mae_median - c->mae_se))
          << "\" x2=\"" << fmt("%.2f", x) << "\" y2=\"" << fmt("%.2f", sy(c->mae_median + c->mae_se))
          << "\" stroke=\"" << color << "\"/>\n";
      svg << "<circle cx=\"" << fmt("%.2f", x) << "\" cy=\"" << fmt("%.2f", sy(c->mae_median))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const std::string label = xml_escape(std::string(to_string(key.second)) + " (" + to_string(key.first) + ")");
    const double ly = top + 16 + 18 * k;
    svg << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\">" << label << "</text>\n";
    ++k;
  }
  svg << "</svg>\n";
  return svg.str();
}

ReportPaths cmd_report(const fs::path& csv_path, const fs::path& out_dir) {
  std::ifstream in(csv_path);
  if (!in) throw DatasetError(DatasetError::Kind::Io, csv_path, "cannot open results");
  const std::vector<MetricsRow> rows = read_metrics_csv(in, csv_path.string());
  if (rows.empty()) throw ConfigError(csv_path.string(), "no result rows");
  const std::vector<SummaryCell> cells = summarize(rows);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DatasetError(DatasetError::Kind::Io, out_dir, ec.message());
  ReportPaths paths{out_dir / "report.md", out_dir / "mae.svg"};
  std::ofstream md(paths.markdown);
  md << render_markdown(cells, rows);
  std::ofstream svg(paths.svg);
  svg << render_svg(cells);
  if (!md || !svg) throw DatasetError(DatasetError::Kind::Io, out_dir, "cannot write report");
  return paths;
}

}  // namespace fedweight
