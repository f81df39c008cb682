#include <algorithm>
#include <cmath>
#include <fstream>

#include "typoreg/error.hpp"
#include "typoreg/harness.hpp"
#include "typoreg/text.hpp"

namespace typoreg {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw DataError("error writing " + path.string());
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string px(double v) { return format_fixed(v, 1); }

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Frame {
  double width = 640, height = 360;
  double left = 60, right = 20, top = 40, bottom = 90;
  double lo = 0.0, hi = 1.0;

  double plot_w() const { return width - left - right; }
  double plot_h() const { return height - top - bottom; }
  double y(double v) const { return top + plot_h() * (1.0 - (v - lo) / (hi - lo)); }
};

Frame frame_for(const std::vector<double>& values) {
  Frame f;
  double lo = 0.0, hi = 1.0;
  for (double v : values) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  f.lo = lo;
  f.hi = hi > lo ? hi : lo + 1.0;
  return f;
}

std::string open_svg(const Frame& f, const std::string& title) {
  std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(f.width) + "\" height=\"" + px(f.height) +
       "\" viewBox=\"0 0 " + px(f.width) + " " + px(f.height) + "\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + px(f.width) + "\" height=\"" + px(f.height) + "\" fill=\"white\"/>\n";
  s += "<text x=\"" + px(f.width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
       xml_escape(title) + "</text>\n";
  // Axes and y ticks.
  s += "<line x1=\"" + px(f.left) + "\" y1=\"" + px(f.top) + "\" x2=\"" + px(f.left) + "\" y2=\"" +
       px(f.top + f.plot_h()) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + px(f.left) + "\" y1=\"" + px(f.y(f.lo)) + "\" x2=\"" + px(f.left + f.plot_w()) + "\" y2=\"" +
       px(f.y(f.lo)) + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = f.lo + (f.hi - f.lo) * t / 4.0;
    s += "<text x=\"" + px(f.left - 6) + "\" y=\"" + px(f.y(v) + 4) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + format_fixed(v, 2) + "</text>\n";
    s += "<line x1=\"" + px(f.left) + "\" y1=\"" + px(f.y(v)) + "\" x2=\"" + px(f.left + f.plot_w()) + "\" y2=\"" +
         px(f.y(v)) + "\" stroke=\"#dddddd\"/>\n";
  }
  return s;
}

std::string x_label(const Frame& f, double x, const std::string& text) {
  return "<text x=\"" + px(x) + "\" y=\"" + px(f.top + f.plot_h() + 12) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" transform=\"rotate(-40 " + px(x) + " " +
         px(f.top + f.plot_h() + 12) + ")\">" + xml_escape(text) + "</text>\n";
}

std::string legend(const Frame& f, const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double x = f.left + 10 + 120.0 * static_cast<double>(i);
    s += "<rect x=\"" + px(x) + "\" y=\"30\" width=\"10\" height=\"10\" fill=\"" + kPalette[i % 6] + "\"/>\n";
    s += "<text x=\"" + px(x + 14) + "\" y=\"39\" font-family=\"sans-serif\" font-size=\"10\">" +
         xml_escape(names[i]) + "</text>\n";
  }
  return s;
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::vector<std::string>& categories,
                           const std::vector<SvgSeries>& series) {
  std::vector<double> all;
  for (const auto& s : series) all.insert(all.end(), s.values.begin(), s.values.end());
  Frame f = frame_for(all);
  f.top = 50;
  std::string out = open_svg(f, title);
  const std::size_t n = categories.size();
  auto x_at = [&](std::size_t i) {
    return n <= 1 ? f.left + f.plot_w() / 2 : f.left + f.plot_w() * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  for (std::size_t i = 0; i < n; ++i) out += x_label(f, x_at(i), categories[i]);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < series.size(); ++k) {
    names.push_back(series[k].label);
    std::string points;
    for (std::size_t i = 0; i < std::min(n, series[k].values.size()); ++i) {
      if (!points.empty()) points += ' ';
      points += px(x_at(i)) + "," + px(f.y(series[k].values[i]));
    }
    out += "<polyline fill=\"none\" stroke=\"" + std::string(kPalette[k % 6]) + "\" stroke-width=\"2\" points=\"" +
           points + "\"/>\n";
    for (std::size_t i = 0; i < std::min(n, series[k].values.size()); ++i) {
      out += "<circle cx=\"" + px(x_at(i)) + "\" cy=\"" + px(f.y(series[k].values[i])) + "\" r=\"3\" fill=\"" +
             kPalette[k % 6] + "\"/>\n";
    }
  }
  out += legend(f, names);
  out += "</svg>\n";
  return out;
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, const std::vector<std::string>& groups) {
  if (labels.size() != values.size() || groups.size() != values.size()) {
    throw ArgumentError("svg_bar_chart: labels, values and groups differ in length");
  }
  Frame f = frame_for(values);
  f.top = 50;
  std::string out = open_svg(f, title);
  std::vector<std::string> names;
  for (const auto& g : groups) {
    if (std::find(names.begin(), names.end(), g) == names.end()) names.push_back(g);
  }
  const double slot = values.empty() ? f.plot_w() : f.plot_w() / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t g = static_cast<std::size_t>(std::find(names.begin(), names.end(), groups[i]) - names.begin());
    const double x = f.left + slot * static_cast<double>(i) + slot * 0.15;
    const double v = std::isfinite(values[i]) ? values[i] : f.lo;
    const double y0 = f.y(std::max(f.lo, 0.0)), y1 = f.y(v);
    out += "<rect x=\"" + px(x) + "\" y=\"" + px(std::min(y0, y1)) + "\" width=\"" + px(slot * 0.7) +
           "\" height=\"" + px(std::abs(y0 - y1)) + "\" fill=\"" + kPalette[g % 6] + "\"/>\n";
    out += x_label(f, x + slot * 0.35, labels[i]);
  }
  out += legend(f, names);
  out += "</svg>\n";
  return out;
}

void write_report_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
  std::string text = "lang,split,metric,value\n";
  for (const auto& r : rows) text += r.lang + "," + r.split + "," + r.metric + "," + format_double(r.value) + "\n";
  write_file(path, text);
}

void export_report(const MetricsReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  write_report_csv(dir / "report.csv", report.rows);
  write_trace_csv(dir / "trace.csv", report.trace);

  std::string resolved = "# config_hash = " + report.config_hash + "\n";
  resolved += "# seed = " + std::to_string(report.seed) + "\n";
  resolved += "# wall_seconds = " + format_fixed(report.wall_seconds, 3) + "\n";
  resolved += report.resolved_config;
  write_file(dir / "config.resolved", resolved);

  std::vector<std::string> labels, groups;
  std::vector<double> values;
  std::string metric;
  for (const auto& r : report.rows) {
    if (r.lang.empty() || r.lang.front() == '@' || r.metric == "unk_pct") continue;
    metric = r.metric;
    labels.push_back(r.lang);
    values.push_back(r.value);
    groups.push_back(r.split);
  }
  write_file(dir / "plot.svg", svg_bar_chart(metric + " per language (seed " + std::to_string(report.seed) + ")",
                                             labels, values, groups));
}

void export_sweep(const SweepTable& table, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  const auto& base = table.rows.at(table.baseline);

  std::string per_seed = "setting,seed,seen,unseen,delta_unseen\n";
  for (const auto& r : table.rows) {
    for (std::size_t i = 0; i < table.seeds.size(); ++i) {
      per_seed += r.setting + "," + std::to_string(table.seeds[i]) + "," + format_double(r.seen[i]) + "," +
                  format_double(r.unseen[i]) + "," + format_double(r.unseen[i] - base.unseen[i]) + "\n";
    }
  }
  write_file(dir / "sweep.csv", per_seed);

  std::string summary = "setting,seen_mean,unseen_mean,mean_delta_unseen,positive_seeds,flagged\n";
  std::vector<std::string> settings;
  SvgSeries seen{"seen", {}}, unseen{"unseen", {}};
  for (const auto& r : table.rows) {
    const auto deltas = table.paired_deltas(r.setting);
    double sum = 0.0;
    std::size_t pos = 0;
    for (double d : deltas) {
      sum += d;
      pos += d > 0.0;
    }
    summary += r.setting + "," + format_double(r.seen_mean()) + "," + format_double(r.unseen_mean()) + "," +
               format_double(deltas.empty() ? 0.0 : sum / static_cast<double>(deltas.size())) + "," +
               std::to_string(pos) + "/" + std::to_string(deltas.size()) + "," + (r.flagged ? "1" : "0") + "\n";
    settings.push_back(r.setting);
    seen.values.push_back(r.seen_mean());
    unseen.values.push_back(r.unseen_mean());
  }
  write_file(dir / "summary.csv", summary);
  write_file(dir / "plot.svg", svg_line_chart(table.name + " sweep: mean " + table.metric, settings, {seen, unseen}));
}

}  // namespace typoreg
