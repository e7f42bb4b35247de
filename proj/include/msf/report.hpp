/* Copyright 2026 The microseg-forge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Sweep tables and SVG plots of metric value against the share of
// synthetic data. The lower x axis is the percent added, the upper one the
// absolute image count; each dataset's baseline (percent 0) is a horizontal
// reference line and each sweep entry is a bar topped by a marker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "msf/common.hpp"
#include "msf/csv.hpp"

namespace msf::report {

struct SweepResult {
  std::string dataset;
  double percent = 0;
  std::uint64_t synthetic_count = 0;
  std::string metric;
  double value = 0;  // percent units, e.g. 97.5
  bool is_baseline = false;

  friend bool operator==(const SweepResult&, const SweepResult&) = default;
};

inline constexpr const char* kCsvHeader = "dataset,percent,synthetic_count,metric,value,is_baseline";

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_metrics_csv(const std::filesystem::path& path,
                              std::span<const SweepResult> results) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  os << kCsvHeader << '\n';
  for (const auto& r : results) {
    os << csv::escape(r.dataset) << ',' << format_number(r.percent) << ',' << r.synthetic_count
       << ',' << csv::escape(r.metric) << ',' << format_number(r.value) << ','
       << (r.is_baseline ? "true" : "false") << '\n';
  }
}

inline std::vector<SweepResult> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::missing_artifact, "metrics table not found: " + path.string());
  std::string line;
  if (!std::getline(is, line) || csv::split(line) != csv::split(kCsvHeader)) {
    fail(ErrorKind::io, path.string() + ": unexpected header");
  }
  std::vector<SweepResult> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = csv::split(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 6) fail(ErrorKind::io, where + ": expected 6 fields");
    SweepResult r;
    r.dataset = f[0];
    r.metric = f[3];
    try {
      std::size_t used = 0;
      r.percent = std::stod(f[1], &used);
      if (used != f[1].size()) throw std::invalid_argument(f[1]);
      r.synthetic_count = std::stoull(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
      r.value = std::stod(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument(f[4]);
    } catch (const std::logic_error&) {
      fail(ErrorKind::io, where + ": malformed number");
    }
    if (f[5] != "true" && f[5] != "false") fail(ErrorKind::io, where + ": is_baseline must be true or false");
    r.is_baseline = f[5] == "true";
    out.push_back(std::move(r));
  }
  return out;
}

struct YRange {
  double min = 60;
  double max = 100;
};

inline YRange default_y_range(const std::string& metric) {
  return metric == "accuracy" ? YRange{95, 100} : YRange{60, 100};
}

struct RenderOutput {
  std::string svg;
  std::vector<std::string> warnings;
  std::vector<std::string> omitted;  // out-of-range entries named in the note
};

namespace detail {

inline std::string xml_escape(std::string_view s) {
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

inline std::string fixed(double v, int decimals = 3) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s == "-0.000" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

inline std::string percent_label(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g%%", p);
  return buf;
}

struct Style {
  std::string color;
  std::string dash;
};

inline Style dataset_style(const std::string& name) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  static const char* dashes[] = {"6,3", "2,2", "8,3,2,3"};
  const std::uint64_t h = fnv1a(name);
  return Style{colors[h % 10], dashes[(h / 10) % 3]};
}

}  // namespace detail

// Plot frame geometry shared by the renderer and the checker.
struct Frame {
  static constexpr double width = 760, height = 470;
  static constexpr double left = 80, right = 720, top = 90, bottom = 380;
  static constexpr double inset = 30;  // x padding inside the frame

  double max_percent = 1;
  YRange y;

  double x(double percent) const {
    return left + inset + percent / max_percent * (right - left - 2 * inset);
  }
  double y_of(double value) const {
    return bottom - (value - y.min) / (y.max - y.min) * (bottom - top);
  }
  double value_of(double py) const {
    return y.min + (bottom - py) / (bottom - top) * (y.max - y.min);
  }
};

inline constexpr double kBarWidth = 14;

// Offset of dataset d of n from the percent position.
inline double bar_offset(std::size_t d, std::size_t n) {
  return (static_cast<double>(d) - (static_cast<double>(n) - 1) / 2) * (kBarWidth + 2);
}

inline Frame sweep_frame(std::span<const SweepResult> results, const std::string& metric,
                         YRange y) {
  Frame f;
  f.y = y;
  for (const auto& r : results) {
    if (r.metric == metric) f.max_percent = std::max(f.max_percent, r.percent);
  }
  return f;
}

inline RenderOutput render_sweep_svg(std::span<const SweepResult> results,
                                     const std::string& metric, YRange y,
                                     const std::string& title = {}) {
  require(y.max > y.min, "render_sweep_svg: y range is empty");
  std::map<std::string, std::optional<SweepResult>> baselines;
  std::map<std::string, std::map<double, SweepResult>> sweeps;
  for (const auto& r : results) {
    if (r.metric != metric) continue;
    require(r.percent >= 0 && std::isfinite(r.percent), "render_sweep_svg: percent must be >= 0");
    require(std::isfinite(r.value), "render_sweep_svg: value must be finite");
    baselines.try_emplace(r.dataset);
    if (r.is_baseline) {
      require(!baselines[r.dataset], "render_sweep_svg: two baselines for " + r.dataset);
      baselines[r.dataset] = r;
    } else {
      require(sweeps[r.dataset].emplace(r.percent, r).second,
              "render_sweep_svg: duplicate entry for " + r.dataset + " at " +
                  detail::percent_label(r.percent));
    }
  }
  require(!baselines.empty(), "render_sweep_svg: no results for metric '" + metric + "'");

  const Frame f = sweep_frame(results, metric, y);
  std::vector<std::string> datasets;
  for (const auto& [name, _] : baselines) datasets.push_back(name);
  std::set<double> percents;
  for (const auto& [_, m] : sweeps) {
    for (const auto& [p, __] : m) percents.insert(p);
  }

  RenderOutput out;
  auto in_range = [&](double v) { return v >= y.min && v <= y.max; };
  auto omit = [&](const SweepResult& r) {
    out.omitted.push_back(r.dataset + " " +
                          (r.is_baseline ? std::string("baseline") : detail::percent_label(r.percent)) +
                          " (" + detail::fixed(r.value, 1) + ")");
  };

  std::ostringstream s;
  using detail::fixed;
  using detail::xml_escape;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << Frame::width
    << "\" height=\"" << Frame::height << "\" viewBox=\"0 0 " << Frame::width << ' '
    << Frame::height << "\" font-family=\"sans-serif\" font-size=\"12\""
    << " data-metric=\"" << xml_escape(metric) << "\" data-y-min=\"" << format_number(y.min)
    << "\" data-y-max=\"" << format_number(y.max) << "\" data-max-percent=\""
    << format_number(f.max_percent) << "\">\n";
  s << "<rect x=\"0\" y=\"0\" width=\"" << Frame::width << "\" height=\"" << Frame::height
    << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << fixed(Frame::width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << xml_escape(title.empty() ? metric : title) << "</text>\n";
  s << "<rect class=\"frame\" x=\"" << fixed(Frame::left) << "\" y=\"" << fixed(Frame::top)
    << "\" width=\"" << fixed(Frame::right - Frame::left) << "\" height=\""
    << fixed(Frame::bottom - Frame::top) << "\" fill=\"none\" stroke=\"black\"/>\n";

  // y axis
  for (int i = 0; i <= 5; ++i) {
    const double v = y.min + (y.max - y.min) * i / 5.0;
    const double py = f.y_of(v);
    s << "<line x1=\"" << fixed(Frame::left - 5) << "\" y1=\"" << fixed(py) << "\" x2=\""
      << fixed(Frame::right) << "\" y2=\"" << fixed(py) << "\" stroke=\"#dddddd\"/>\n";
    s << "<text x=\"" << fixed(Frame::left - 8) << "\" y=\"" << fixed(py + 4)
      << "\" text-anchor=\"end\">" << fixed(v, 1) << "</text>\n";
  }
  s << "<text transform=\"translate(24," << fixed((Frame::top + Frame::bottom) / 2)
    << ") rotate(-90)\" text-anchor=\"middle\">" << xml_escape(metric) << " (%)</text>\n";

  // lower (percent) and upper (count) axes
  for (double p : percents) {
    const double px = f.x(p);
    s << "<text class=\"x-lower\" x=\"" << fixed(px) << "\" y=\"" << fixed(Frame::bottom + 18)
      << "\" text-anchor=\"middle\">" << detail::percent_label(p) << "</text>\n";
    std::string counts;
    for (const auto& name : datasets) {
      auto it = sweeps[name].find(p);
      if (it == sweeps[name].end()) continue;
      if (!counts.empty()) counts += " / ";
      counts += std::to_string(it->second.synthetic_count);
    }
    s << "<text class=\"x-upper\" x=\"" << fixed(px) << "\" y=\"" << fixed(Frame::top - 8)
      << "\" text-anchor=\"middle\">" << counts << "</text>\n";
  }
  s << "<text x=\"" << fixed((Frame::left + Frame::right) / 2) << "\" y=\""
    << fixed(Frame::bottom + 38) << "\" text-anchor=\"middle\">synthetic data added (%)</text>\n";
  s << "<text x=\"" << fixed((Frame::left + Frame::right) / 2) << "\" y=\""
    << fixed(Frame::top - 28) << "\" text-anchor=\"middle\">synthetic images added</text>\n";

  // baselines
  for (const auto& name : datasets) {
    const auto st = detail::dataset_style(name);
    const auto& b = baselines[name];
    if (!b) {
      out.warnings.push_back("no baseline for dataset " + name);
      continue;
    }
    if (!in_range(b->value)) {
      omit(*b);
      continue;
    }
    const double py = f.y_of(b->value);
    s << "<line class=\"baseline\" data-dataset=\"" << xml_escape(name) << "\" data-value=\""
      << format_number(b->value) << "\" x1=\"" << fixed(Frame::left) << "\" y1=\"" << fixed(py)
      << "\" x2=\"" << fixed(Frame::right) << "\" y2=\"" << fixed(py) << "\" stroke=\"" << st.color
      << "\" stroke-width=\"2\" stroke-dasharray=\"" << st.dash << "\"/>\n";
  }

  // bars
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    const auto& name = datasets[d];
    const auto st = detail::dataset_style(name);
    for (const auto& [p, r] : sweeps[name]) {
      if (!in_range(r.value)) {
        omit(r);
        continue;
      }
      const double cx = f.x(p) + bar_offset(d, datasets.size());
      const double cy = f.y_of(r.value);
      s << "<g class=\"point\" data-dataset=\"" << xml_escape(name) << "\" data-percent=\""
        << format_number(p) << "\" data-count=\"" << r.synthetic_count << "\" data-value=\""
        << format_number(r.value) << "\">";
      s << "<rect x=\"" << fixed(cx - kBarWidth / 2) << "\" y=\"" << fixed(cy) << "\" width=\""
        << fixed(kBarWidth) << "\" height=\"" << fixed(Frame::bottom - cy) << "\" fill=\""
        << st.color << "\" fill-opacity=\"0.45\"/>";
      s << "<circle cx=\"" << fixed(cx) << "\" cy=\"" << fixed(cy) << "\" r=\"3.5\" fill=\""
        << st.color << "\"/></g>\n";
    }
  }

  // legend
  double ly = Frame::top + 14;
  for (const auto& name : datasets) {
    const auto st = detail::dataset_style(name);
    s << "<line x1=\"" << fixed(Frame::right - 130) << "\" y1=\"" << fixed(ly) << "\" x2=\""
      << fixed(Frame::right - 105) << "\" y2=\"" << fixed(ly) << "\" stroke=\"" << st.color
      << "\" stroke-width=\"2\" stroke-dasharray=\"" << st.dash << "\"/>";
    s << "<text x=\"" << fixed(Frame::right - 100) << "\" y=\"" << fixed(ly + 4) << "\">"
      << xml_escape(name) << "</text>\n";
    ly += 16;
  }

  // caption notes
  double cy = Frame::bottom + 62;
  if (!out.omitted.empty()) {
    std::string note = "Not shown (outside " + fixed(y.min, 1) + "-" + fixed(y.max, 1) + "): ";
    for (std::size_t i = 0; i < out.omitted.size(); ++i) {
      note += (i ? "; " : "") + out.omitted[i];
    }
    s << "<text class=\"note\" x=\"" << fixed(Frame::left) << "\" y=\"" << fixed(cy) << "\">"
      << xml_escape(note) << "</text>\n";
    cy += 16;
  }
  for (const auto& w : out.warnings) {
    s << "<text class=\"warning\" x=\"" << fixed(Frame::left) << "\" y=\"" << fixed(cy)
      << "\" fill=\"#b00000\">" << xml_escape("Warning: " + w) << "</text>\n";
    cy += 16;
  }
  s << "</svg>\n";
  out.svg = s.str();
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  os << text;
}

struct PerClassOutput {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

// One sweep plot per class from the metrics named "<metric>_<c>", written
// as <out_dir>/<metric>_<c>.svg. Classes without any rows are skipped.
inline PerClassOutput render_per_class_svg(std::span<const SweepResult> results,
                                           const std::string& metric, std::size_t num_classes,
                                           YRange y, const std::filesystem::path& out_dir,
                                           std::span<const std::string> class_names = {}) {
  PerClassOutput out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::string name = metric + "_" + std::to_string(c);
    const bool any = std::any_of(results.begin(), results.end(),
                                 [&](const SweepResult& r) { return r.metric == name; });
    if (!any) {
      out.warnings.push_back("no results for " + name + "; plot skipped");
      continue;
    }
    std::string title = name;
    if (c < class_names.size()) title += " (" + class_names[c] + ")";
    RenderOutput r = render_sweep_svg(results, name, y, title);
    const auto path = out_dir / (name + ".svg");
    write_text(path, r.svg);
    out.files.push_back(path);
    for (auto& w : r.warnings) out.warnings.push_back(name + ": " + w);
  }
  return out;
}

// Re-derives every plotted marker and baseline of a rendered sweep from
// `results`: each must match a row by dataset and percent, sit at the frame
// position of that row's value, and every in-range row must be plotted
// exactly once. Returns one line per mismatch.
inline std::vector<std::string> cross_check_svg(const std::string& svg,
                                                std::span<const SweepResult> results,
                                                const std::string& metric, YRange y) {
  std::vector<std::string> problems;
  const Frame f = sweep_frame(results, metric, y);
  std::map<std::pair<std::string, double>, const SweepResult*> rows;
  std::map<std::string, const SweepResult*> base;
  for (const auto& r : results) {
    if (r.metric != metric) continue;
    if (r.is_baseline) {
      base[r.dataset] = &r;
    } else {
      rows[{r.dataset, r.percent}] = &r;
    }
  }
  auto unescape = [](std::string v) {
    for (auto [from, to] : {std::pair{"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&amp;", "&"}}) {
      for (std::size_t at; (at = v.find(from)) != std::string::npos;) v.replace(at, std::strlen(from), to);
    }
    return v;
  };
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-3 + 1e-9 * std::abs(b); };

  std::set<std::pair<std::string, double>> seen;
  static const std::regex point_re(
      R"re(<g class="point" data-dataset="([^"]*)" data-percent="([^"]*)" data-count="([^"]*)" data-value="([^"]*)">.*?<circle cx="([^"]*)" cy="([^"]*)")re");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), point_re); it != std::sregex_iterator();
       ++it) {
    const auto& m = *it;
    const std::string ds = unescape(m[1]);
    const double p = std::stod(m[2]);
    const auto row = rows.find({ds, p});
    if (row == rows.end()) {
      problems.push_back("plotted point " + ds + " " + m[2].str() + "% has no table row");
      continue;
    }
    const SweepResult& r = *row->second;
    if (!seen.insert({ds, p}).second) problems.push_back("point " + ds + " " + m[2].str() + "% plotted twice");
    if (std::stoull(m[3]) != r.synthetic_count) problems.push_back(ds + " " + m[2].str() + "%: count differs");
    if (std::stod(m[4]) != r.value) problems.push_back(ds + " " + m[2].str() + "%: value differs");
    if (!near(f.value_of(std::stod(m[6])), r.value)) {
      problems.push_back(ds + " " + m[2].str() + "%: marker height does not match value");
    }
  }
  for (const auto& [key, r] : rows) {
    const bool visible = r->value >= y.min && r->value <= y.max;
    if (visible && !seen.count(key)) problems.push_back(key.first + " " + format_number(key.second) + "%: not plotted");
    if (!visible && seen.count(key)) problems.push_back(key.first + " " + format_number(key.second) + "%: out of range but plotted");
  }

  static const std::regex base_re(
      R"re(<line class="baseline" data-dataset="([^"]*)" data-value="([^"]*)" x1="[^"]*" y1="([^"]*)")re");
  std::set<std::string> lines;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), base_re); it != std::sregex_iterator();
       ++it) {
    const std::string ds = unescape((*it)[1]);
    lines.insert(ds);
    const auto b = base.find(ds);
    if (b == base.end()) {
      problems.push_back("baseline line for " + ds + " has no table row");
    } else if (std::stod((*it)[2]) != b->second->value ||
               !near(f.value_of(std::stod((*it)[3])), b->second->value)) {
      problems.push_back("baseline line for " + ds + " does not match its value");
    }
  }
  for (const auto& [ds, r] : base) {
    const bool visible = r->value >= y.min && r->value <= y.max;
    if (visible != static_cast<bool>(lines.count(ds))) problems.push_back("baseline for " + ds + " misplotted");
  }
  return problems;
}

}  // namespace msf::report
