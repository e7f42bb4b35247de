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

// Reads a rendered sweep plot back and compares it with the metric table.
// Geometry comes from the SVG itself (frame rectangle, data-y-* attributes
// and percent labels), not from the renderer's constants.

#include <cmath>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "msf/report.hpp"

namespace svgcheck {

inline std::string attr(const std::string& tag, const std::string& name) {
  const std::regex re("\\b" + name + "=\"([^\"]*)\"");
  std::smatch m;
  if (!std::regex_search(tag, m, re)) return {};
  return m[1];
}

inline double num(const std::string& tag, const std::string& name) {
  const std::string v = attr(tag, name);
  return v.empty() ? std::nan("") : std::stod(v);
}

struct Report {
  std::vector<std::string> mismatches;
  std::size_t points = 0;
  std::size_t baselines = 0;
  std::string note;
};

inline Report compare(const std::string& svg, const std::vector<msf::report::SweepResult>& rows,
                      const std::string& metric) {
  Report rep;
  auto bad = [&](const std::string& m) { rep.mismatches.push_back(m); };
  std::smatch m;
  if (!std::regex_search(svg, m, std::regex("<svg [^>]*>"))) {
    bad("no svg element");
    return rep;
  }
  const std::string root = m[0];
  const double ymin = num(root, "data-y-min"), ymax = num(root, "data-y-max");
  if (attr(root, "data-metric") != metric) bad("metric attribute differs");
  if (!std::regex_search(svg, m, std::regex("<rect class=\"frame\"[^>]*>"))) {
    bad("no frame");
    return rep;
  }
  const double top = num(m[0], "y"), bottom = top + num(m[0], "height");
  auto value_at = [&](double py) { return ymin + (bottom - py) / (bottom - top) * (ymax - ymin); };
  const double tol = 1e-3 * (ymax - ymin) / (bottom - top) + 1e-9;

  std::map<double, double> label_x;
  const std::regex lower("<text class=\"x-lower\"[^>]*>([^<]*)</text>");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), lower); it != std::sregex_iterator(); ++it) {
    std::string text = (*it)[1];
    if (!text.empty() && text.back() == '%') text.pop_back();
    label_x[std::stod(text)] = num((*it)[0], "x");
  }

  std::set<std::string> datasets;
  std::map<std::pair<std::string, double>, const msf::report::SweepResult*> sweep;
  std::map<std::string, const msf::report::SweepResult*> base;
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    datasets.insert(r.dataset);
    if (r.is_baseline) {
      base[r.dataset] = &r;
    } else {
      sweep[{r.dataset, r.percent}] = &r;
    }
  }
  auto in_range = [&](double v) { return v >= ymin && v <= ymax; };
  const double spread = static_cast<double>(datasets.size()) * 16.0 / 2 + 1;

  std::set<std::pair<std::string, double>> seen;
  const std::regex point("<g class=\"point\"[^>]*>.*?<circle [^>]*>");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), point); it != std::sregex_iterator(); ++it) {
    ++rep.points;
    const std::string g = (*it)[0];
    const std::string ds = attr(g, "data-dataset");
    const double pct = num(g, "data-percent");
    const auto found = sweep.find({ds, pct});
    if (found == sweep.end()) {
      bad("point without a table row: " + ds + " " + std::to_string(pct));
      continue;
    }
    const auto& r = *found->second;
    if (!seen.insert({ds, pct}).second) bad("point drawn twice: " + ds);
    std::smatch c;
    const std::string circle = std::regex_search(g, c, std::regex("<circle [^>]*>")) ? c[0].str() : "";
    if (std::abs(value_at(num(circle, "cy")) - r.value) > tol) bad("height differs: " + ds);
    if (num(g, "data-value") != r.value) bad("value attribute differs: " + ds);
    if (num(g, "data-count") != static_cast<double>(r.synthetic_count)) bad("count differs: " + ds);
    if (!label_x.count(pct) || std::abs(num(circle, "cx") - label_x[pct]) > spread) {
      bad("x position differs: " + ds);
    }
    if (!in_range(r.value)) bad("out-of-range value plotted: " + ds);
  }
  for (const auto& [key, r] : sweep) {
    if (in_range(r->value) && !seen.count(key)) bad("row not plotted: " + key.first);
  }

  const std::regex line("<line class=\"baseline\"[^>]*>");
  std::set<std::string> drawn;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), line); it != std::sregex_iterator(); ++it) {
    ++rep.baselines;
    const std::string l = (*it)[0];
    const std::string ds = attr(l, "data-dataset");
    if (!base.count(ds)) {
      bad("baseline without a table row: " + ds);
      continue;
    }
    drawn.insert(ds);
    if (std::abs(value_at(num(l, "y1")) - base[ds]->value) > tol) bad("baseline height differs: " + ds);
  }
  for (const auto& [ds, r] : base) {
    if (in_range(r->value) && !drawn.count(ds)) bad("baseline not drawn: " + ds);
  }

  if (std::regex_search(svg, m, std::regex("<text class=\"note\"[^>]*>([^<]*)</text>"))) rep.note = m[1];
  return rep;
}

}  // namespace svgcheck
