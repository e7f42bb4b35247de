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
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "msf/report.hpp"
#include "svg_check.hpp"

namespace fs = std::filesystem;
using msf::ErrorKind;
using msf::report::SweepResult;
using msf::report::YRange;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("msf_report_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t at = text.find(needle); at != std::string::npos; at = text.find(needle, at + 1)) ++n;
  return n;
}

std::vector<SweepResult> sweep_rows() {
  std::vector<SweepResult> rows;
  const double percents[] = {50, 75, 100, 150, 200, 250, 300};
  const double a[] = {82.5, 84.1, 85.0, 85.9, 86.2, 86.0, 87.4};
  const double b[] = {71.3, 72.8, 74.0, 73.1, 75.6, 76.2, 76.9};
  for (int i = 0; i < 7; ++i) {
    rows.push_back({"alpha", percents[i], static_cast<std::uint64_t>(percents[i] * 16 / 100), "miou", a[i], false});
    rows.push_back({"beta", percents[i], static_cast<std::uint64_t>(percents[i] * 48 / 100), "miou", b[i], false});
  }
  rows.push_back({"alpha", 0, 0, "miou", 81.0, true});
  rows.push_back({"beta", 0, 0, "miou", 70.2, true});
  return rows;
}

}  // namespace

TEST(MetricsCsv, EmptyTableIsHeaderOnly) {
  const fs::path p = scratch("empty") / "m.csv";
  msf::report::write_metrics_csv(p, {});
  EXPECT_EQ(slurp(p), std::string(msf::report::kCsvHeader) + "\n");
  EXPECT_TRUE(msf::report::read_metrics_csv(p).empty());
}

TEST(MetricsCsv, RoundTrip) {
  const fs::path p = scratch("round") / "m.csv";
  const std::vector<SweepResult> rows = {{"alpha", 50, 8, "miou", 82.5, false},
                                         {"beta, two", 0, 0, "accuracy", 97.25, true},
                                         {"gamma", 300, 144, "missing_class_iou_2", 0.1 + 0.2, false}};
  msf::report::write_metrics_csv(p, rows);
  EXPECT_EQ(msf::report::read_metrics_csv(p), rows);
}

TEST(MetricsCsv, BadHeaderIsIoError) {
  const fs::path p = scratch("header") / "m.csv";
  std::ofstream(p) << "dataset,percent,value\nalpha,50,1\n";
  try {
    msf::report::read_metrics_csv(p);
    FAIL();
  } catch (const msf::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(MetricsCsv, MalformedNumberIsIoError) {
  const fs::path p = scratch("number") / "m.csv";
  std::ofstream(p) << msf::report::kCsvHeader << "\nalpha,fifty,8,miou,82.5,false\n";
  try {
    msf::report::read_metrics_csv(p);
    FAIL();
  } catch (const msf::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(MetricsCsv, MissingFileIsMissingArtifact) {
  try {
    msf::report::read_metrics_csv(scratch("missing") / "absent.csv");
    FAIL();
  } catch (const msf::Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing_artifact);
  }
}

TEST(SweepPlot, SinglePointAndBaseline) {
  const std::vector<SweepResult> rows = {{"alpha", 100, 16, "miou", 80.0, false},
                                         {"alpha", 0, 0, "miou", 75.0, true}};
  const auto out = msf::report::render_sweep_svg(rows, "miou", YRange{60, 100}, "t");
  EXPECT_EQ(count(out.svg, "class=\"point\""), 1u);
  EXPECT_EQ(count(out.svg, "class=\"baseline\""), 1u);
  EXPECT_TRUE(out.warnings.empty());
  EXPECT_TRUE(out.omitted.empty());
  EXPECT_EQ(count(out.svg, "class=\"note\""), 0u);
}

TEST(SweepPlot, EveryPointMatchesTable) {
  const auto rows = sweep_rows();
  const YRange y{60, 100};
  const auto out = msf::report::render_sweep_svg(rows, "miou", y, "sweep");
  const auto rep = svgcheck::compare(out.svg, rows, "miou");
  for (const auto& m : rep.mismatches) ADD_FAILURE() << m;
  EXPECT_EQ(rep.points, 14u);
  EXPECT_EQ(rep.baselines, 2u);
  EXPECT_TRUE(msf::report::cross_check_svg(out.svg, rows, "miou", y).empty());
}

TEST(SweepPlot, OutOfRangeValueIsNamedNotDrawn) {
  auto rows = sweep_rows();
  rows[2].value = 55.5;  // alpha 75%
  const auto out = msf::report::render_sweep_svg(rows, "miou", YRange{60, 100}, "sweep");
  const auto rep = svgcheck::compare(out.svg, rows, "miou");
  for (const auto& m : rep.mismatches) ADD_FAILURE() << m;
  EXPECT_EQ(rep.points, 13u);
  EXPECT_NE(rep.note.find("outside 60.0-100.0"), std::string::npos) << rep.note;
  EXPECT_NE(rep.note.find("alpha 75%"), std::string::npos) << rep.note;
  EXPECT_NE(rep.note.find("55.5"), std::string::npos) << rep.note;
  ASSERT_EQ(out.omitted.size(), 1u);
}

TEST(SweepPlot, OutOfRangeBaselineIsNamed) {
  auto rows = sweep_rows();
  rows.back().value = 101;
  const auto out = msf::report::render_sweep_svg(rows, "miou", YRange{60, 100}, "sweep");
  EXPECT_EQ(count(out.svg, "class=\"baseline\""), 1u);
  EXPECT_NE(out.svg.find("beta baseline"), std::string::npos);
}

TEST(SweepPlot, ByteDeterministic) {
  const auto rows = sweep_rows();
  const fs::path dir = scratch("det");
  msf::report::write_text(dir / "a.svg", msf::report::render_sweep_svg(rows, "miou", {60, 100}, "s").svg);
  auto shuffled = rows;
  std::reverse(shuffled.begin(), shuffled.end());
  msf::report::write_text(dir / "b.svg", msf::report::render_sweep_svg(shuffled, "miou", {60, 100}, "s").svg);
  EXPECT_EQ(slurp(dir / "a.svg"), slurp(dir / "b.svg"));
}

TEST(SweepPlot, MissingBaselineWarns) {
  auto rows = sweep_rows();
  rows.pop_back();
  const auto out = msf::report::render_sweep_svg(rows, "miou", {60, 100}, "s");
  ASSERT_EQ(out.warnings.size(), 1u);
  EXPECT_NE(out.warnings[0].find("no baseline for dataset beta"), std::string::npos);
  EXPECT_NE(out.svg.find("class=\"warning\""), std::string::npos);
}

TEST(SweepPlot, DuplicateRowsRejected) {
  auto rows = sweep_rows();
  rows.push_back(rows.front());
  EXPECT_THROW(msf::report::render_sweep_svg(rows, "miou", {60, 100}, "s"), msf::Error);
}

TEST(SweepPlot, CrossCheckCatchesTampering) {
  const auto rows = sweep_rows();
  const YRange y{60, 100};
  std::string svg = msf::report::render_sweep_svg(rows, "miou", y, "s").svg;
  const std::string needle = "data-value=\"84.099999999999994\"";
  const auto at = svg.find(needle);
  ASSERT_NE(at, std::string::npos);
  svg.replace(at, needle.size(), "data-value=\"84.200000000000003\"");
  EXPECT_FALSE(msf::report::cross_check_svg(svg, rows, "miou", y).empty());
  EXPECT_FALSE(svgcheck::compare(svg, rows, "miou").mismatches.empty());

  auto fewer = rows;
  fewer.erase(fewer.begin());
  const std::string full = msf::report::render_sweep_svg(rows, "miou", y, "s").svg;
  EXPECT_FALSE(msf::report::cross_check_svg(full, fewer, "miou", y).empty());
}

TEST(PerClassPlot, WritesOneFilePerClass) {
  std::vector<SweepResult> rows;
  for (int c = 0; c < 4; ++c) {
    const std::string m = "iou_" + std::to_string(c);
    const double v = c == 3 ? 0.0 : 50.0 + 10 * c;
    rows.push_back({"alpha", 100, 16, m, v, false});
    rows.push_back({"alpha", 0, 0, m, v - 1 < 0 ? 0 : v - 1, true});
  }
  const fs::path dir = scratch("per_class");
  const auto out = msf::report::render_per_class_svg(rows, "iou", 4, YRange{0, 100}, dir);
  ASSERT_EQ(out.files.size(), 4u);
  for (int c = 0; c < 4; ++c) {
    const fs::path p = dir / ("iou_" + std::to_string(c) + ".svg");
    ASSERT_TRUE(fs::exists(p));
    const std::string svg = slurp(p);
    EXPECT_EQ(count(svg, "class=\"point\""), 1u) << p;
    const auto rep = svgcheck::compare(svg, rows, "iou_" + std::to_string(c));
    for (const auto& m : rep.mismatches) ADD_FAILURE() << m;
  }
}

TEST(PerClassPlot, ClassWithoutRowsIsSkipped) {
  const std::vector<SweepResult> rows = {{"alpha", 100, 16, "iou_0", 70, false},
                                         {"alpha", 0, 0, "iou_0", 65, true}};
  const fs::path dir = scratch("skip");
  const auto out = msf::report::render_per_class_svg(rows, "iou", 2, YRange{0, 100}, dir);
  EXPECT_EQ(out.files.size(), 1u);
  EXPECT_FALSE(fs::exists(dir / "iou_1.svg"));
  ASSERT_EQ(out.warnings.size(), 1u);
  EXPECT_NE(out.warnings[0].find("iou_1"), std::string::npos);
}
