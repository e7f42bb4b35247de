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
#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "msf/pipeline.hpp"
#include "msf/png_io.hpp"

namespace fs = std::filesystem;
namespace pl = msf::pipeline;

namespace {

struct Outcome {
  int code = -1;
  std::string output;
};

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("msf_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Outcome run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + MSF_CLI_PATH + "\" " + args + " 2>&1";
  Outcome out;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out.output += buf;
  const int status = pclose(pipe);
  out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

}  // namespace

TEST(Cli, UnknownSubcommandIsUsageError) {
  const auto r = run_cli("frobnicate");
  EXPECT_EQ(r.code, 1) << r.output;
}

TEST(Cli, NoSubcommandIsUsageError) {
  const auto r = run_cli("");
  EXPECT_EQ(r.code, 1) << r.output;
}

TEST(Cli, SampleBeforeTrainingIsMissingArtifact) {
  const fs::path dir = scratch("sample");
  const auto r = run_cli("--out-dir \"" + dir.string() + "\" sample --count 1");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("kind=missing_artifact"), std::string::npos) << r.output;
}

TEST(Cli, UnknownConfigKeyIsConfigError) {
  const fs::path dir = scratch("config");
  std::ofstream(dir / "c.json") << R"({"seed": 3, "vqvae": {"num_embedings": 8}})";
  const auto r = run_cli("--config \"" + (dir / "c.json").string() + "\" --out-dir \"" + dir.string() +
                         "\" sample");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("num_embedings"), std::string::npos) << r.output;
}

TEST(Cli, MissingConfigFileIsConfigError) {
  const fs::path dir = scratch("noconfig");
  const auto r = run_cli("--config \"" + (dir / "absent.json").string() + "\" --out-dir \"" +
                         dir.string() + "\" sample");
  EXPECT_EQ(r.code, 2) << r.output;
}

TEST(Cli, EvaluateSizeMismatchNamesImage) {
  const fs::path dir = scratch("eval");
  const msf::Palette palette = msf::Palette::standard(4);
  msf::png::write_mask(dir / "gt" / "img_a.png", msf::ClassMask(8, 8, palette, 0));
  msf::png::write_mask(dir / "pred" / "img_a.png", msf::ClassMask(8, 6, palette, 0));
  const auto r = run_cli("--out-dir \"" + (dir / "out").string() + "\" evaluate --gt-dir \"" +
                         (dir / "gt").string() + "\" --pred-dir \"" + (dir / "pred").string() + "\"");
  EXPECT_EQ(r.code, 5) << r.output;
  EXPECT_NE(r.output.find("error: kind="), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("img_a"), std::string::npos) << r.output;
}

TEST(Cli, EvaluateWritesTables) {
  const fs::path dir = scratch("eval_ok");
  const msf::Palette palette = msf::Palette::standard(4);
  msf::ClassMask gt(4, 4, palette, 0), pred(4, 4, palette, 0);
  gt.set(1, 1, 2);
  pred.set(1, 1, 2);
  pred.set(2, 2, 3);
  msf::png::write_mask(dir / "gt" / "a.png", gt);
  msf::png::write_mask(dir / "pred" / "a.png", pred);
  const auto r = run_cli("--out-dir \"" + (dir / "out").string() + "\" evaluate --gt-dir \"" +
                         (dir / "gt").string() + "\" --pred-dir \"" + (dir / "pred").string() +
                         "\" --dataset d --percent 50");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rows = msf::report::read_metrics_csv(dir / "out" / "reports" / "eval" / "d_p50" / "sweep.csv");
  bool found = false;
  for (const auto& row : rows) {
    if (row.metric == "accuracy") {
      EXPECT_DOUBLE_EQ(row.value, 100.0 * 15 / 16);
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(Config, EmptyConfigGivesDefaults) {
  const fs::path dir = scratch("defaults");
  std::ofstream(dir / "c.json") << "{}";
  const pl::PipelineConfig c = pl::load_config(dir / "c.json");
  EXPECT_EQ(c.percents, (std::vector<std::size_t>{50, 75, 100, 150, 200, 250, 300}));
  EXPECT_EQ(c.maskproc.min_area, 200u);
  EXPECT_EQ(c.maskproc.reference_size, 256u);
  EXPECT_EQ(c.num_classes, 4u);
  EXPECT_EQ(pl::to_json(c), pl::to_json(pl::load_config(std::nullopt)));
}

TEST(Config, ZeroCodebookRejected) {
  try {
    pl::from_json(msf::Json::parse(R"({"vqvae": {"num_embeddings": 0}})"));
    FAIL();
  } catch (const msf::Error& e) {
    EXPECT_EQ(e.kind(), msf::ErrorKind::config);
  }
}

TEST(Config, WrongTypeRejected) {
  try {
    pl::from_json(msf::Json::parse(R"({"seed": "seven"})"));
    FAIL();
  } catch (const msf::Error& e) {
    EXPECT_EQ(e.kind(), msf::ErrorKind::config);
  }
}

TEST(Config, JsonRoundTrip) {
  pl::PipelineConfig c;
  c.seed = 99;
  c.percents = {10, 20};
  c.maskproc.min_area = 150;
  c.sample.temperature = 0.5;
  c.report.y_min = 40;
  const msf::Json j = pl::to_json(c);
  EXPECT_EQ(pl::to_json(pl::from_json(j)), j);
  EXPECT_EQ(pl::config_hash(pl::from_json(j)), pl::config_hash(c));
  EXPECT_NE(pl::config_hash(c), pl::config_hash(pl::PipelineConfig{}));
}
