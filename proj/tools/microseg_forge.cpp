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

// microseg-forge <subcommand> [--config PATH] [--seed N] [--out-dir DIR] [flags...]
//
// Exit status: 0 ok, 1 usage, 2 config, 3 missing artifact, 4 numeric
// failure, 5 I/O or bad input. Failures print one line to stderr:
//   error: kind=<kind> code=<status> message=<text>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msf/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
namespace pl = msf::pipeline;

int exit_code(msf::ErrorKind kind) {
  switch (kind) {
    case msf::ErrorKind::config: return 2;
    case msf::ErrorKind::missing_artifact: return 3;
    case msf::ErrorKind::numeric: return 4;
    case msf::ErrorKind::io:
    case msf::ErrorKind::invalid_argument: return 5;
  }
  return 5;
}

const char* kind_name(msf::ErrorKind kind) {
  switch (kind) {
    case msf::ErrorKind::config: return "config";
    case msf::ErrorKind::missing_artifact: return "missing_artifact";
    case msf::ErrorKind::numeric: return "numeric";
    case msf::ErrorKind::io: return "io";
    case msf::ErrorKind::invalid_argument: return "invalid_input";
  }
  return "io";
}

int report_error(const char* kind, int code, std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error: kind=" << kind << " code=" << code << " message=" << message << '\n';
  return code;
}

struct Globals {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  fs::path out_dir = ".";
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic microstructure segmentation data pipeline", "microseg-forge"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "pipeline config (JSON)");
  app.add_option("--seed", g.seed, "global seed (overrides the config)");
  app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();

  std::function<void(pl::Run&)> action;
  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->fallthrough();
    return s;
  };

  pl::PatchifyOptions patchify;
  auto* s_patchify = sub("patchify", "cut an image/mask pair into a grid of square patches");
  s_patchify->add_option("--image", patchify.image, "RGB PNG")->required();
  s_patchify->add_option("--mask", patchify.mask, "mask PNG (palette gray or class index)")->required();
  s_patchify->add_option("--patch-size", patchify.patch_size, "patch side in pixels");
  s_patchify->callback([&] { action = [&](pl::Run& r) { pl::run_patchify(r, patchify); }; });

  pl::JoinOptions join;
  auto* s_join = sub("join", "combine RGB images and masks into 4-channel dual images");
  s_join->add_option("--image", join.image, "RGB PNG or directory")->required();
  s_join->add_option("--mask", join.mask, "mask PNG or directory with matching names")->required();
  s_join->callback([&] { action = [&](pl::Run& r) { pl::run_join(r, join); }; });

  pl::SplitOptions split;
  auto* s_split = sub("split", "separate dual images into RGB images and raw mask planes");
  s_split->add_option("--input", split.dual, "dual PNG or directory")->required();
  s_split->callback([&] { action = [&](pl::Run& r) { pl::run_split(r, split); }; });

  pl::ToygenOptions toygen;
  auto* s_toygen = sub("toygen", "generate procedural toy images with exact masks");
  s_toygen->add_option("--name", toygen.name, "dataset name")->capture_default_str();
  s_toygen->add_option("--count", toygen.count, "number of images");
  s_toygen->add_option("--size", toygen.size, "image side in pixels");
  s_toygen->add_option("--validation", toygen.validation, "images in the validation role");
  s_toygen->add_option("--test", toygen.test, "images in the test role");
  s_toygen->callback([&] { action = [&](pl::Run& r) { pl::run_toygen(r, toygen); }; });

  pl::TrainVqvaeOptions train_vq;
  auto* s_train_vq = sub("train-vqvae", "train the dual-image VQ-VAE");
  s_train_vq->add_option("--manifest", train_vq.manifest, "dataset manifest")->required();
  s_train_vq->add_option("--updates", train_vq.updates, "optimizer steps");
  s_train_vq->callback([&] { action = [&](pl::Run& r) { pl::run_train_vqvae(r, train_vq); }; });

  pl::EncodeOptions encode;
  auto* s_encode = sub("encode", "encode train and validation images to code grids");
  s_encode->add_option("--manifest", encode.manifest, "dataset manifest")->required();
  s_encode->callback([&] { action = [&](pl::Run& r) { pl::run_encode(r, encode); }; });

  pl::TrainPixelcnnOptions train_pc;
  auto* s_train_pc = sub("train-pixelcnn", "train the PixelCNN prior on code grids");
  s_train_pc->add_option("--grid-dir", train_pc.grid_dir, "directory of .mszg grids");
  s_train_pc->add_option("--updates", train_pc.updates, "optimizer steps");
  s_train_pc->callback([&] { action = [&](pl::Run& r) { pl::run_train_pixelcnn(r, train_pc); }; });

  pl::SampleOptions sample;
  bool greedy = false;
  auto* s_sample = sub("sample", "sample code grids and decode them to dual images");
  s_sample->add_option("--count", sample.count, "number of samples");
  s_sample->add_option("--temperature", sample.temperature, "softmax temperature");
  s_sample->add_flag("--greedy", greedy, "argmax at every cell");
  s_sample->add_option("--grid-height", sample.grid_height, "code grid rows");
  s_sample->add_option("--grid-width", sample.grid_width, "code grid columns");
  s_sample->callback([&] {
    if (greedy) sample.greedy = true;
    action = [&](pl::Run& r) { pl::run_sample(r, sample); };
  });

  pl::PostprocessOptions post;
  auto* s_post = sub("postprocess", "recover class masks from dual images");
  s_post->add_option("--input", post.dual_dir, "directory of dual PNGs");
  s_post->add_option("--min-area", post.min_area, "minimum region area at the reference size");
  s_post->callback([&] { action = [&](pl::Run& r) { pl::run_postprocess(r, post); }; });

  pl::ComposeOptions compose;
  auto* s_compose = sub("compose", "add synthetic pairs to a base dataset");
  s_compose->add_option("--base", compose.base, "base manifest")->required();
  s_compose->add_option("--pool", compose.pool_dir, "directory with images/ and masks/");
  s_compose->add_option("--percent", compose.percents, "percent to add (repeatable)");
  s_compose->callback([&] { action = [&](pl::Run& r) { pl::run_compose(r, compose); }; });

  pl::EvaluateOptions evaluate;
  auto* s_eval = sub("evaluate", "score predicted masks against ground truth");
  s_eval->add_option("--manifest", evaluate.manifest, "manifest whose test entries are the ground truth");
  s_eval->add_option("--gt-dir", evaluate.gt_dir, "directory of ground-truth masks");
  s_eval->add_option("--pred-dir", evaluate.pred_dir, "directory of predicted masks")->required();
  s_eval->add_option("--dataset", evaluate.dataset, "dataset name");
  s_eval->add_option("--percent", evaluate.percent, "percent synthetic");
  s_eval->add_option("--synthetic-count", evaluate.synthetic_count, "synthetic images added");
  s_eval->callback([&] { action = [&](pl::Run& r) { pl::run_evaluate(r, evaluate); }; });

  pl::ReportOptions rep;
  auto* s_report = sub("report", "merge metric tables and render sweep plots");
  s_report->add_option("--table", rep.tables, "sweep table (repeatable)");
  s_report->add_option("--metric", rep.metric, "metric to plot");
  s_report->add_option("--y-min", rep.y_min, "lower end of the value axis");
  s_report->add_option("--y-max", rep.y_max, "upper end of the value axis");
  s_report->callback([&] { action = [&](pl::Run& r) { pl::run_report(r, rep); }; });

  auto* s_demo = sub("demo", "run the whole pipeline on generated toy data");
  s_demo->callback([&] {
    action = [&](pl::Run& r) {
      const auto s = pl::run_demo(r);
      std::printf("vqvae validation error %.6g -> %.6g (ratio %.4f)\n", s.vqvae_initial_error,
                  s.vqvae_best_error, s.vqvae_best_error / s.vqvae_initial_error);
      std::printf("pixelcnn validation loss %.6g -> %.6g\n", s.pixelcnn_initial_loss,
                  s.pixelcnn_best_loss);
      std::printf("%zu samples, %zu flagged without foreground\n", s.samples, s.flagged.size());
      std::printf("plot: %s\n", s.plot.string().c_str());
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", 1, e.what());
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    msf::pipeline::PipelineConfig cfg = pl::load_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    pl::DirectoryLock lock(g.out_dir);
    pl::Run run(name, cfg, g.out_dir);
    if (g.config) run.input(*g.config);
    action(run);
    for (const auto& w : run.warnings()) std::cerr << "warning: " << w << '\n';
    run.write_provenance();
  } catch (const msf::Error& e) {
    return report_error(kind_name(e.kind()), exit_code(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return report_error("io", 5, e.what());
  } catch (const std::exception& e) {
    return report_error("io", 5, e.what());
  }
  return 0;
}
