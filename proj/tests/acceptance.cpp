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
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_cases.hpp"
#include "metric_cases.hpp"
#include "msf/dataprep.hpp"
#include "msf/maskproc.hpp"
#include "msf/metrics.hpp"
#include "msf/pipeline.hpp"
#include "msf/pixelcnn.hpp"
#include "msf/report.hpp"
#include "msf/vqvae.hpp"
#include "oracles.hpp"
#include "svg_check.hpp"

namespace fs = std::filesystem;
using namespace msf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
  void note(const std::string& what) {
    if (pass) detail += (detail.empty() ? "" : "; ") + what;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("msf_acceptance_" + name);
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

// ---------------------------------------------------------------------------

Verdict tallies() {
  Verdict v;
  const auto t = cases::tally_pair();
  const auto cm = metrics::confusion(t.gt, t.pred, 4);
  const double missing = (1 + 0.5 + 32.0 / 34) / 3, miou = (1 + 0.5 + 32.0 / 34 + 0) / 4;
  v.check(std::abs(metrics::missing_class_iou(cm) - missing) <= 1e-9, "missing class IoU");
  v.check(std::abs(metrics::mean_iou(cm) - miou) <= 1e-9, "mIoU");
  v.check(std::abs(metrics::pixel_accuracy(cm) - 34.0 / 36) <= 1e-9, "accuracy");
  v.note("missing " + fmt("%.12f", metrics::missing_class_iou(cm)) + " mIoU " +
         fmt("%.12f", metrics::mean_iou(cm)));
  return v;
}

Verdict rounding() {
  Verdict v;
  for (const auto& c : cases::rounded_cases()) {
    const auto cm = cases::realize(c.targets);
    const auto ious = metrics::class_ious(cm);
    for (std::size_t k = 0; k < c.targets.size(); ++k) {
      const auto& t = c.targets[k];
      const bool ok = t.permille ? ious[k].value && *ious[k].value * 1000 == *t.permille
                                 : !ious[k].value;
      v.check(ok, "class " + std::to_string(k) + " not realized");
    }
    const double miou = metrics::round_percent(metrics::mean_iou(cm));
    const double missing = metrics::round_percent(metrics::missing_class_iou(cm));
    v.check(miou == c.miou, "mIoU " + fmt("%.1f", miou) + " expected " + fmt("%.1f", c.miou));
    v.check(missing == c.missing,
            "missing " + fmt("%.1f", missing) + " expected " + fmt("%.1f", c.missing));
    v.note(metrics::format_percent(metrics::mean_iou(cm)) + "/" +
           metrics::format_percent(metrics::missing_class_iou(cm)));
  }
  return v;
}

Verdict set_oracle() {
  Verdict v;
  const auto t0 = Clock::now();
  Rng rng(303);
  std::size_t mismatches = 0, invariant = 0;
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<std::uint8_t> gt(64), pred(64);
    const std::size_t used = 1 + rng.below(4);
    for (auto& x : gt) x = static_cast<std::uint8_t>(rng.below(used));
    for (auto& x : pred) x = static_cast<std::uint8_t>(rng.below(4));
    const auto cm = metrics::confusion(gt, pred, 4);
    const auto ious = metrics::class_ious(cm);
    for (std::uint8_t c = 0; c < 4; ++c) {
      const double o = oracle::set_iou(gt, pred, c);
      const bool ok = o < 0 ? !ious[c].value : ious[c].value && *ious[c].value == o;
      mismatches += !ok;
    }
    std::vector<std::uint8_t> perm{0, 1, 2, 3};
    rng.shuffle(perm);
    std::vector<std::uint8_t> pg(64), pp(64);
    for (std::size_t i = 0; i < 64; ++i) {
      pg[i] = perm[gt[i]];
      pp[i] = perm[pred[i]];
    }
    const auto pcm = metrics::confusion(pg, pp, 4);
    const auto pious = metrics::class_ious(pcm);
    for (std::size_t c = 0; c < 4; ++c) invariant += pious[perm[c]].value != ious[c].value;
    invariant += std::abs(metrics::mean_iou(pcm) - metrics::mean_iou(cm)) > 1e-12;
    invariant += std::abs(metrics::missing_class_iou(pcm) - metrics::missing_class_iou(cm)) > 1e-12;
    invariant += metrics::missing_class_iou(cm) < metrics::mean_iou(cm);
  }
  const double secs = seconds_since(t0);
  v.check(mismatches == 0, std::to_string(mismatches) + " IoU mismatches");
  v.check(invariant == 0, std::to_string(invariant) + " invariant violations");
  v.check(secs < 10, "took " + fmt("%.2f", secs) + " s");
  v.note("500 pairs, " + fmt("%.3f", secs) + " s");
  return v;
}

Verdict patch_arithmetic() {
  Verdict v;
  const auto patches = dataprep::patchify(RgbImage(2752, 2208), ClassMask(2752, 2208, Palette::standard(4)), 256);
  v.check(patches.size() == 80, "patchify gave " + std::to_string(patches.size()));
  dataprep::DatasetManifest base;
  base.name = "base";
  for (int i = 0; i < 16; ++i) {
    base.entries.push_back({dataprep::Role::train, dataprep::Source::real, "t" + std::to_string(i), "m", ""});
  }
  base.entries.push_back({dataprep::Role::test, dataprep::Source::real, "test", "m", ""});
  std::vector<dataprep::PoolItem> pool;
  for (int i = 0; i < 40; ++i) pool.push_back({"s" + std::to_string(i), "sm"});
  const auto composed = dataprep::compose_dataset(base, pool, 50, 1);
  v.check(composed.entries.size() == base.entries.size() + 8,
          "compose added " + std::to_string(composed.entries.size() - base.entries.size()));
  for (std::size_t b : {16u, 48u}) {
    for (std::size_t p : {50u, 75u, 100u, 150u, 200u, 250u, 300u}) {
      v.check(b * p % 100 == 0 && dataprep::synthetic_count_is_exact(b, p) &&
                  dataprep::synthetic_count(b, p) * 100 == b * p,
              "base " + std::to_string(b) + " at " + std::to_string(p) + "%");
    }
  }
  v.note("80 patches, +8 entries, 14 whole counts");
  return v;
}

Verdict gradients() {
  Verdict v;
  const auto t0 = Clock::now();
  Rng rng(505);
  double worst = 0;
  std::size_t checked = 0;
  for (const auto& op : cases::all_ops()) {
    for (int i = 0; i < 20; ++i) {
      auto c = op.make(rng);
      const double e = oracle::gradient_error(c.build, c.inputs, rng, 1e-3);
      worst = std::max(worst, e);
      ++checked;
      v.check(e <= 1e-3, op.name + " #" + std::to_string(i) + " error " + fmt("%.3g", e));
    }
  }
  const double secs = seconds_since(t0);
  v.check(secs < 30, "took " + fmt("%.1f", secs) + " s");
  v.note(std::to_string(checked) + " instances, worst " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s");
  return v;
}

Verdict quantizer() {
  Verdict v;
  Rng rng(606);
  const std::size_t K = 16, D = 8, N = 1000;
  auto cb = vqvae::Codebook::from_vectors(Tensor<float>::uniform({K, D}, -1, 1, rng));
  auto z = Tensor<float>::uniform({N, D, 1, 1}, -1.2f, 1.2f, rng);
  const auto q = vqvae::quantize(z, cb);
  std::size_t wrong = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t best = 0;
    double best_d = 0;
    for (std::size_t k = 0; k < K; ++k) {
      double d = 0;
      for (std::size_t j = 0; j < D; ++j) {
        const double diff = double(z[n * D + j]) - double(cb.vectors[k * D + j]);
        d += diff * diff;
      }
      if (k == 0 || d < best_d) {
        best = k;
        best_d = d;
      }
    }
    wrong += static_cast<std::size_t>(q.indices[n]) != best;
  }
  v.check(wrong == 0, std::to_string(wrong) + " of 1000 indices differ from the scan");

  vqvae::VqvaeConfig cfg;
  cfg.hidden1 = 8;
  cfg.hidden2 = 8;
  cfg.embedding_dim = 4;
  cfg.num_embeddings = 6;
  cfg.seed = 3;
  vqvae::VqvaeModel model(cfg);
  std::vector<DualImage> duals;
  for (auto& s : dataprep::generate_toy_dual_images(2, 16, 4, 1)) duals.push_back(s.dual);
  ad::Graph<float> g;
  ad::Var x = g.constant(vqvae::normalize(duals));
  ad::Var z_e = model.encoder(g, x, true);
  const auto qz = vqvae::quantize(g.value(z_e), model.codebook());
  ad::Var z_q = ad::straight_through(g, z_e, qz.z_q);
  ad::Var loss = ad::mse(g, x, model.decoder(g, z_q, true));
  g.backward(loss);
  const auto a = g.grad(z_e), b = g.grad(z_q);
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(double(a[i]) - double(b[i])));
    norm += std::abs(b[i]);
  }
  v.check(a.dims() == b.dims() && diff <= 1e-6 && norm > 0,
          "straight-through gradient differs by " + fmt("%.3g", diff));
  v.note("1000/1000 indices, gradient max diff " + fmt("%.1e", diff));
  return v;
}

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof a) == 0; }

std::size_t causality_violations(const pixelcnn::PixelcnnModel& m, std::size_t h, std::size_t w,
                                 Rng& rng) {
  const std::size_t K = m.num_codes(), plane = h * w;
  std::size_t bad = 0;
  for (int rep = 0; rep < 200; ++rep) {
    CodeGrid a(h, w, K);
    for (auto& x : a.indices) x = static_cast<std::uint16_t>(rng.below(K));
    CodeGrid b = a;
    const std::size_t cell = rng.below(plane);
    b.indices[cell] = static_cast<std::uint16_t>((b.indices[cell] + 1 + rng.below(K - 1)) % K);
    const auto la = m.forward_logits(a), lb = m.forward_logits(b);
    bool ok = true;
    for (std::size_t k = 0; k < K && ok; ++k)
      for (std::size_t p = 0; p <= cell && ok; ++p) ok = same_bits(la[k * plane + p], lb[k * plane + p]);
    bad += !ok;
  }
  return bad;
}

Verdict causality(const fs::path& trained_stem) {
  Verdict v;
  Rng rng(707);
  pixelcnn::PixelcnnConfig cfg;
  cfg.seed = 77;
  const pixelcnn::PixelcnnModel fresh(cfg);
  const std::size_t a = causality_violations(fresh, 8, 8, rng);
  v.check(a == 0, std::to_string(a) + " violations on the random model");
  if (!fs::exists(checkpoint_header_path(trained_stem))) {
    v.check(false, "no toy-trained checkpoint at " + trained_stem.string());
    return v;
  }
  const auto trained = pixelcnn::PixelcnnModel::load(trained_stem);
  const std::size_t b = causality_violations(trained, 8, 8, rng);
  v.check(b == 0, std::to_string(b) + " violations on the toy-trained model");
  v.note("200 + 200 perturbations bit-exact");
  return v;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == ".msf.lock") continue;
    files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return files;
}

struct DemoOutcome {
  Verdict verdict;
  fs::path pixelcnn_stem;
};

DemoOutcome demo() {
  DemoOutcome out;
  Verdict& v = out.verdict;
  pipeline::PipelineConfig cfg = pipeline::load_config(std::nullopt);
  cfg.seed = 7;
  const fs::path first = scratch("demo_a"), second = scratch("demo_b");
  pipeline::DemoSummary s;
  double secs = 0;
  try {
    const auto t0 = Clock::now();
    pipeline::Run run("demo", cfg, first);
    s = pipeline::run_demo(run);
    run.write_provenance();
    secs = seconds_since(t0);
    out.pixelcnn_stem = pipeline::pixelcnn_stem(run);
  } catch (const Error& e) {
    v.check(false, std::string("demo failed: ") + e.what());
    return out;
  }
  const double ratio = s.vqvae_best_error / s.vqvae_initial_error;
  v.check(ratio <= 0.1, "VQ-VAE error ratio " + fmt("%.4f", ratio));
  v.check(s.pixelcnn_best_loss < std::log(10.0), "PixelCNN loss " + fmt("%.4f", s.pixelcnn_best_loss));
  v.check(s.samples == 16, std::to_string(s.samples) + " samples");
  const auto masks = pipeline::list_png(first / cfg.paths.data_root / "synthetic" / "masks");
  v.check(masks.size() == 16, std::to_string(masks.size()) + " post-processed masks");
  const Palette palette = Palette::standard(4);
  for (const auto& p : masks) {
    const ClassMask m = png::read_mask(p, palette);
    const auto regions = maskproc::label_components(m, maskproc::Connectivity::eight);
    for (const auto& r : regions) {
      if (regions.size() > 1 && r.area < s.min_area) {
        v.check(false, p.filename().string() + " has a region of " + std::to_string(r.area));
        break;
      }
    }
  }
  v.check(s.verify_failures.empty(), "artifact check: " + (s.verify_failures.empty() ? "" : s.verify_failures[0]));
  v.check(secs <= 600, "took " + fmt("%.0f", secs) + " s");

  try {
    pipeline::Run run("demo", cfg, second);
    pipeline::run_demo(run);
    run.write_provenance();
  } catch (const Error& e) {
    v.check(false, std::string("second demo failed: ") + e.what());
    return out;
  }
  const auto a = tree(first), b = tree(second);
  std::size_t differ = a.size() == b.size() ? 0 : 1;
  std::string example;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) {
      ++differ;
      if (example.empty()) example = name;
    }
  }
  v.check(differ == 0, std::to_string(differ) + " artifacts differ between runs (" + example + ")");
  v.note("VQ ratio " + fmt("%.4f", ratio) + ", PixelCNN loss " + fmt("%.3f", s.pixelcnn_best_loss) +
         " < " + fmt("%.3f", std::log(10.0)) + ", " + std::to_string(masks.size()) + " masks, min_area " +
         std::to_string(s.min_area) + ", " + fmt("%.0f", secs) + " s, " + std::to_string(a.size()) +
         " artifacts identical across two runs");
  return out;
}

Verdict postprocessing() {
  Verdict v;
  const Palette palette = Palette::standard(4);
  ClassMask clean(64, 64, palette, 0);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) clean.set(x, y, static_cast<std::uint8_t>(x / 16));
  GrayPlane p = clean.to_gray();
  Rng rng(909);
  for (auto& x : p.values) x = static_cast<std::uint8_t>(std::clamp(int(x) + int(rng.below(21)) - 10, 0, 255));
  for (std::size_t i = 0; i < 10; ++i) p.at(4 + i % 5, 30 + i / 5) = 255;
  const auto r = maskproc::postprocess_mask(p, 4, 200, 1);
  std::size_t wrong = 0;
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      if (x % 16 == 0 || x % 16 == 15) continue;
      wrong += r.mask.at(x, y) != clean.at(x, y);
    }
  v.check(wrong == 0, std::to_string(wrong) + " pixels wrong away from borders");
  std::size_t speck = 0;
  for (std::size_t i = 0; i < 10; ++i) speck += r.mask.at(4 + i % 5, 30 + i / 5) != 0;
  v.check(speck == 0, "speck not removed");

  ClassMask m(40, 40, palette, 0);
  for (std::size_t y = 5; y < 15; ++y)
    for (std::size_t x = 5; x < 25; ++x) m.set(x, y, 1);
  v.check(maskproc::remove_small(m, 200) == m, "200-pixel region removed");
  m.set(24, 14, 0);
  v.check(maskproc::remove_small(m, 200) == ClassMask(40, 40, palette, 0), "199-pixel region kept");
  v.note("noisy plane recovered, speck removed, 200 kept / 199 removed");
  return v;
}

Verdict report_fidelity() {
  Verdict v;
  std::vector<report::SweepResult> rows;
  const double percents[] = {50, 75, 100, 150, 200, 250, 300};
  Rng rng(1010);
  for (const char* ds : {"alpha", "beta"}) {
    const std::uint64_t base = std::string(ds) == "alpha" ? 16 : 48;
    for (double p : percents) {
      rows.push_back({ds, p, static_cast<std::uint64_t>(p) * base / 100, "miou", 65 + 30 * rng.uniform(), false});
    }
    rows.push_back({ds, 0, 0, "miou", 65 + 30 * rng.uniform(), true});
  }
  rows[3].value = 42.25;  // alpha 150%
  const fs::path dir = scratch("report");
  report::write_metrics_csv(dir / "metrics.csv", rows);
  const auto table = report::read_metrics_csv(dir / "metrics.csv");
  v.check(table == rows, "CSV round trip");
  const report::YRange y{60, 100};
  const auto a = report::render_sweep_svg(table, "miou", y, "miou");
  report::write_text(dir / "a.svg", a.svg);
  report::write_text(dir / "b.svg", report::render_sweep_svg(report::read_metrics_csv(dir / "metrics.csv"), "miou", y, "miou").svg);
  const std::string svg = slurp(dir / "a.svg");
  const auto rep = svgcheck::compare(svg, table, "miou");
  v.check(rep.mismatches.empty(), std::to_string(rep.mismatches.size()) + " mismatches" +
                                      (rep.mismatches.empty() ? "" : " (" + rep.mismatches[0] + ")"));
  v.check(report::cross_check_svg(svg, table, "miou", y).empty(), "renderer cross-check");
  v.check(rep.points == 13 && rep.baselines == 2, "plotted " + std::to_string(rep.points) + " points");
  v.check(rep.note.find("alpha 150% (42.2)") != std::string::npos ||
              rep.note.find("alpha 150% (42.3)") != std::string::npos,
          "note: " + rep.note);
  v.check(svg == slurp(dir / "b.svg"), "output not byte-identical");
  v.note(std::to_string(rep.points) + " points and " + std::to_string(rep.baselines) +
         " baselines match, note \"" + rep.note + "\"");
  return v;
}

}  // namespace

int main() {
  std::map<int, Verdict> results;
  auto guard = [](const std::function<Verdict()>& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      Verdict v;
      v.check(false, std::string("exception: ") + e.what());
      return v;
    }
  };
  results[1] = guard(tallies);
  results[2] = guard(rounding);
  results[3] = guard(set_oracle);
  results[4] = guard(patch_arithmetic);
  results[5] = guard(gradients);
  results[6] = guard(quantizer);
  fs::path stem;
  results[8] = guard([&] {
    auto o = demo();
    stem = o.pixelcnn_stem;
    return o.verdict;
  });
  results[7] = guard([&] { return causality(stem); });
  results[9] = guard(postprocessing);
  results[10] = guard(report_fidelity);

  int failed = 0;
  for (const auto& [n, v] : results) {
    std::printf("criterion %d: %s %s\n", n, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    failed += !v.pass;
  }
  std::fflush(stdout);
  return failed == 0 ? 0 : 1;
}
