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

// Confusion-matrix segmentation metrics.
//
// A class is undefined for a matrix when it appears in neither gt nor
// prediction. Undefined classes are left out of every mean. The missing
// class IoU additionally averages only over classes present in gt; false
// positives of the other classes still count as fn of the classes they
// overwrite.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msf/common.hpp"
#include "msf/csv.hpp"
#include "msf/image.hpp"

namespace msf::metrics {

struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;  // counts[g * C + p]

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t c) : num_classes(c), counts(c * c, 0) {
    require(c >= 1, "confusion matrix needs at least one class");
  }
  ConfusionMatrix(std::size_t c, std::vector<std::uint64_t> values)
      : num_classes(c), counts(std::move(values)) {
    require(c >= 1, "confusion matrix needs at least one class");
    require(counts.size() == c * c, "confusion matrix needs C*C counts");
  }

  std::uint64_t at(std::size_t gt, std::size_t pred) const {
    return counts[gt * num_classes + pred];
  }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts[gt * num_classes + pred]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto v : counts) s += v;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t c = 0; c < num_classes; ++c) s += at(c, c);
    return s;
  }
  std::uint64_t row_sum(std::size_t gt) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < num_classes; ++p) s += at(gt, p);
    return s;
  }
  std::uint64_t column_sum(std::size_t pred) const {
    std::uint64_t s = 0;
    for (std::size_t g = 0; g < num_classes; ++g) s += at(g, pred);
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    require(o.num_classes == num_classes, "confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(std::span<const std::uint8_t> gt,
                                 std::span<const std::uint8_t> pred, std::size_t num_classes) {
  require(gt.size() == pred.size(),
          "confusion: gt has " + std::to_string(gt.size()) + " pixels, prediction has " +
              std::to_string(pred.size()));
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= num_classes || pred[i] >= num_classes) {
      fail(ErrorKind::invalid_argument,
           "confusion: class index " + std::to_string(std::max(gt[i], pred[i])) +
               " >= C=" + std::to_string(num_classes));
    }
    ++cm.at(gt[i], pred[i]);
  }
  return cm;
}

inline ConfusionMatrix confusion(const ClassMask& gt, const ClassMask& pred,
                                 std::size_t num_classes) {
  require(gt.width() == pred.width() && gt.height() == pred.height(),
          "confusion: gt is " + std::to_string(gt.width()) + "x" + std::to_string(gt.height()) +
              ", prediction is " + std::to_string(pred.width()) + "x" +
              std::to_string(pred.height()));
  return confusion(gt.classes(), pred.classes(), num_classes);
}

struct ClassIoU {
  std::size_t class_index = 0;
  std::optional<double> value;  // empty when tp + fp + fn == 0
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  bool gt_present = false;

  bool defined() const noexcept { return value.has_value(); }
};

inline ClassIoU class_iou(const ConfusionMatrix& cm, std::size_t c) {
  require(c < cm.num_classes, "class_iou: class out of range");
  ClassIoU r;
  r.class_index = c;
  r.tp = cm.at(c, c);
  r.fp = cm.column_sum(c) - r.tp;
  r.fn = cm.row_sum(c) - r.tp;
  r.gt_present = r.tp + r.fn > 0;
  const std::uint64_t uni = r.tp + r.fp + r.fn;
  if (uni > 0) r.value = static_cast<double>(r.tp) / static_cast<double>(uni);
  return r;
}

inline std::vector<ClassIoU> class_ious(const ConfusionMatrix& cm) {
  std::vector<ClassIoU> out;
  for (std::size_t c = 0; c < cm.num_classes; ++c) out.push_back(class_iou(cm, c));
  return out;
}

inline double pixel_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  require(total > 0, "pixel_accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

inline double mean_iou(const ConfusionMatrix& cm) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& c : class_ious(cm)) {
    if (!c.defined()) continue;
    sum += *c.value;
    ++n;
  }
  require(n > 0, "mean_iou: every class is undefined");
  return sum / static_cast<double>(n);
}

inline double missing_class_iou(const ConfusionMatrix& cm) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& c : class_ious(cm)) {
    if (!c.gt_present) continue;
    sum += *c.value;
    ++n;
  }
  require(n > 0, "missing_class_iou: ground truth is empty");
  return sum / static_cast<double>(n);
}

// Percent value rounded half-up to `decimals` places. Values are snapped to
// 1e-9 of a unit in the last place first so that a mean such as 0.6505,
// stored as 0.65049999..., still rounds to 65.1.
inline double round_percent(double fraction, int decimals = 1) {
  const double scale = std::pow(10.0, decimals);
  const double units = fraction * 100.0 * scale;
  return std::floor(units + 0.5 + 1e-9) / scale;
}

// "Nan" for undefined values, otherwise the rounded percent.
inline std::string format_percent(const std::optional<double>& fraction, int decimals = 1) {
  if (!fraction) return "Nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, round_percent(*fraction, decimals));
  return buf;
}

inline std::string format_full(const std::optional<double>& v) {
  if (!v) return "Nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

// ---------------------------------------------------------------------------
// Image and dataset level

struct EvalRecord {
  std::string image;
  std::string dataset;
  std::optional<double> percent;  // percent synthetic, when known
  ConfusionMatrix matrix;
  std::vector<ClassIoU> classes;
  double accuracy = 0;
  double miou = 0;
  double missing_class_iou = 0;

  static EvalRecord from_matrix(std::string image, ConfusionMatrix cm) {
    EvalRecord r;
    r.image = std::move(image);
    r.classes = class_ious(cm);
    r.accuracy = pixel_accuracy(cm);
    r.miou = mean_iou(cm);
    r.missing_class_iou = metrics::missing_class_iou(cm);
    r.matrix = std::move(cm);
    return r;
  }
};

enum class Aggregation { per_image_mean, pooled };

inline const char* to_string(Aggregation a) {
  return a == Aggregation::pooled ? "pooled" : "per_image_mean";
}

struct Aggregate {
  Aggregation mode = Aggregation::per_image_mean;
  std::size_t images = 0;
  double accuracy = 0;
  double miou = 0;
  double missing_class_iou = 0;
  std::vector<std::optional<double>> class_iou;
  // Per class, restricted to ground truths that contain the class.
  std::vector<std::optional<double>> class_missing_iou;
};

struct DatasetEvaluation {
  std::string dataset;
  std::optional<double> percent;
  std::vector<EvalRecord> records;
  Aggregate per_image_mean;
  Aggregate pooled;
};

struct EvalPair {
  std::string image;
  ClassMask gt;
  ClassMask pred;
};

// Per-image metrics, then both aggregates: the mean over images of each
// metric (per class, over the images where it is defined) and the metrics
// of the summed confusion matrix.
inline DatasetEvaluation evaluate_dataset(std::span<const EvalPair> pairs, std::size_t num_classes,
                                          std::string dataset = {},
                                          std::optional<double> percent = std::nullopt) {
  require(!pairs.empty(), "evaluate_dataset: no image pairs");
  DatasetEvaluation out;
  out.dataset = std::move(dataset);
  out.percent = percent;
  out.records.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const EvalPair& p = pairs[i];
    try {
      out.records[i] = EvalRecord::from_matrix(p.image, confusion(p.gt, p.pred, num_classes));
    } catch (const Error& e) {
      fail(e.kind(), p.image + ": " + e.what());
    }
    out.records[i].dataset = out.dataset;
    out.records[i].percent = percent;
  });

  Aggregate& mean = out.per_image_mean;
  mean.mode = Aggregation::per_image_mean;
  mean.images = pairs.size();
  std::vector<double> iou_sum(num_classes, 0), miss_sum(num_classes, 0);
  std::vector<std::size_t> iou_n(num_classes, 0), miss_n(num_classes, 0);
  ConfusionMatrix pooled(num_classes);
  for (const auto& r : out.records) {
    mean.accuracy += r.accuracy;
    mean.miou += r.miou;
    mean.missing_class_iou += r.missing_class_iou;
    for (const auto& c : r.classes) {
      if (!c.defined()) continue;
      iou_sum[c.class_index] += *c.value;
      ++iou_n[c.class_index];
      if (c.gt_present) {
        miss_sum[c.class_index] += *c.value;
        ++miss_n[c.class_index];
      }
    }
    pooled += r.matrix;
  }
  const double n = static_cast<double>(pairs.size());
  mean.accuracy /= n;
  mean.miou /= n;
  mean.missing_class_iou /= n;
  for (std::size_t c = 0; c < num_classes; ++c) {
    mean.class_iou.push_back(iou_n[c] ? std::optional(iou_sum[c] / static_cast<double>(iou_n[c]))
                                      : std::nullopt);
    mean.class_missing_iou.push_back(
        miss_n[c] ? std::optional(miss_sum[c] / static_cast<double>(miss_n[c])) : std::nullopt);
  }

  Aggregate& pool = out.pooled;
  pool.mode = Aggregation::pooled;
  pool.images = pairs.size();
  pool.accuracy = pixel_accuracy(pooled);
  pool.miou = mean_iou(pooled);
  pool.missing_class_iou = missing_class_iou(pooled);
  for (const auto& c : class_ious(pooled)) {
    pool.class_iou.push_back(c.value);
    pool.class_missing_iou.push_back(c.gt_present ? c.value : std::nullopt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

inline std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  return os;
}

// image,class,tp,fp,fn,iou,gt_present
inline void write_per_image_csv(const std::filesystem::path& path,
                                std::span<const EvalRecord> records) {
  std::ofstream os = open_csv(path);
  os << "image,class,tp,fp,fn,iou,gt_present\n";
  for (const auto& r : records) {
    for (const auto& c : r.classes) {
      os << csv::escape(r.image) << ',' << c.class_index << ',' << c.tp << ',' << c.fp << ',' << c.fn << ','
         << format_full(c.value) << ',' << (c.gt_present ? 1 : 0) << '\n';
    }
  }
}

// dataset,percent,mode,images,accuracy,miou,missing_class_iou,iou_<c>...,missing_class_iou_<c>...
inline void write_aggregate_csv(const std::filesystem::path& path,
                                std::span<const DatasetEvaluation> evaluations) {
  std::ofstream os = open_csv(path);
  const std::size_t C =
      evaluations.empty() ? 0 : evaluations.front().per_image_mean.class_iou.size();
  os << "dataset,percent,mode,images,accuracy,miou,missing_class_iou";
  for (std::size_t c = 0; c < C; ++c) os << ",iou_" << c;
  for (std::size_t c = 0; c < C; ++c) os << ",missing_class_iou_" << c;
  os << '\n';
  for (const auto& e : evaluations) {
    require(e.per_image_mean.class_iou.size() == C,
            "write_aggregate_csv: evaluations differ in class count");
    for (const Aggregate* a : {&e.per_image_mean, &e.pooled}) {
      os << csv::escape(e.dataset) << ',' << (e.percent ? format_full(*e.percent) : std::string()) << ','
         << to_string(a->mode) << ',' << a->images << ',' << format_full(a->accuracy) << ','
         << format_full(a->miou) << ',' << format_full(a->missing_class_iou);
      for (const auto& v : a->class_iou) os << ',' << format_full(v);
      for (const auto& v : a->class_missing_iou) os << ',' << format_full(v);
      os << '\n';
    }
  }
}

}  // namespace msf::metrics
