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

// Turns a raw decoded mask plane into a clean class map: 1-D k-means on
// the gray values, rank-ordered snapping to class indices, then removal of
// connected regions below a minimum area by filling them with the majority
// class on their border.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <tuple>
#include <vector>

#include "msf/common.hpp"
#include "msf/image.hpp"

namespace msf::maskproc {

struct KMeansResult {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> centroids;          // ascending; index == class rank
  std::vector<std::size_t> populations;   // pixels per cluster
  std::vector<std::uint8_t> assignments;  // per pixel, row-major
  std::vector<double> inertia_history;    // within-cluster SSE after each assignment step
  std::size_t iterations = 0;
};

struct KMeansOptions {
  std::size_t max_iters = 100;
  // Independent Forgy starts; the run with the lowest final inertia wins.
  std::size_t restarts = 64;
};

namespace detail {

struct LloydRun {
  std::vector<double> centroids;
  std::array<std::uint8_t, 256> value_to_cluster{};
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
};

// Lloyd iterations over the 256-bin histogram. Ties go to the lower
// cluster index; an empty cluster keeps its centroid.
inline LloydRun lloyd(const std::array<std::size_t, 256>& hist, std::vector<double> centroids,
                      std::size_t max_iters) {
  LloydRun run;
  const std::size_t k = centroids.size();
  std::array<int, 256> previous;
  previous.fill(-1);
  for (std::size_t it = 0; it < max_iters; ++it) {
    std::array<int, 256> assign;
    double inertia = 0.0;
    for (int v = 0; v < 256; ++v) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double d = (v - centroids[c]) * (v - centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[v] = static_cast<int>(best);
      inertia += static_cast<double>(hist[v]) * best_d;
    }
    run.inertia_history.push_back(inertia);
    run.iterations = it + 1;
    const bool converged = assign == previous;
    previous = assign;
    if (converged) break;
    std::vector<double> sum(k, 0.0), count(k, 0.0);
    for (int v = 0; v < 256; ++v) {
      sum[assign[v]] += static_cast<double>(hist[v]) * v;
      count[assign[v]] += static_cast<double>(hist[v]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) centroids[c] = sum[c] / count[c];
    }
  }
  for (int v = 0; v < 256; ++v) run.value_to_cluster[v] = static_cast<std::uint8_t>(previous[v]);
  run.centroids = std::move(centroids);
  return run;
}

// Forgy start: k pixels drawn at random (without repeating a gray value).
// With fewer distinct values than k, every value is used once and the
// remaining centroids duplicate the largest value; the tie rule leaves
// those clusters empty.
inline std::vector<double> forgy(const std::array<std::size_t, 256>& hist, std::size_t k,
                                 Rng& rng) {
  std::vector<int> distinct;
  std::size_t total = 0;
  for (int v = 0; v < 256; ++v) {
    if (hist[v] > 0) distinct.push_back(v);
    total += hist[v];
  }
  std::vector<double> out;
  if (distinct.size() <= k) {
    for (int v : distinct) out.push_back(v);
    while (out.size() < k) out.push_back(distinct.back());
    return out;
  }
  std::array<bool, 256> taken{};
  std::size_t remaining = total;
  while (out.size() < k) {
    std::size_t r = rng.below(remaining);
    for (int v : distinct) {
      if (taken[v]) continue;
      if (r < hist[v]) {
        taken[v] = true;
        remaining -= hist[v];
        out.push_back(v);
        break;
      }
      r -= hist[v];
    }
  }
  return out;
}

}  // namespace detail

inline KMeansResult kmeans_gray(const GrayPlane& plane, std::size_t k, std::uint64_t seed,
                                const KMeansOptions& opt = {}) {
  require(k >= 1 && k <= 256, "kmeans_gray: k must be in [1, 256]");
  require(k <= plane.values.size(), "kmeans_gray: k=" + std::to_string(k) + " exceeds pixel count " +
                                        std::to_string(plane.values.size()));
  require(opt.max_iters >= 1 && opt.restarts >= 1, "kmeans_gray: bad options");
  std::array<std::size_t, 256> hist{};
  for (std::uint8_t v : plane.values) ++hist[v];

  Rng rng(seed);
  detail::LloydRun best;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < opt.restarts; ++r) {
    detail::LloydRun run = detail::lloyd(hist, detail::forgy(hist, k, rng), opt.max_iters);
    if (run.inertia_history.back() < best_inertia) {
      best_inertia = run.inertia_history.back();
      best = std::move(run);
    }
  }

  // Relabel so that cluster rank by centroid equals the class index.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return best.centroids[a] < best.centroids[b];
  });
  std::vector<std::uint8_t> rank(k);
  for (std::size_t i = 0; i < k; ++i) rank[order[i]] = static_cast<std::uint8_t>(i);

  KMeansResult out;
  out.width = plane.width;
  out.height = plane.height;
  out.iterations = best.iterations;
  out.inertia_history = best.inertia_history;
  for (std::size_t i = 0; i < k; ++i) out.centroids.push_back(best.centroids[order[i]]);
  out.populations.assign(k, 0);
  out.assignments.resize(plane.values.size());
  for (std::size_t i = 0; i < plane.values.size(); ++i) {
    const std::uint8_t c = rank[best.value_to_cluster[plane.values[i]]];
    out.assignments[i] = c;
    ++out.populations[c];
  }
  return out;
}

inline ClassMask snap_to_classes(const KMeansResult& clusters, std::size_t num_classes) {
  require(clusters.centroids.size() == num_classes,
          "snap_to_classes: " + std::to_string(clusters.centroids.size()) +
              " clusters for " + std::to_string(num_classes) + " classes");
  return ClassMask(clusters.width, clusters.height, Palette::standard(num_classes),
                   clusters.assignments);
}

// ---------------------------------------------------------------------------
// Connected components

enum class Connectivity { four = 4, eight = 8 };

struct BoundingBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive
};

struct Region {
  std::uint8_t class_index = 0;
  std::vector<std::uint32_t> pixels;  // row-major indices, ascending
  std::size_t area = 0;
  BoundingBox bbox;
};

namespace detail {

inline std::size_t neighbour_count(Connectivity c) { return c == Connectivity::four ? 4 : 8; }

inline constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
inline constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};

// Calls fn(neighbour index) for each in-bounds neighbour of pixel i.
template <typename Fn>
void for_neighbours(std::size_t i, std::size_t w, std::size_t h, Connectivity c, Fn&& fn) {
  const auto x = static_cast<std::ptrdiff_t>(i % w);
  const auto y = static_cast<std::ptrdiff_t>(i / w);
  for (std::size_t d = 0; d < neighbour_count(c); ++d) {
    const std::ptrdiff_t nx = x + kDx[d], ny = y + kDy[d];
    if (nx < 0 || ny < 0 || nx >= static_cast<std::ptrdiff_t>(w) ||
        ny >= static_cast<std::ptrdiff_t>(h)) {
      continue;
    }
    fn(static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx));
  }
}

// Component id per pixel, numbered in raster order of first pixel.
inline std::vector<std::uint32_t> component_labels(const ClassMask& mask, Connectivity conn,
                                                   std::size_t* count) {
  const std::size_t w = mask.width(), h = mask.height();
  const auto& cls = mask.classes();
  constexpr std::uint32_t kUnset = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> label(w * h, kUnset);
  std::vector<std::size_t> stack;
  std::uint32_t next = 0;
  for (std::size_t s = 0; s < w * h; ++s) {
    if (label[s] != kUnset) continue;
    label[s] = next;
    stack.push_back(s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      for_neighbours(p, w, h, conn, [&](std::size_t q) {
        if (label[q] == kUnset && cls[q] == cls[s]) {
          label[q] = next;
          stack.push_back(q);
        }
      });
    }
    ++next;
  }
  if (count) *count = next;
  return label;
}

}  // namespace detail

// Maximal same-class connected regions, ordered by their first pixel in
// raster order. Together they cover every pixel exactly once.
inline std::vector<Region> label_components(const ClassMask& mask,
                                            Connectivity conn = Connectivity::eight) {
  std::size_t count = 0;
  const auto label = detail::component_labels(mask, conn, &count);
  std::vector<Region> regions(count);
  const std::size_t w = mask.width();
  for (std::size_t i = 0; i < label.size(); ++i) {
    Region& r = regions[label[i]];
    const std::size_t x = i % w, y = i / w;
    if (r.pixels.empty()) {
      r.class_index = mask.classes()[i];
      r.bbox = BoundingBox{x, y, x, y};
    }
    r.pixels.push_back(static_cast<std::uint32_t>(i));
    r.bbox.x0 = std::min(r.bbox.x0, x);
    r.bbox.x1 = std::max(r.bbox.x1, x);
    r.bbox.y0 = std::min(r.bbox.y0, y);
    r.bbox.y1 = std::max(r.bbox.y1, y);
  }
  for (auto& r : regions) r.area = r.pixels.size();
  return regions;
}

struct RemovalResult {
  ClassMask mask;
  std::size_t removed_regions = 0;  // fills performed
};

// Repeatedly takes the smallest region with area < min_area (ties: earliest
// first pixel) and relabels it to the majority class among the pixels
// bordering it, ties to the lowest class index. The filled region then
// merges with its same-class neighbours and may be picked again. Stops when
// no region is below min_area or a single region remains.
inline RemovalResult remove_small_counted(ClassMask mask, std::size_t min_area,
                                          Connectivity conn = Connectivity::eight) {
  require(min_area >= 1, "remove_small: min_area must be positive");
  const std::size_t w = mask.width(), h = mask.height(), C = mask.num_classes();
  std::size_t count = 0;
  std::vector<std::uint32_t> label = detail::component_labels(mask, conn, &count);
  std::vector<std::uint8_t> cls = mask.classes();

  struct Live {
    std::vector<std::uint32_t> pixels;
    std::uint32_t first = 0;  // smallest pixel index
    std::uint8_t class_index = 0;
    bool alive = true;
  };
  std::vector<Live> regions(count);
  for (std::size_t i = 0; i < label.size(); ++i) {
    Live& r = regions[label[i]];
    if (r.pixels.empty()) {
      r.first = static_cast<std::uint32_t>(i);
      r.class_index = cls[i];
    }
    r.pixels.push_back(static_cast<std::uint32_t>(i));
  }
  std::size_t alive = count;

  using Entry = std::tuple<std::size_t, std::uint32_t, std::uint32_t>;  // area, first, id
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  for (std::uint32_t id = 0; id < count; ++id) {
    if (regions[id].pixels.size() < min_area) {
      queue.emplace(regions[id].pixels.size(), regions[id].first, id);
    }
  }

  std::vector<std::uint32_t> stamp(w * h, 0);
  std::uint32_t epoch = 0;
  RemovalResult result{ClassMask(), 0};
  while (!queue.empty() && alive > 1) {
    auto [area, first, id] = queue.top();
    queue.pop();
    Live& r = regions[id];
    if (!r.alive || r.pixels.size() != area || r.first != first) continue;

    // Majority vote over distinct border pixels.
    ++epoch;
    std::vector<std::size_t> votes(C, 0);
    std::vector<std::uint32_t> touching;  // neighbouring region ids
    for (std::uint32_t p : r.pixels) {
      detail::for_neighbours(p, w, h, conn, [&](std::size_t q) {
        if (label[q] == id || stamp[q] == epoch) return;
        stamp[q] = epoch;
        ++votes[cls[q]];
        touching.push_back(label[q]);
      });
    }
    votes[r.class_index] = 0;
    std::size_t fill = C;
    for (std::size_t c = 0; c < C; ++c) {
      if (votes[c] > 0 && (fill == C || votes[c] > votes[fill])) fill = c;
    }
    if (fill == C) continue;  // no foreign border; cannot happen for a maximal region

    // Merge the region with every neighbouring region of the fill class.
    std::sort(touching.begin(), touching.end());
    touching.erase(std::unique(touching.begin(), touching.end()), touching.end());
    std::uint32_t target = id;
    for (std::uint32_t t : touching) {
      if (regions[t].class_index == fill &&
          (target == id || regions[t].pixels.size() > regions[target].pixels.size())) {
        target = t;
      }
    }
    for (std::uint32_t p : r.pixels) cls[p] = static_cast<std::uint8_t>(fill);
    ++result.removed_regions;
    std::vector<std::uint32_t> absorbed = {id};
    for (std::uint32_t t : touching) {
      if (t != target && regions[t].class_index == fill) absorbed.push_back(t);
    }
    Live& dst = regions[target];
    for (std::uint32_t a : absorbed) {
      Live& src = regions[a];
      for (std::uint32_t p : src.pixels) label[p] = target;
      dst.pixels.insert(dst.pixels.end(), src.pixels.begin(), src.pixels.end());
      dst.first = std::min(dst.first, src.first);
      src.pixels.clear();
      src.pixels.shrink_to_fit();
      src.alive = false;
      --alive;
    }
    if (dst.pixels.size() < min_area) queue.emplace(dst.pixels.size(), dst.first, target);
  }
  result.mask = ClassMask(w, h, mask.palette(), std::move(cls));
  return result;
}

inline ClassMask remove_small(ClassMask mask, std::size_t min_area,
                              Connectivity conn = Connectivity::eight) {
  return remove_small_counted(std::move(mask), min_area, conn).mask;
}

// Minimum region area for an image of side `size`: `base_area` at the
// 256-pixel reference scale, scaled by (size / 256)^2, rounded up, at least 4.
constexpr std::size_t scaled_min_area(std::size_t size, std::size_t base_area = 200,
                                      std::size_t reference = 256) {
  const std::size_t num = base_area * size * size;
  const std::size_t den = reference * reference;
  return std::max<std::size_t>(4, (num + den - 1) / den);
}

// Same rule for a width x height image: base_area * w * h / reference^2.
constexpr std::size_t scaled_min_area_rect(std::size_t width, std::size_t height,
                                           std::size_t base_area = 200,
                                           std::size_t reference = 256) {
  const std::size_t num = base_area * width * height;
  const std::size_t den = reference * reference;
  return std::max<std::size_t>(4, (num + den - 1) / den);
}

struct PostprocessResult {
  ClassMask mask;
  KMeansResult clusters;
  std::size_t removed_regions = 0;
  std::vector<std::size_t> class_areas;

  // True when every pixel ended up in class 0 (no foreground at all).
  bool foreground_missing() const {
    return std::all_of(class_areas.begin() + 1, class_areas.end(),
                       [](std::size_t a) { return a == 0; });
  }
};

// kmeans_gray -> snap_to_classes -> remove_small, 8-connected.
inline PostprocessResult postprocess_mask(const GrayPlane& plane, std::size_t num_classes,
                                          std::size_t min_area, std::uint64_t seed,
                                          const KMeansOptions& opt = {}) {
  PostprocessResult out;
  out.clusters = kmeans_gray(plane, num_classes, seed, opt);
  RemovalResult removal =
      remove_small_counted(snap_to_classes(out.clusters, num_classes), min_area);
  out.mask = std::move(removal.mask);
  out.removed_regions = removal.removed_regions;
  out.class_areas.assign(num_classes, 0);
  for (std::uint8_t c : out.mask.classes()) ++out.class_areas[c];
  return out;
}

}  // namespace msf::maskproc
