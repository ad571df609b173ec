#pragma once

// Downsampling strategies (random, D-FPS, Feat-FPS, score top-k), layered
// schedules and the instance-recall metric.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iassd/geometry.hpp"
#include "iassd/point_cloud.hpp"
#include "iassd/random.hpp"

namespace iassd {

enum class Strategy { kRandom, kDFps, kFeatFps, kClsAware, kCtrAware };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kRandom: return "random";
    case Strategy::kDFps: return "dfps";
    case Strategy::kFeatFps: return "featfps";
    case Strategy::kClsAware: return "cls_aware";
    case Strategy::kCtrAware: return "ctr_aware";
  }
  return "unknown";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "random") return Strategy::kRandom;
  if (name == "dfps" || name == "d-fps") return Strategy::kDFps;
  if (name == "featfps" || name == "feat-fps") return Strategy::kFeatFps;
  if (name == "cls_aware" || name == "cls-aware") return Strategy::kClsAware;
  if (name == "ctr_aware" || name == "ctr-aware") return Strategy::kCtrAware;
  throw std::invalid_argument("unknown sampling strategy '" + std::string(name) + "'");
}

inline bool is_score_based(Strategy s) { return s == Strategy::kClsAware || s == Strategy::kCtrAware; }

struct SamplingOutcome {
  std::vector<std::size_t> indices;
  Strategy strategy = Strategy::kRandom;
  std::size_t layer = 0;
};

/// k distinct indices drawn uniformly without replacement by a partial
/// Fisher-Yates shuffle driven by Rng(seed). Returns all indices when N <= k.
inline SamplingOutcome sample_random(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("sample_random: k must be at least 1");
  SamplingOutcome out{{}, Strategy::kRandom, 0};
  out.indices.resize(n);
  std::iota(out.indices.begin(), out.indices.end(), std::size_t{0});
  if (n <= k) return out;
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(out.indices[i], out.indices[j]);
  }
  out.indices.resize(k);
  return out;
}

inline SamplingOutcome sample_random(const PointCloud& cloud, std::size_t k, std::uint64_t seed) {
  return sample_random(cloud.size(), k, seed);
}

namespace detail {

// Generic farthest point sampling over a squared distance functor. Keeps a
// running nearest-selected distance per point; ties pick the lowest index.
template <typename SquaredDistance>
std::vector<std::size_t> farthest_point_sampling(std::size_t n, std::size_t k, std::size_t start,
                                                 SquaredDistance&& dist2) {
  if (k > n) throw std::invalid_argument("farthest point sampling: k exceeds point count");
  if (k == 0) return {};
  if (start >= n) throw std::invalid_argument("farthest point sampling: start index out of range");
  std::vector<std::size_t> picked;
  picked.reserve(k);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t current = start;
  for (std::size_t s = 0; s < k; ++s) {
    picked.push_back(current);
    nearest[current] = -1.0;
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (nearest[i] < 0.0) continue;
      const double d = dist2(current, i);
      if (d < nearest[i]) nearest[i] = d;
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

}  // namespace detail

/// Farthest point sampling in 3D Euclidean distance, O(N k).
inline SamplingOutcome sample_dfps(std::span<const Vec3> coords, std::size_t k, std::size_t start = 0) {
  auto idx = detail::farthest_point_sampling(coords.size(), k, start, [&](std::size_t a, std::size_t b) {
    return squared_distance(coords[a], coords[b]);
  });
  return {std::move(idx), Strategy::kDFps, 0};
}

inline SamplingOutcome sample_dfps(const PointCloud& cloud, std::size_t k, std::size_t start = 0) {
  return sample_dfps(cloud.coords, k, start);
}

/// Farthest point sampling under d = |f_a - f_b|^2 + lambda |x_a - x_b|^2.
inline SamplingOutcome sample_featfps(const PointCloud& cloud, std::size_t k, std::size_t start = 0,
                                      double lambda = 0.0) {
  if (!cloud.has_features()) throw std::invalid_argument("sample_featfps: cloud has no features");
  if (lambda < 0.0) throw std::invalid_argument("sample_featfps: lambda must be non-negative");
  const FeatureMatrix& f = cloud.features;
  const std::size_t d = f.cols;
  auto idx = detail::farthest_point_sampling(cloud.size(), k, start, [&](std::size_t a, std::size_t b) {
    const double* fa = f.data.data() + a * d;
    const double* fb = f.data.data() + b * d;
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = fa[c] - fb[c];
      acc += diff * diff;
    }
    if (lambda > 0.0) acc += lambda * squared_distance(cloud.coords[a], cloud.coords[b]);
    return acc;
  });
  return {std::move(idx), Strategy::kFeatFps, 0};
}

/// Indices of the k largest scores in descending score order (ties: lower
/// index first). O(N log k).
inline SamplingOutcome sample_topk(std::span<const double> scores, std::size_t k,
                                   Strategy tag = Strategy::kCtrAware) {
  if (k > scores.size()) throw std::invalid_argument("sample_topk: k exceeds score count");
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument("sample_topk: non-finite score");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  return {std::move(idx), tag, 0};
}

// ---------------------------------------------------------------------------
// Instance recall

struct LayerRecall {
  std::size_t layer = 0;
  std::size_t points = 0;                   // surviving point count
  std::map<int, std::size_t> instances;     // class -> instances counted
  std::map<int, std::size_t> recalled;      // class -> instances retained
  std::map<int, double> recall;             // class -> recalled / instances
};

struct RecallReport {
  std::vector<LayerRecall> layers;
};

/// An instance is recalled when at least `min_points` surviving points lie
/// inside its box.
inline LayerRecall instance_recall(const LabeledScene& scene, std::span<const std::size_t> survivors,
                                   std::size_t min_points = 1) {
  LayerRecall out;
  out.points = survivors.size();
  for (const Box7& box : scene.boxes) {
    if (!box.instance_id) throw std::invalid_argument("instance_recall: box without instance id");
    std::size_t inside = 0;
    for (std::size_t i : survivors)
      if (contains(box, scene.cloud.coords.at(i)) && ++inside >= min_points) break;
    ++out.instances[box.class_id];
    if (inside >= min_points) ++out.recalled[box.class_id];
  }
  for (const auto& [cls, total] : out.instances)
    out.recall[cls] = static_cast<double>(out.recalled[cls]) / static_cast<double>(total);
  return out;
}

inline LayerRecall instance_recall(const LabeledScene& scene, const SamplingOutcome& outcome,
                                   std::size_t min_points = 1) {
  LayerRecall r = instance_recall(scene, std::span<const std::size_t>(outcome.indices), min_points);
  r.layer = outcome.layer;
  return r;
}

inline RecallReport instance_recall(const LabeledScene& scene, std::span<const SamplingOutcome> layers,
                                    std::size_t min_points = 1) {
  RecallReport report;
  for (const auto& o : layers) report.layers.push_back(instance_recall(scene, o, min_points));
  return report;
}

/// Pools counts of `from` into `into` (same layer layout) and recomputes
/// the fractions.
inline void accumulate(RecallReport& into, const RecallReport& from) {
  if (into.layers.empty()) {
    into = from;
    return;
  }
  if (into.layers.size() != from.layers.size())
    throw std::invalid_argument("accumulate: layer count mismatch");
  for (std::size_t l = 0; l < into.layers.size(); ++l) {
    auto& a = into.layers[l];
    const auto& b = from.layers[l];
    a.points += b.points;
    for (const auto& [cls, n] : b.instances) a.instances[cls] += n;
    for (const auto& [cls, n] : b.recalled) a.recalled[cls] += n;
    a.recall.clear();
    for (const auto& [cls, total] : a.instances)
      a.recall[cls] = static_cast<double>(a.recalled[cls]) / static_cast<double>(total);
  }
}

// ---------------------------------------------------------------------------
// Schedules

struct LayerSpec {
  Strategy strategy = Strategy::kDFps;
  std::size_t k = 0;
};

/// Four-layer schedule used for 16384-point inputs.
inline std::vector<LayerSpec> default_schedule() {
  return {{Strategy::kDFps, 4096}, {Strategy::kDFps, 1024}, {Strategy::kCtrAware, 512},
          {Strategy::kCtrAware, 256}};
}

struct ScheduleOptions {
  std::uint64_t seed = 0;        // random layers draw from Rng::derive(seed, layer)
  std::size_t fps_start = 0;     // start position within each layer's survivors
  double featfps_lambda = 0.0;
};

/// Scores for the current survivors (`survivors` index the original cloud).
using Scorer = std::function<std::vector<double>(const PointCloud& cloud,
                                                 std::span<const std::size_t> survivors,
                                                 std::size_t layer)>;

/// Ground-truth centrality: the largest soft mask over `boxes`.
inline Scorer centroid_oracle(std::vector<Box7> boxes) {
  return [boxes = std::move(boxes)](const PointCloud& cloud, std::span<const std::size_t> survivors, std::size_t) {
    std::vector<double> s;
    s.reserve(survivors.size());
    for (std::size_t i : survivors) {
      double m = 0.0;
      for (const Box7& b : boxes) m = std::max(m, soft_point_mask(b, cloud.coords[i]));
      s.push_back(m);
    }
    return s;
  };
}

/// Ground-truth foreground indicator.
inline Scorer class_oracle(std::vector<Box7> boxes) {
  return [boxes = std::move(boxes)](const PointCloud& cloud, std::span<const std::size_t> survivors, std::size_t) {
    std::vector<double> s;
    s.reserve(survivors.size());
    for (std::size_t i : survivors) {
      double m = 0.0;
      for (const Box7& b : boxes)
        if (contains(b, cloud.coords[i])) m = 1.0;
      s.push_back(m);
    }
    return s;
  };
}

/// Reflectance as a stand-in score for unlabeled clouds (zeros without it).
inline Scorer intensity_scorer() {
  return [](const PointCloud& cloud, std::span<const std::size_t> survivors, std::size_t) {
    std::vector<double> s;
    s.reserve(survivors.size());
    for (std::size_t i : survivors) s.push_back(cloud.has_intensity() ? cloud.intensity[i] : 0.0);
    return s;
  };
}

/// Applies each layer to the survivors of the previous one. Every outcome
/// holds indices into the original cloud, and the survivor sets are nested.
inline std::vector<SamplingOutcome> run_schedule(const PointCloud& cloud, std::span<const LayerSpec> schedule,
                                                 const Scorer& scorer = {}, const ScheduleOptions& opt = {}) {
  for (std::size_t l = 0; l < schedule.size(); ++l) {
    if (schedule[l].k == 0) throw std::invalid_argument("run_schedule: layer size must be positive");
    if (l > 0 && schedule[l].k >= schedule[l - 1].k)
      throw std::invalid_argument("run_schedule: layer sizes must be strictly decreasing");
    if (is_score_based(schedule[l].strategy) && !scorer)
      throw std::invalid_argument("run_schedule: score-based layer requires a scorer");
  }
  std::vector<std::size_t> survivors(cloud.size());
  std::iota(survivors.begin(), survivors.end(), std::size_t{0});
  std::vector<SamplingOutcome> out;
  for (std::size_t l = 0; l < schedule.size(); ++l) {
    const LayerSpec& spec = schedule[l];
    const std::size_t k = std::min(spec.k, survivors.size());
    SamplingOutcome local;
    switch (spec.strategy) {
      case Strategy::kRandom:
        local = sample_random(survivors.size(), spec.k, Rng::derive(opt.seed, l));
        break;
      case Strategy::kDFps: {
        std::vector<Vec3> pts;
        pts.reserve(survivors.size());
        for (std::size_t i : survivors) pts.push_back(cloud.coords[i]);
        local = sample_dfps(pts, k, std::min(opt.fps_start, pts.size() - 1));
        break;
      }
      case Strategy::kFeatFps: {
        const PointCloud sub = cloud.select(survivors);
        local = sample_featfps(sub, k, std::min(opt.fps_start, sub.size() - 1), opt.featfps_lambda);
        break;
      }
      case Strategy::kClsAware:
      case Strategy::kCtrAware: {
        const std::vector<double> scores = scorer(cloud, survivors, l);
        if (scores.size() != survivors.size())
          throw std::invalid_argument("run_schedule: scorer returned wrong number of scores");
        local = sample_topk(scores, k, spec.strategy);
        break;
      }
    }
    SamplingOutcome global{{}, spec.strategy, l};
    global.indices.reserve(local.indices.size());
    for (std::size_t i : local.indices) global.indices.push_back(survivors[i]);
    survivors = global.indices;
    out.push_back(std::move(global));
  }
  return out;
}

}  // namespace iassd
