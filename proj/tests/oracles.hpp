#pragma once

// Naive reference implementations and seeded generators shared by the unit
// tests and the acceptance binary. Nothing here calls the code it checks
// except for trivially correct primitives (Box7, contains, Rng).

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include "iassd/geometry.hpp"
#include "iassd/nn/tensor.hpp"
#include "iassd/point_cloud.hpp"
#include "iassd/random.hpp"

namespace oracle {

using iassd::Box7;
using iassd::Rng;
using iassd::Vec3;

// ---------------------------------------------------------------------------
// Generators

inline Vec3 random_point(Rng& rng, double extent) {
  return {rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent)};
}

inline std::vector<Vec3> random_points(Rng& rng, std::size_t n, double extent) {
  std::vector<Vec3> out(n);
  for (auto& p : out) p = random_point(rng, extent);
  return out;
}

inline Box7 random_box(Rng& rng, double extent = 5.0, int cls = 0) {
  return Box7(random_point(rng, extent), rng.uniform(0.3, 5.0), rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0),
              rng.uniform(-std::numbers::pi, std::numbers::pi), cls);
}

/// A box placed so that it tends to overlap `a` partially.
inline Box7 nearby_box(Rng& rng, const Box7& a) {
  const double r = 0.6 * std::max({a.l, a.w, a.h});
  const Vec3 c = a.center + Vec3{rng.uniform(-r, r), rng.uniform(-r, r), rng.uniform(-0.5 * a.h, 0.5 * a.h)};
  return Box7(c, a.l * rng.uniform(0.5, 1.5), a.w * rng.uniform(0.5, 1.5), a.h * rng.uniform(0.5, 1.5),
              rng.uniform(-std::numbers::pi, std::numbers::pi));
}

/// Uniform point inside a box.
inline Vec3 point_in_box(Rng& rng, const Box7& b) {
  const Vec3 local{rng.uniform(-0.5, 0.5) * b.l, rng.uniform(-0.5, 0.5) * b.w, rng.uniform(-0.5, 0.5) * b.h};
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return b.center + Vec3{c * local.x - s * local.y, s * local.x + c * local.y, local.z};
}

// ---------------------------------------------------------------------------
// Geometry

/// IoU estimated by sampling uniformly inside `a`: |a & b| = V(a) * P(x in b).
inline double monte_carlo_iou(const Box7& a, const Box7& b, std::size_t samples, std::uint64_t seed) {
  Rng rng(seed);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < samples; ++i) hit += iassd::contains(b, point_in_box(rng, a));
  const double inter = a.volume() * static_cast<double>(hit) / static_cast<double>(samples);
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Greedy NMS by repeated arg-max over the remaining boxes.
inline std::vector<std::size_t> brute_nms(const std::vector<iassd::ScoredBox>& boxes, double threshold,
                                          const std::function<double(const Box7&, const Box7&)>& iou) {
  std::vector<char> alive(boxes.size(), 1);
  std::vector<std::size_t> keep;
  while (true) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (alive[i] && (best == boxes.size() || boxes[i].score > boxes[best].score)) best = i;
    if (best == boxes.size()) break;
    keep.push_back(best);
    alive[best] = 0;
    for (std::size_t j = 0; j < boxes.size(); ++j)
      if (alive[j] && iou(boxes[best].box, boxes[j].box) > threshold) alive[j] = 0;
  }
  return keep;
}

// ---------------------------------------------------------------------------
// Sampling

/// FPS that recomputes every candidate's distance to the whole selected
/// set each round. O(N k^2).
inline std::vector<std::size_t> naive_fps(std::size_t n, std::size_t k, std::size_t start,
                                          const std::function<double(std::size_t, std::size_t)>& d2) {
  std::vector<std::size_t> sel{start};
  std::vector<char> taken(n, 0);
  taken[start] = 1;
  while (sel.size() < k) {
    double best_d = -1.0;
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t s : sel) m = std::min(m, d2(s, i));
      if (m > best_d) best_d = m, best = i;
    }
    sel.push_back(best);
    taken[best] = 1;
  }
  return sel;
}

inline std::vector<std::size_t> naive_dfps(const std::vector<Vec3>& p, std::size_t k, std::size_t start = 0) {
  return naive_fps(p.size(), k, start, [&](std::size_t a, std::size_t b) { return iassd::squared_distance(p[a], p[b]); });
}

/// Indices of the k largest scores by full sort (ties: lower index).
inline std::vector<std::size_t> full_sort_topk(const std::vector<double>& s, std::size_t k) {
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(k);
  return idx;
}

/// P(at least t of the m instance points survive when k of N points are
/// drawn without replacement).
inline double hypergeometric_at_least(std::size_t n, std::size_t m, std::size_t k, std::size_t t) {
  auto lchoose = [](double a, double b) { return std::lgamma(a + 1) - std::lgamma(b + 1) - std::lgamma(a - b + 1); };
  double below = 0.0;
  for (std::size_t j = 0; j < t && j <= m; ++j) {
    if (k < j || n - m < k - j) continue;
    below += std::exp(lchoose(double(m), double(j)) + lchoose(double(n - m), double(k - j)) - lchoose(double(n), double(k)));
  }
  return 1.0 - below;
}

// ---------------------------------------------------------------------------
// Neighborhood

struct BruteGroups {
  std::vector<std::uint32_t> indices;
  std::vector<std::uint8_t> valid;
  std::vector<std::uint8_t> empty;
};

/// Sorted (distance, index) radius search with nearest-neighbor padding.
inline BruteGroups brute_ball_query(const std::vector<Vec3>& cloud, const std::vector<Vec3>& centers, double radius,
                                    std::size_t nq) {
  BruteGroups g;
  for (const Vec3& c : centers) {
    std::vector<std::pair<double, std::uint32_t>> all;
    for (std::size_t i = 0; i < cloud.size(); ++i)
      all.emplace_back(iassd::squared_distance(cloud[i], c), static_cast<std::uint32_t>(i));
    std::sort(all.begin(), all.end());
    std::size_t inside = 0;
    while (inside < all.size() && all[inside].first <= radius * radius) ++inside;
    g.empty.push_back(inside == 0);
    for (std::size_t q = 0; q < nq; ++q) {
      g.indices.push_back(q < inside ? all[q].second : all[0].second);
      g.valid.push_back(q < inside);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Gradients

/// Largest relative error between the analytic gradient of `loss()` and a
/// central difference, over every element of every input. Denominators are
/// floored at `floor` so near-zero gradients are compared absolutely.
inline double gradient_error(const std::function<iassd::nn::Tensor()>& loss, std::vector<iassd::nn::Tensor> inputs,
                             double h = 1e-6, double floor = 1e-4) {
  for (auto& t : inputs) t.zero_grad();
  iassd::nn::backward(loss());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto v = inputs[i].mutable_values();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double keep = v[k];
      v[k] = keep + h;
      const double up = loss().item();
      v[k] = keep - h;
      const double down = loss().item();
      v[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][k];
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
    }
  }
  return worst;
}

}  // namespace oracle
