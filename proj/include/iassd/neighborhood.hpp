#pragma once

// Radius neighbor search over a hashed uniform grid, plus grouping of
// neighbor coordinates/features around query centers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "iassd/geometry.hpp"
#include "iassd/point_cloud.hpp"

namespace iassd {

/// Uniform grid with cell size equal to the query radius. Cells are stored
/// in CSR form (points sorted by cell key) with a hash map from cell key to
/// its range, so memory is O(N) regardless of the cloud extent.
class SpatialIndex {
 public:
  SpatialIndex(std::span<const Vec3> points, double cell_size) : points_(points), cell_(cell_size) {
    if (!(cell_size > 0.0)) throw std::invalid_argument("SpatialIndex: cell size must be positive");
    if (points.empty()) return;
    origin_ = points[0];
    for (const Vec3& p : points) {
      origin_.x = std::min(origin_.x, p.x);
      origin_.y = std::min(origin_.y, p.y);
      origin_.z = std::min(origin_.z, p.z);
    }
    std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
      keyed[i] = {key(cell_of(points[i])), static_cast<std::uint32_t>(i)};
    std::sort(keyed.begin(), keyed.end());
    order_.resize(points.size());
    for (std::size_t i = 0; i < keyed.size(); ++i) {
      order_[i] = keyed[i].second;
      if (i == 0 || keyed[i].first != keyed[i - 1].first)
        ranges_[keyed[i].first] = {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i)};
      ranges_[keyed[i].first].second = static_cast<std::uint32_t>(i + 1);
    }
  }

  std::size_t size() const { return points_.size(); }
  std::size_t cell_count() const { return ranges_.size(); }
  double cell_size() const { return cell_; }

  /// Calls fn(index) for every point in the 3x3x3 cell block around `q`.
  /// When radius <= cell size this is a superset of the radius ball.
  template <typename Fn>
  void for_each_candidate(const Vec3& q, Fn&& fn) const {
    if (points_.empty()) return;
    const auto c = cell_of(q);
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const Cell n{c.x + dx, c.y + dy, c.z + dz};
          if (n.x < 0 || n.y < 0 || n.z < 0) continue;
          auto it = ranges_.find(key(n));
          if (it == ranges_.end()) continue;
          for (std::uint32_t r = it->second.first; r < it->second.second; ++r) fn(order_[r]);
        }
  }

  /// Indices within `radius` of q (radius must not exceed the cell size).
  std::vector<std::uint32_t> radius_search(const Vec3& q, double radius) const {
    if (radius > cell_ * (1.0 + 1e-12))
      throw std::invalid_argument("SpatialIndex: radius exceeds cell size");
    const double r2 = radius * radius;
    std::vector<std::uint32_t> out;
    for_each_candidate(q, [&](std::uint32_t i) {
      if (squared_distance(points_[i], q) <= r2) out.push_back(i);
    });
    return out;
  }

 private:
  struct Cell {
    std::int64_t x, y, z;
  };

  Cell cell_of(const Vec3& p) const {
    auto f = [&](double v, double o) {
      const double c = std::floor((v - o) / cell_);
      // Queries far outside the cloud clamp to a sentinel cell that is never populated.
      return c < -1.0 ? std::int64_t{-2} : static_cast<std::int64_t>(std::min(c, 2.0e6));
    };
    return {f(p.x, origin_.x), f(p.y, origin_.y), f(p.z, origin_.z)};
  }

  static std::uint64_t key(const Cell& c) {
    // 21 bits per axis; populated cells are non-negative by construction.
    return (static_cast<std::uint64_t>(c.x) & 0x1FFFFF) | ((static_cast<std::uint64_t>(c.y) & 0x1FFFFF) << 21) |
           ((static_cast<std::uint64_t>(c.z) & 0x1FFFFF) << 42);
  }

  std::span<const Vec3> points_;
  double cell_;
  Vec3 origin_;
  std::vector<std::uint32_t> order_;
  std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::uint32_t>> ranges_;
};

/// Per-center neighbor lists padded or truncated to `nquery` entries.
/// Invalid (padding) entries repeat the nearest neighbor; a center with no
/// neighbor within the radius is filled with its nearest cloud point and
/// flagged empty.
struct GroupIndex {
  std::size_t centers = 0;
  std::size_t nquery = 0;
  std::vector<std::uint32_t> indices;  // centers * nquery
  std::vector<std::uint8_t> valid;     // centers * nquery
  std::vector<std::uint8_t> empty;     // centers

  std::span<const std::uint32_t> group(std::size_t c) const { return {indices.data() + c * nquery, nquery}; }
  std::size_t valid_count(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t q = 0; q < nquery; ++q) n += valid[c * nquery + q];
    return n;
  }
};

namespace detail {

inline std::uint32_t nearest_point(std::span<const Vec3> cloud, const Vec3& q) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double d = squared_distance(cloud[i], q);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::uint32_t>(i);
    }
  }
  return best;
}

inline void fill_group(GroupIndex& g, std::size_t c, std::vector<std::pair<double, std::uint32_t>>& hits,
                       std::span<const Vec3> cloud, const Vec3& center) {
  const std::size_t nq = g.nquery;
  const std::size_t take = std::min(nq, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(take), hits.end());
  if (take == 0) {
    const std::uint32_t self = nearest_point(cloud, center);
    g.empty[c] = 1;
    for (std::size_t q = 0; q < nq; ++q) g.indices[c * nq + q] = self;
    return;
  }
  for (std::size_t q = 0; q < nq; ++q) {
    const bool real = q < take;
    g.indices[c * nq + q] = real ? hits[q].second : hits[0].second;
    g.valid[c * nq + q] = real ? 1 : 0;
  }
}

}  // namespace detail

/// Up to `nquery` neighbors within `radius` of each center, sorted by
/// ascending distance (ties: lower index).
inline GroupIndex ball_query(std::span<const Vec3> cloud, std::span<const Vec3> centers, double radius,
                             std::size_t nquery) {
  if (!(radius > 0.0)) throw std::invalid_argument("ball_query: radius must be positive");
  if (nquery == 0) throw std::invalid_argument("ball_query: nquery must be at least 1");
  if (cloud.empty()) throw std::invalid_argument("ball_query: empty cloud");
  GroupIndex g;
  g.centers = centers.size();
  g.nquery = nquery;
  g.indices.assign(centers.size() * nquery, 0);
  g.valid.assign(centers.size() * nquery, 0);
  g.empty.assign(centers.size(), 0);
  const SpatialIndex index(cloud, radius);
  const double r2 = radius * radius;
  std::vector<std::pair<double, std::uint32_t>> hits;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    hits.clear();
    index.for_each_candidate(centers[c], [&](std::uint32_t i) {
      const double d = squared_distance(cloud[i], centers[c]);
      if (d <= r2) hits.emplace_back(d, i);
    });
    detail::fill_group(g, c, hits, cloud, centers[c]);
  }
  return g;
}

inline GroupIndex ball_query(const PointCloud& cloud, std::span<const Vec3> centers, double radius,
                             std::size_t nquery) {
  return ball_query(std::span<const Vec3>(cloud.coords), centers, radius, nquery);
}

/// Dense (centers x nquery x channels) block: neighbor - center followed by
/// the neighbor's features when present.
struct GroupedBlock {
  std::size_t centers = 0;
  std::size_t nquery = 0;
  std::size_t channels = 0;
  std::vector<double> data;

  double at(std::size_t c, std::size_t q, std::size_t ch) const {
    return data[(c * nquery + q) * channels + ch];
  }
};

/// Relative neighbor coordinates only, (centers * nquery) rows of 3.
inline std::vector<double> relative_coordinates(std::span<const Vec3> cloud, std::span<const Vec3> centers,
                                                const GroupIndex& groups) {
  if (groups.centers != centers.size())
    throw std::invalid_argument("relative_coordinates: group/center count mismatch");
  std::vector<double> out(groups.centers * groups.nquery * 3);
  for (std::size_t c = 0; c < groups.centers; ++c)
    for (std::size_t q = 0; q < groups.nquery; ++q) {
      const Vec3 d = cloud[groups.indices[c * groups.nquery + q]] - centers[c];
      double* row = out.data() + (c * groups.nquery + q) * 3;
      row[0] = d.x;
      row[1] = d.y;
      row[2] = d.z;
    }
  return out;
}

/// Translation-only canonicalization of each group around its center.
inline GroupedBlock group_and_canonicalize(const PointCloud& cloud, std::span<const Vec3> centers,
                                           const GroupIndex& groups) {
  if (groups.centers != centers.size())
    throw std::invalid_argument("group_and_canonicalize: group/center count mismatch");
  const std::size_t d = cloud.has_features() ? cloud.features.cols : 0;
  GroupedBlock b{groups.centers, groups.nquery, 3 + d, {}};
  b.data.resize(b.centers * b.nquery * b.channels);
  for (std::size_t c = 0; c < b.centers; ++c)
    for (std::size_t q = 0; q < b.nquery; ++q) {
      const std::uint32_t idx = groups.indices[c * b.nquery + q];
      const Vec3 rel = cloud.coords.at(idx) - centers[c];
      double* row = b.data.data() + (c * b.nquery + q) * b.channels;
      row[0] = rel.x;
      row[1] = rel.y;
      row[2] = rel.z;
      if (d > 0) {
        auto f = cloud.features.row(idx);
        std::copy(f.begin(), f.end(), row + 3);
      }
    }
  return b;
}

struct ScaleGroups {
  GroupIndex groups;
  GroupedBlock block;
};

/// One grouped block per (radius, nquery) pair.
inline std::vector<ScaleGroups> multi_scale_group(const PointCloud& cloud, std::span<const Vec3> centers,
                                                  std::span<const double> radii,
                                                  std::span<const std::size_t> nquery) {
  if (radii.size() != nquery.size() || radii.empty())
    throw std::invalid_argument("multi_scale_group: radii and nquery lengths differ");
  for (std::size_t i = 1; i < radii.size(); ++i)
    if (!(radii[i] > radii[i - 1])) throw std::invalid_argument("multi_scale_group: radii must increase");
  std::vector<ScaleGroups> out;
  for (std::size_t s = 0; s < radii.size(); ++s) {
    GroupIndex g = ball_query(cloud, centers, radii[s], nquery[s]);
    GroupedBlock b = group_and_canonicalize(cloud, centers, g);
    out.push_back({std::move(g), std::move(b)});
  }
  return out;
}

}  // namespace iassd
