#pragma once

// Oriented 3D box mathematics: frame transforms, membership, the soft point
// mask, box expansion, corners, rotated IoU and greedy 3D NMS.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace iassd {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr double squared_norm() const { return x * x + y * y + z * z; }
  double norm() const { return std::sqrt(squared_norm()); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

using Point = Vec3;

inline constexpr double squared_distance(const Vec3& a, const Vec3& b) {
  return (a - b).squared_norm();
}

/// Maps an angle to (-pi, pi].
inline double normalize_yaw(double yaw) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::remainder(yaw, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

/// 7-DOF oriented box: center, (length, width, height) along the box-frame
/// (x, y, z) axes, and yaw about +z. Yaw is normalized on construction.
struct Box7 {
  Vec3 center;
  double l = 1.0;
  double w = 1.0;
  double h = 1.0;
  double yaw = 0.0;
  int class_id = 0;
  std::optional<std::int64_t> instance_id;

  Box7() = default;
  Box7(Vec3 c, double length, double width, double height, double heading, int cls = 0,
       std::optional<std::int64_t> instance = std::nullopt)
      : center(c), l(length), w(width), h(height), yaw(normalize_yaw(heading)),
        class_id(cls), instance_id(instance) {
    if (!(l > 0.0 && w > 0.0 && h > 0.0))
      throw std::invalid_argument("Box7: dimensions must be positive");
    if (!c.finite() || !std::isfinite(heading))
      throw std::invalid_argument("Box7: non-finite center or yaw");
  }

  Vec3 size() const { return {l, w, h}; }
  double volume() const { return l * w * h; }
  double bev_circumradius() const { return 0.5 * std::hypot(l, w); }
  double z_min() const { return center.z - 0.5 * h; }
  double z_max() const { return center.z + 0.5 * h; }
};

/// Distances of a point to the six faces (front/back along length,
/// left/right along width, up/down along height).
struct SurfaceDistances {
  double f = 0.0, b = 0.0, l = 0.0, r = 0.0, u = 0.0, d = 0.0;
};

struct ScoredBox {
  Box7 box;
  double score = 0.0;
};

/// Translate by -center, then rotate by -yaw about z.
inline Point to_box_frame(const Point& p, const Box7& b) {
  const Vec3 t = p - b.center;
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  return {c * t.x + s * t.y, -s * t.x + c * t.y, t.z};
}

inline Point from_box_frame(const Point& local, const Box7& b) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  return Vec3{c * local.x - s * local.y, s * local.x + c * local.y, local.z} + b.center;
}

/// Closed-box membership: points on a face count as inside.
inline bool contains(const Box7& b, const Point& p) {
  const Point q = to_box_frame(p, b);
  return std::abs(q.x) <= 0.5 * b.l && std::abs(q.y) <= 0.5 * b.w && std::abs(q.z) <= 0.5 * b.h;
}

/// Face distances in the box frame. Negative entries mean the point is
/// outside on that side.
inline SurfaceDistances surface_distances(const Box7& b, const Point& p) {
  const Point q = to_box_frame(p, b);
  return {0.5 * b.l - q.x, 0.5 * b.l + q.x, 0.5 * b.w - q.y,
          0.5 * b.w + q.y, 0.5 * b.h - q.z, 0.5 * b.h + q.z};
}

/// Centrality score in [0, 1]: the cube root of the product of the
/// min/max ratios of opposing face distances. 1 at the center, 0 on any face
/// and 0 for exterior points.
inline double soft_point_mask(const Box7& b, const Point& p) {
  if (!contains(b, p)) return 0.0;
  const SurfaceDistances s = surface_distances(b, p);
  // The cube root magnifies frame-transform rounding near a face; distances
  // at that noise level count as zero.
  const double scale = std::abs(b.center.x) + std::abs(b.center.y) + std::abs(b.center.z) + b.l + b.w + b.h;
  const double tol = 64.0 * std::numeric_limits<double>::epsilon() * scale;
  auto ratio = [tol](double a, double c) {
    a = a > tol ? a : 0.0;
    c = c > tol ? c : 0.0;
    const double hi = std::max(a, c);
    return hi > 0.0 ? std::min(a, c) / hi : 0.0;
  };
  return std::cbrt(ratio(s.f, s.b) * ratio(s.l, s.r) * ratio(s.u, s.d));
}

enum class ExpandMode { kFactor, kLength };

/// Grows a box about its center: factor mode scales (l, w, h), length mode
/// adds `amount` meters to each dimension.
inline Box7 expand(const Box7& b, ExpandMode mode, double amount) {
  if (!(amount > 0.0)) throw std::invalid_argument("expand: amount must be positive");
  Box7 out = b;
  if (mode == ExpandMode::kFactor) {
    out.l *= amount;
    out.w *= amount;
    out.h *= amount;
  } else {
    out.l += amount;
    out.w += amount;
    out.h += amount;
  }
  return out;
}

/// Box-frame corner signs, lexicographic with '-' before '+':
/// index = 4*[x>0] + 2*[y>0] + [z>0].
inline constexpr std::array<std::array<int, 3>, 8> kCornerSigns = {{
    {-1, -1, -1}, {-1, -1, 1}, {-1, 1, -1}, {-1, 1, 1},
    {1, -1, -1},  {1, -1, 1},  {1, 1, -1},  {1, 1, 1},
}};

inline std::array<Point, 8> corners(const Box7& b) {
  std::array<Point, 8> out;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& s = kCornerSigns[i];
    out[i] = from_box_frame({0.5 * s[0] * b.l, 0.5 * s[1] * b.w, 0.5 * s[2] * b.h}, b);
  }
  return out;
}

/// Inverse of corners() given the documented corner order.
inline Box7 box_from_corners(const std::array<Point, 8>& c, int class_id = 0) {
  Vec3 center;
  for (const auto& p : c) center += p;
  center = center * 0.125;
  const Vec3 along_l = c[4] - c[0];
  const Vec3 along_w = c[2] - c[0];
  const Vec3 along_h = c[1] - c[0];
  return Box7(center, along_l.norm(), along_w.norm(), along_h.norm(),
              std::atan2(along_l.y, along_l.x), class_id);
}

// ---------------------------------------------------------------------------
// Rotated IoU

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

/// Counter-clockwise BEV footprint.
inline std::array<Vec2, 4> bev_polygon(const Box7& b) {
  const double c = std::cos(b.yaw);
  const double s = std::sin(b.yaw);
  const double hl = 0.5 * b.l;
  const double hw = 0.5 * b.w;
  const std::array<Vec2, 4> local = {{{-hl, -hw}, {hl, -hw}, {hl, hw}, {-hl, hw}}};
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i)
    out[i] = {b.center.x + c * local[i].x - s * local[i].y,
              b.center.y + s * local[i].x + c * local[i].y};
  return out;
}

inline double polygon_area(std::span<const Vec2> poly) {
  double a = 0.0;
  for (std::size_t i = 0, n = poly.size(); i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(a);
}

/// Sutherland-Hodgman: clips `subject` by each edge of the convex CCW `clip`.
inline std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  std::vector<Vec2> in;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % clip.size()];
    in.swap(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2& p = in[i];
      const Vec2& q = in[(i + 1) % in.size()];
      const double dp = cross2(a, b, p);
      const double dq = cross2(a, b, q);
      const bool p_in = dp >= 0.0;
      const bool q_in = dq >= 0.0;
      if (p_in) out.push_back(p);
      if (p_in != q_in) {
        const double t = dp / (dp - dq);
        out.push_back({p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)});
      }
    }
  }
  return out;
}

inline constexpr double kAreaEpsilon = 1e-12;

inline double bev_intersection_area(const Box7& a, const Box7& b) {
  const double reach = a.bev_circumradius() + b.bev_circumradius();
  const double dx = a.center.x - b.center.x;
  const double dy = a.center.y - b.center.y;
  if (dx * dx + dy * dy > reach * reach) return 0.0;
  const auto pa = bev_polygon(a);
  const auto pb = bev_polygon(b);
  const auto inter = clip_convex(pa, pb);
  if (inter.size() < 3) return 0.0;
  const double area = polygon_area(inter);
  return area < kAreaEpsilon ? 0.0 : area;
}

inline double iou_bev(const Box7& a, const Box7& b) {
  const double inter = bev_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.l * a.w + b.l * b.w - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Volume IoU: BEV polygon intersection times z-extent overlap.
inline double iou_3d(const Box7& a, const Box7& b) {
  const double dz = std::min(a.z_max(), b.z_max()) - std::max(a.z_min(), b.z_min());
  if (dz <= 0.0) return 0.0;
  const double area = bev_intersection_area(a, b);
  if (area <= 0.0) return 0.0;
  const double inter = area * dz;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// NMS

/// Greedy suppression in descending score order (ties: lower input index
/// first). A box is suppressed when its IoU with a kept box exceeds the
/// threshold. Returns kept input indices in output order.
inline std::vector<std::size_t> nms_3d_indices(std::span<const ScoredBox> boxes,
                                               double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0))
    throw std::invalid_argument("nms_3d: threshold must lie in [0, 1]");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score > boxes[b].score;
  });
  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<std::size_t> keep;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou_3d(boxes[i].box, boxes[j].box) > iou_threshold) suppressed[j] = 1;
    }
  }
  return keep;
}

inline std::vector<ScoredBox> nms_3d(std::span<const ScoredBox> boxes, double iou_threshold) {
  std::vector<ScoredBox> out;
  for (std::size_t i : nms_3d_indices(boxes, iou_threshold)) out.push_back(boxes[i]);
  return out;
}

}  // namespace iassd
