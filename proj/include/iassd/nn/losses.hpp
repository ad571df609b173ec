#pragma once

// Sampling-head, centroid and box-regression losses, and the box coder
// that defines the 30-wide regression target encoding.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iassd/geometry.hpp"
#include "iassd/nn/tensor.hpp"

namespace iassd::nn {

inline constexpr double kLogClamp = 1e-12;

/// Per-class sigmoid cross-entropy with one-hot (or all-zero background)
/// labels, summed over classes and averaged over points.
inline Tensor loss_cls_aware(const Tensor& logits, std::span<const double> labels) {
  std::vector<double> ones(logits.rows(), 1.0);
  return weighted_sigmoid_bce(logits, labels, ones, kLogClamp);
}

/// As loss_cls_aware, with each point's foreground term scaled by its soft
/// point mask.
inline Tensor loss_ctr_aware(const Tensor& logits, std::span<const double> labels, std::span<const double> masks) {
  for (double m : masks)
    if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("loss_ctr_aware: masks must lie in [0, 1]");
  return weighted_sigmoid_bce(logits, labels, masks, kLogClamp);
}

struct CentroidLoss {
  Tensor loss;
  std::vector<std::size_t> skipped;  // instances without any member point
};

/// Offset L1 error plus the spread of shifted points around their instance
/// mean, averaged per instance and then over instances. `assignment[j]` is
/// the instance slot of point j, or -1 when the point is not supervised.
inline CentroidLoss loss_centroid(const Tensor& pred_offsets, std::span<const Vec3> points,
                                  std::span<const std::int64_t> assignment, std::span<const Vec3> gt_centers) {
  const std::size_t n = points.size();
  if (pred_offsets.rows() != n || pred_offsets.cols() != 3)
    throw std::invalid_argument("loss_centroid: offsets must be N x 3");
  if (assignment.size() != n) throw std::invalid_argument("loss_centroid: assignment count mismatch");
  std::vector<std::vector<std::uint32_t>> members(gt_centers.size());
  for (std::size_t j = 0; j < n; ++j) {
    if (assignment[j] < 0) continue;
    if (static_cast<std::size_t>(assignment[j]) >= gt_centers.size())
      throw std::out_of_range("loss_centroid: assignment refers to unknown instance");
    members[static_cast<std::size_t>(assignment[j])].push_back(static_cast<std::uint32_t>(j));
  }
  CentroidLoss out;
  std::vector<Tensor> per_instance;
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& m = members[i];
    if (m.empty()) {
      out.skipped.push_back(i);
      continue;
    }
    std::vector<double> pos(m.size() * 3), gt_off(m.size() * 3);
    for (std::size_t r = 0; r < m.size(); ++r) {
      const Vec3& p = points[m[r]];
      const Vec3 d = gt_centers[i] - p;
      pos[3 * r] = p.x, pos[3 * r + 1] = p.y, pos[3 * r + 2] = p.z;
      gt_off[3 * r] = d.x, gt_off[3 * r + 1] = d.y, gt_off[3 * r + 2] = d.z;
    }
    const Tensor off = gather_rows(pred_offsets, std::span<const std::uint32_t>(m));
    const Tensor shifted = add(off, Tensor({m.size(), 3}, std::move(pos)));
    const std::vector<std::uint32_t> zero(m.size(), 0);
    const Tensor center = gather_rows(mean_rows(shifted), std::span<const std::uint32_t>(zero));
    const Tensor offset_err = sum(abs(sub(off, Tensor({m.size(), 3}, std::move(gt_off)))));
    const Tensor spread = sum(abs(sub(shifted, center)));
    per_instance.push_back(scale(add(offset_err, spread), 1.0 / static_cast<double>(m.size())));
  }
  if (per_instance.empty()) {
    out.loss = Tensor::scalar(0.0);
    return out;
  }
  Tensor total = per_instance[0];
  for (std::size_t i = 1; i < per_instance.size(); ++i) total = add(total, per_instance[i]);
  out.loss = scale(total, 1.0 / static_cast<double>(per_instance.size()));
  return out;
}

// ---------------------------------------------------------------------------
// Box coding

/// Regression layout per proposal: [0,3) center residual, [3,6) normalized
/// size residual, [6, 6+B) angle-bin logits, [6+B, 6+2B) normalized in-bin
/// residual per bin. Bin k is centered at k * 2pi/B; residuals are in units
/// of half a bin width. A yaw exactly half-way between two centers goes to
/// the lower bin.
struct BoxCoder {
  std::size_t bins = 12;
  std::vector<Vec3> mean_sizes;  // per class (l, w, h)

  std::size_t width() const { return 6 + 2 * bins; }
  double bin_width() const { return 2.0 * std::numbers::pi / static_cast<double>(bins); }

  struct AngleCode {
    std::size_t bin = 0;
    double residual = 0.0;
  };

  AngleCode encode_angle(double yaw) const {
    const double w = bin_width();
    double a = normalize_yaw(yaw);
    if (a < 0.0) a += 2.0 * std::numbers::pi;
    const double k = std::ceil(a / w - 0.5);
    const double res = (a - k * w) / (0.5 * w);
    const auto bin = static_cast<std::size_t>(k) % bins;
    return {bin, res};
  }

  double decode_angle(std::size_t bin, double residual) const {
    const double w = bin_width();
    return normalize_yaw(static_cast<double>(bin) * w + residual * 0.5 * w);
  }

  const Vec3& mean_size(int cls) const {
    if (cls < 0 || static_cast<std::size_t>(cls) >= mean_sizes.size())
      throw std::out_of_range("BoxCoder: no mean size for class " + std::to_string(cls));
    return mean_sizes[static_cast<std::size_t>(cls)];
  }

  struct Target {
    Vec3 loc;
    Vec3 size;
    AngleCode angle;
  };

  Target encode(const Box7& box, const Vec3& centroid) const {
    const Vec3& m = mean_size(box.class_id);
    return {box.center - centroid, {(box.l - m.x) / m.x, (box.w - m.y) / m.y, (box.h - m.z) / m.z},
            encode_angle(box.yaw)};
  }

  /// Highest-logit bin, lowest index on ties.
  std::size_t best_bin(std::span<const double> row) const {
    std::size_t best = 0;
    for (std::size_t b = 1; b < bins; ++b)
      if (row[6 + b] > row[6 + best]) best = b;
    return best;
  }

  Box7 decode(std::span<const double> row, const Vec3& centroid, int cls) const {
    if (row.size() != width()) throw std::invalid_argument("BoxCoder::decode: row width mismatch");
    const Vec3& m = mean_size(cls);
    const std::size_t bin = best_bin(row);
    const auto safe = [](double v) { return std::max(v, 1e-3); };
    return Box7(centroid + Vec3{row[0], row[1], row[2]}, safe(m.x * (1.0 + row[3])), safe(m.y * (1.0 + row[4])),
                safe(m.z * (1.0 + row[5])), decode_angle(bin, row[6 + bins + bin]), cls);
  }

  /// Exact regression row for a target (bin logits one-hot scaled by
  /// `confidence`).
  std::vector<double> encode_row(const Box7& box, const Vec3& centroid, double confidence = 20.0) const {
    const Target t = encode(box, centroid);
    std::vector<double> row(width(), 0.0);
    row[0] = t.loc.x, row[1] = t.loc.y, row[2] = t.loc.z;
    row[3] = t.size.x, row[4] = t.size.y, row[5] = t.size.z;
    row[6 + t.angle.bin] = confidence;
    row[6 + bins + t.angle.bin] = t.angle.residual;
    return row;
  }
};

struct BoxLoss {
  Tensor loc, size, angle_bin, angle_res, corner, total;
};

namespace detail {

inline Tensor column(const Tensor& t, std::size_t j) { return slice_cols(t, j, j + 1); }

inline Tensor constant_column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

}  // namespace detail

/// Box regression loss over P positive proposals. `pred` is P x coder.width(),
/// `targets[i]` and `centroids[i]` describe proposal i. Every term is a mean
/// over proposals:
///   loc, size   smooth-L1 on the residuals (summed over xyz),
///   angle_bin   softmax cross-entropy over the bins,
///   angle_res   smooth-L1 on the residual of the true bin,
///   corner      mean L1 corner distance of the decoded box, minimized over
///               the target and its pi-flipped twin.
inline BoxLoss loss_box(const Tensor& pred, std::span<const Box7> targets, std::span<const Vec3> centroids,
                        const BoxCoder& coder, double beta = 1.0 / 9.0) {
  const std::size_t p = targets.size();
  if (centroids.size() != p) throw std::invalid_argument("loss_box: centroid count mismatch");
  if (pred.cols() != coder.width() || pred.rows() != p)
    throw std::invalid_argument("loss_box: prediction must be P x " + std::to_string(coder.width()));
  BoxLoss out;
  if (p == 0) {
    out.loc = out.size = out.angle_bin = out.angle_res = out.corner = out.total = Tensor::scalar(0.0);
    return out;
  }
  const double inv_p = 1.0 / static_cast<double>(p);
  const std::size_t nb = coder.bins;

  std::vector<double> loc_t(p * 3), size_t_(p * 3), res_t(p);
  std::vector<std::size_t> bin_t(p), bin_pred(p);
  for (std::size_t i = 0; i < p; ++i) {
    const auto t = coder.encode(targets[i], centroids[i]);
    loc_t[3 * i] = t.loc.x, loc_t[3 * i + 1] = t.loc.y, loc_t[3 * i + 2] = t.loc.z;
    size_t_[3 * i] = t.size.x, size_t_[3 * i + 1] = t.size.y, size_t_[3 * i + 2] = t.size.z;
    bin_t[i] = t.angle.bin;
    res_t[i] = t.angle.residual;
    bin_pred[i] = coder.best_bin(pred.values().subspan(i * coder.width(), coder.width()));
  }

  const Tensor loc_p = slice_cols(pred, 0, 3);
  const Tensor size_p = slice_cols(pred, 3, 6);
  const Tensor bin_logits = slice_cols(pred, 6, 6 + nb);
  const Tensor res_p = slice_cols(pred, 6 + nb, 6 + 2 * nb);

  out.loc = scale(sum(smooth_l1(sub(loc_p, Tensor({p, 3}, loc_t)), beta)), inv_p);
  out.size = scale(sum(smooth_l1(sub(size_p, Tensor({p, 3}, size_t_)), beta)), inv_p);
  out.angle_bin = scale(sum(softmax_cross_entropy(bin_logits, bin_t)), inv_p);
  out.angle_res = scale(sum(smooth_l1(sub(pick_cols(res_p, bin_t), detail::constant_column(res_t)), beta)), inv_p);

  // Differentiable decode of the predicted box (bin choice is piecewise constant).
  std::vector<double> cx(p), cy(p), cz(p), ml(p), mw(p), mh(p), bin_base(p);
  for (std::size_t i = 0; i < p; ++i) {
    cx[i] = centroids[i].x, cy[i] = centroids[i].y, cz[i] = centroids[i].z;
    const Vec3& m = coder.mean_size(targets[i].class_id);
    ml[i] = m.x, mw[i] = m.y, mh[i] = m.z;
    bin_base[i] = static_cast<double>(bin_pred[i]) * coder.bin_width();
  }
  using detail::column;
  using detail::constant_column;
  const Tensor dcx = add(column(loc_p, 0), constant_column(cx));
  const Tensor dcy = add(column(loc_p, 1), constant_column(cy));
  const Tensor dcz = add(column(loc_p, 2), constant_column(cz));
  const Tensor half_l = scale(mul(add_scalar(column(size_p, 0), 1.0), constant_column(ml)), 0.5);
  const Tensor half_w = scale(mul(add_scalar(column(size_p, 1), 1.0), constant_column(mw)), 0.5);
  const Tensor half_h = scale(mul(add_scalar(column(size_p, 2), 1.0), constant_column(mh)), 0.5);
  const Tensor yaw = add(scale(pick_cols(res_p, bin_pred), 0.5 * coder.bin_width()), constant_column(bin_base));
  const Tensor c = cos(yaw);
  const Tensor s = sin(yaw);

  std::vector<std::array<Point, 8>> tgt(p), flipped(p);
  for (std::size_t i = 0; i < p; ++i) {
    tgt[i] = corners(targets[i]);
    Box7 f = targets[i];
    f.yaw = normalize_yaw(f.yaw + std::numbers::pi);
    flipped[i] = corners(f);
  }
  Tensor dist, dist_flip;
  for (std::size_t k = 0; k < 8; ++k) {
    const auto& sg = kCornerSigns[k];
    const Tensor lx = scale(half_l, sg[0]);
    const Tensor ly = scale(half_w, sg[1]);
    const Tensor lz = scale(half_h, sg[2]);
    const Tensor wx = add(dcx, sub(mul(c, lx), mul(s, ly)));
    const Tensor wy = add(dcy, add(mul(s, lx), mul(c, ly)));
    const Tensor wz = add(dcz, lz);
    auto corner_l1 = [&](const std::vector<std::array<Point, 8>>& ref) {
      std::vector<double> rx(p), ry(p), rz(p);
      for (std::size_t i = 0; i < p; ++i) rx[i] = ref[i][k].x, ry[i] = ref[i][k].y, rz[i] = ref[i][k].z;
      return add(add(abs(sub(wx, constant_column(std::move(rx)))), abs(sub(wy, constant_column(std::move(ry))))),
                 abs(sub(wz, constant_column(std::move(rz)))));
    };
    const Tensor d = corner_l1(tgt);
    const Tensor df = corner_l1(flipped);
    dist = dist.defined() ? add(dist, d) : d;
    dist_flip = dist_flip.defined() ? add(dist_flip, df) : df;
  }
  out.corner = scale(sum(minimum(dist, dist_flip)), inv_p / 8.0);
  out.total = add(add(add(add(out.loc, out.size), out.angle_bin), out.angle_res), out.corner);
  return out;
}

// ---------------------------------------------------------------------------
// Multi-task total

struct LossWeights {
  double sample = 1.0, cent = 1.0, cls = 1.0, box = 1.0;
};

/// Scalar snapshot of every loss term for logging.
struct LossBreakdown {
  double sample = 0.0, cent = 0.0, cls = 0.0, box = 0.0;
  double loc = 0.0, size = 0.0, angle_bin = 0.0, angle_res = 0.0, corner = 0.0;
  double total = 0.0;
};

struct LossTerms {
  Tensor sample, cent, cls;
  BoxLoss box;
  Tensor total;

  LossBreakdown snapshot() const {
    LossBreakdown b;
    b.sample = sample.item();
    b.cent = cent.item();
    b.cls = cls.item();
    b.box = box.total.item();
    b.loc = box.loc.item();
    b.size = box.size.item();
    b.angle_bin = box.angle_bin.item();
    b.angle_res = box.angle_res.item();
    b.corner = box.corner.item();
    b.total = total.item();
    return b;
  }
};

/// Weighted sum of the four task losses (unit weights by default).
inline Tensor combine(const LossTerms& t, const LossWeights& w = {}) {
  return add(add(add(scale(t.sample, w.sample), scale(t.cent, w.cent)), scale(t.cls, w.cls)),
             scale(t.box.total, w.box));
}

/// Throws NumericError naming the first non-finite term.
inline void check_finite(const LossBreakdown& b) {
  const std::pair<const char*, double> terms[] = {
      {"sample", b.sample}, {"cent", b.cent},           {"cls", b.cls},
      {"box.loc", b.loc},   {"box.size", b.size},       {"box.angle_bin", b.angle_bin},
      {"box.angle_res", b.angle_res}, {"box.corner", b.corner}, {"total", b.total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component: ") + name);
}

}  // namespace iassd::nn
