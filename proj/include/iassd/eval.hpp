#pragma once

// Average precision with greedy per-class 3D IoU matching.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iassd/geometry.hpp"

namespace iassd {

/// Ground truth and detections of one frame.
struct FrameResult {
  std::string frame;
  std::vector<Box7> gt;
  std::vector<ScoredBox> detections;
};

struct EvalConfig {
  std::vector<double> iou_thresholds{0.7, 0.5, 0.5};  // per class id
  bool eleven_point = false;                           // default: 40 recall positions

  double threshold(int cls) const {
    if (cls < 0 || static_cast<std::size_t>(cls) >= iou_thresholds.size())
      throw std::out_of_range("EvalConfig: no IoU threshold for class " + std::to_string(cls));
    return iou_thresholds[static_cast<std::size_t>(cls)];
  }
};

struct ClassEval {
  int class_id = 0;
  std::size_t gt = 0;
  std::size_t detections = 0;
  std::size_t true_positives = 0;
  double recall = 0.0;  // at the lowest score (all detections)
  double ap = std::numeric_limits<double>::quiet_NaN();  // NaN without ground truth
};

struct EvalReport {
  std::vector<ClassEval> classes;
  double mean_ap = std::numeric_limits<double>::quiet_NaN();  // over classes with ground truth
};

/// Interpolated AP from a precision/recall curve ordered by descending score.
inline double interpolated_ap(std::span<const double> precision, std::span<const double> recall, bool eleven_point) {
  const std::size_t n = eleven_point ? 11 : 40;
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = eleven_point ? static_cast<double>(k) / 10.0 : static_cast<double>(k + 1) / 40.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
    total += best;
  }
  return total / static_cast<double>(n);
}

/// Detections of each class are visited in descending score order (ties:
/// frame then input order) and matched to the unmatched ground truth of the
/// same class and frame with the highest IoU; a match needs IoU >= the
/// class threshold.
inline EvalReport evaluate(std::span<const FrameResult> frames, std::size_t num_classes, const EvalConfig& cfg = {}) {
  EvalReport report;
  double ap_sum = 0.0;
  std::size_t ap_count = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const int cls = static_cast<int>(c);
    const double thr = cfg.threshold(cls);
    ClassEval ce;
    ce.class_id = cls;
    struct Ref {
      std::size_t frame, det;
      double score;
    };
    std::vector<Ref> dets;
    std::vector<std::vector<char>> matched(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) {
      matched[f].assign(frames[f].gt.size(), 0);
      for (const Box7& g : frames[f].gt) ce.gt += g.class_id == cls;
      for (std::size_t d = 0; d < frames[f].detections.size(); ++d)
        if (frames[f].detections[d].box.class_id == cls) dets.push_back({f, d, frames[f].detections[d].score});
    }
    std::stable_sort(dets.begin(), dets.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });
    ce.detections = dets.size();
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const FrameResult& fr = frames[dets[i].frame];
      const Box7& box = fr.detections[dets[i].det].box;
      double best = -1.0;
      std::size_t best_g = 0;
      for (std::size_t g = 0; g < fr.gt.size(); ++g) {
        if (fr.gt[g].class_id != cls || matched[dets[i].frame][g]) continue;
        const double iou = iou_3d(box, fr.gt[g]);
        if (iou > best) {
          best = iou;
          best_g = g;
        }
      }
      if (best >= thr) {
        matched[dets[i].frame][best_g] = 1;
        ++tp;
      }
      precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
      recall.push_back(ce.gt ? static_cast<double>(tp) / static_cast<double>(ce.gt) : 0.0);
    }
    ce.true_positives = tp;
    if (ce.gt > 0) {
      ce.recall = static_cast<double>(tp) / static_cast<double>(ce.gt);
      ce.ap = interpolated_ap(precision, recall, cfg.eleven_point);
      ap_sum += ce.ap;
      ++ap_count;
    }
    report.classes.push_back(ce);
  }
  if (ap_count) report.mean_ap = ap_sum / static_cast<double>(ap_count);
  return report;
}

}  // namespace iassd
