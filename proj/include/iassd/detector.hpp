#pragma once

// Contextual centroid perception, instance aggregation, proposal decoding
// and the end-to-end point-based detector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "iassd/data_io.hpp"
#include "iassd/errors.hpp"
#include "iassd/geometry.hpp"
#include "iassd/neighborhood.hpp"
#include "iassd/nn/checkpoint.hpp"
#include "iassd/nn/layers.hpp"
#include "iassd/nn/losses.hpp"
#include "iassd/point_cloud.hpp"
#include "iassd/random.hpp"
#include "iassd/sampling.hpp"
#include "json.hpp"

namespace iassd {

// ---------------------------------------------------------------------------
// Membership

/// Which points supervise the centroid offsets. `kCenters` supervises only
/// the representative point nearest to each instance center (among points
/// inside the original box).
enum class ContextMode { kNone, kFactor, kLength, kCenters };

inline std::string_view to_string(ContextMode m) {
  switch (m) {
    case ContextMode::kNone: return "none";
    case ContextMode::kFactor: return "factor";
    case ContextMode::kLength: return "length";
    case ContextMode::kCenters: return "centers";
  }
  return "none";
}

inline ContextMode parse_context_mode(std::string_view s) {
  if (s == "none") return ContextMode::kNone;
  if (s == "factor") return ContextMode::kFactor;
  if (s == "length") return ContextMode::kLength;
  if (s == "centers") return ContextMode::kCenters;
  throw ConfigError("unknown context mode '" + std::string(s) + "'");
}

struct ContextConfig {
  ContextMode mode = ContextMode::kLength;
  double amount = 1.0;

  void validate() const {
    if ((mode == ContextMode::kFactor || mode == ContextMode::kLength) && !(amount > 0.0))
      throw ConfigError("context: amount must be positive for factor/length expansion");
  }
};

namespace detail {

inline void require_instance_ids(std::span<const Box7> boxes, const char* who) {
  for (const Box7& b : boxes)
    if (!b.instance_id) throw std::invalid_argument(std::string(who) + ": box without instance id");
}

/// Slot of the box containing p (nearest center among several), or -1.
inline std::int64_t containing_slot(std::span<const Box7> boxes, const Vec3& p) {
  std::int64_t best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    if (!contains(boxes[b], p)) continue;
    const double d = squared_distance(p, boxes[b].center);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::int64_t>(b);
    }
  }
  return best;
}

}  // namespace detail

/// Instance slot (index into `boxes`) per point, -1 for non-members.
inline std::vector<std::int64_t> assign_membership(std::span<const Vec3> points, std::span<const Box7> boxes,
                                                   const ContextConfig& config) {
  config.validate();
  detail::require_instance_ids(boxes, "assign_membership");
  std::vector<std::int64_t> slot(points.size(), -1);
  if (config.mode == ContextMode::kCenters) {
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      std::optional<std::size_t> best;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (slot[i] >= 0 || !contains(boxes[b], points[i])) continue;
        const double d = squared_distance(points[i], boxes[b].center);
        if (d < best_d) {
          best_d = d;
          best = i;
        }
      }
      if (best) slot[*best] = static_cast<std::int64_t>(b);
    }
    return slot;
  }
  std::vector<Box7> region(boxes.begin(), boxes.end());
  if (config.mode == ContextMode::kFactor)
    for (Box7& b : region) b = expand(b, ExpandMode::kFactor, config.amount);
  if (config.mode == ContextMode::kLength)
    for (Box7& b : region) b = expand(b, ExpandMode::kLength, config.amount);
  for (std::size_t i = 0; i < points.size(); ++i) slot[i] = detail::containing_slot(region, points[i]);
  return slot;
}

/// One-hot class labels (N x C), soft masks and slots of points inside the
/// original boxes.
struct PointTargets {
  std::vector<std::int64_t> slot;
  std::vector<double> labels;
  std::vector<double> masks;
};

inline PointTargets point_targets(std::span<const Vec3> points, std::span<const Box7> boxes, std::size_t classes) {
  PointTargets t;
  t.slot.resize(points.size(), -1);
  t.labels.assign(points.size() * classes, 0.0);
  t.masks.assign(points.size(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::int64_t s = detail::containing_slot(boxes, points[i]);
    t.slot[i] = s;
    if (s < 0) continue;
    const Box7& b = boxes[static_cast<std::size_t>(s)];
    if (b.class_id < 0 || static_cast<std::size_t>(b.class_id) >= classes)
      throw std::invalid_argument("point_targets: box class " + std::to_string(b.class_id) + " out of range");
    t.labels[i * classes + static_cast<std::size_t>(b.class_id)] = 1.0;
    t.masks[i] = soft_point_mask(b, points[i]);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Votes, aggregation, proposals

struct VoteSet {
  std::vector<std::size_t> indices;   // representative points (input-cloud indices)
  nn::Tensor offsets;                 // R x 3
  std::vector<Vec3> positions;
  std::vector<Vec3> shifted;          // positions + offsets
  std::vector<std::int64_t> membership;  // filled by the loss; -1 = unsupervised
};

inline VoteSet predict_and_shift(const nn::Tensor& features, std::span<const Vec3> positions,
                                 const nn::MlpSpec& head, const nn::MlpParams& params) {
  if (features.rows() != positions.size())
    throw std::invalid_argument("predict_and_shift: " + std::to_string(features.rows()) + " feature rows for " +
                                std::to_string(positions.size()) + " points");
  if (head.out_width() != 3) throw std::invalid_argument("predict_and_shift: offset head must output 3 values");
  VoteSet v;
  v.offsets = nn::forward_mlp(head, params, features);
  v.positions.assign(positions.begin(), positions.end());
  v.shifted.resize(positions.size());
  const auto o = v.offsets.values();
  for (std::size_t i = 0; i < positions.size(); ++i)
    v.shifted[i] = positions[i] + Vec3{o[3 * i], o[3 * i + 1], o[3 * i + 2]};
  return v;
}

/// Groups source points around the (detached) shifted centroids and runs
/// the multi-scale set abstraction.
inline nn::Tensor aggregate_instances(const VoteSet& votes, std::span<const Vec3> source,
                                      const nn::Tensor& source_features, const nn::SaSpec& spec,
                                      const nn::SaParams& params) {
  std::vector<nn::ScaleInput> inputs;
  for (const auto& s : spec.scales) {
    GroupIndex g = ball_query(source, votes.shifted, s.radius, s.nquery);
    std::vector<double> rel = relative_coordinates(source, votes.shifted, g);
    inputs.push_back({std::move(g), std::move(rel)});
  }
  return nn::sa_layer(spec, params, inputs, source_features);
}

struct Proposal {
  Box7 box;
  std::vector<double> scores;  // per-class sigmoid probability
  std::size_t source = 0;      // centroid index

  double score() const { return scores.empty() ? 0.0 : scores[static_cast<std::size_t>(box.class_id)]; }
};

inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// Decodes one proposal per centroid; the class is the highest-scoring one.
inline std::vector<Proposal> generate_proposals(const nn::Tensor& cls_logits, const nn::Tensor& reg,
                                                std::span<const Vec3> centroids, const nn::BoxCoder& coder) {
  const std::size_t r = centroids.size();
  if (cls_logits.rows() != r || reg.rows() != r || reg.cols() != coder.width())
    throw std::invalid_argument("generate_proposals: head output shape mismatch");
  const std::size_t c = cls_logits.cols();
  std::vector<Proposal> out;
  out.reserve(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::vector<double> scores(c);
    std::size_t best = 0;
    for (std::size_t j = 0; j < c; ++j) {
      scores[j] = sigmoid(cls_logits.at(i, j));
      if (cls_logits.at(i, j) > cls_logits.at(i, best)) best = j;
    }
    Box7 box = coder.decode(reg.values().subspan(i * coder.width(), coder.width()), centroids[i],
                            static_cast<int>(best));
    out.push_back({box, std::move(scores), i});
  }
  return out;
}

/// Score filter on each proposal's own class, then class-agnostic NMS.
/// Output is sorted by descending score.
inline std::vector<ScoredBox> postprocess(std::span<const Proposal> proposals, double iou_threshold,
                                          double score_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0) || !(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw std::invalid_argument("postprocess: thresholds must lie in [0, 1]");
  std::vector<ScoredBox> kept;
  for (const Proposal& p : proposals)
    if (p.score() >= score_threshold) kept.push_back({p.box, p.score()});
  return nms_3d(kept, iou_threshold);
}

// ---------------------------------------------------------------------------
// Detection records: frame class score cx cy cz l w h yaw

struct Detection {
  std::string frame;
  Box7 box;
  double score = 0.0;
};

inline std::string format_detection(const Detection& d, const ClassCatalog& catalog = {}) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s %s %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f", d.frame.c_str(),
                catalog.name(d.box.class_id).c_str(), d.score, d.box.center.x, d.box.center.y, d.box.center.z,
                d.box.l, d.box.w, d.box.h, d.box.yaw);
  return buf;
}

inline std::vector<Detection> parse_detections(const std::string& text, const ClassCatalog& catalog = {},
                                               const std::string& source = "<detections>") {
  std::vector<Detection> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (tok.size() != 10) throw DataError(where + ": expected 10 fields (frame class score cx cy cz l w h yaw)");
    const auto cls = catalog.find(tok[1]);
    if (!cls) throw DataError(where + ": unknown class '" + tok[1] + "'");
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = detail::parse_double(tok[static_cast<std::size_t>(i) + 2], where);
    if (!(v[4] > 0.0 && v[5] > 0.0 && v[6] > 0.0)) throw DataError(where + ": box dimensions must be positive");
    out.push_back({tok[0], Box7({v[1], v[2], v[3]}, v[4], v[5], v[6], v[7], *cls), v[0]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detector configuration

struct EncoderLayerSpec {
  Strategy strategy = Strategy::kDFps;
  std::size_t npoint = 0;
  nn::SaSpec sa;
  std::vector<std::size_t> score_hidden;  // score head hidden widths (score-based layers)
};

struct VoteLayerSpec {
  Strategy strategy = Strategy::kCtrAware;
  std::size_t npoint = 0;
  std::vector<std::size_t> score_hidden;
  std::vector<std::size_t> offset_hidden;
};

struct DetectorConfig {
  std::vector<std::string> class_names{"Car", "Pedestrian", "Cyclist"};
  std::size_t input_features = 1;  // 1: intensity, 0: coordinates only
  std::vector<EncoderLayerSpec> encoder;
  VoteLayerSpec vote;
  nn::SaSpec aggregation;
  std::vector<std::size_t> cls_hidden;
  std::vector<std::size_t> reg_hidden;
  std::vector<Vec3> mean_sizes{{4.0, 1.7, 1.6}, {0.8, 0.6, 1.7}, {1.8, 0.6, 1.7}};
  std::size_t angle_bins = 12;
  double featfps_lambda = 1.0;
  double score_threshold = 0.1;
  double nms_threshold = 0.01;
  ContextConfig context;
  nn::LossWeights loss_weights;
  double smooth_l1_beta = 1.0 / 9.0;

  std::size_t num_classes() const { return class_names.size(); }
  ClassCatalog catalog() const { return {class_names}; }

  std::size_t layer_input_width(std::size_t l) const {
    return l == 0 ? input_features : encoder[l - 1].sa.out_width();
  }
  std::size_t encoder_width() const { return encoder.empty() ? input_features : encoder.back().sa.out_width(); }

  nn::MlpSpec score_spec(std::size_t in, const std::vector<std::size_t>& hidden) const {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(num_classes());
    return nn::MlpSpec::chain(std::move(w), nn::Activation::kNone);
  }
  nn::MlpSpec offset_spec() const {
    std::vector<std::size_t> w{encoder_width()};
    w.insert(w.end(), vote.offset_hidden.begin(), vote.offset_hidden.end());
    w.push_back(3);
    return nn::MlpSpec::chain(std::move(w), nn::Activation::kNone);
  }
  nn::MlpSpec head_spec(const std::vector<std::size_t>& hidden, std::size_t out) const {
    std::vector<std::size_t> w{aggregation.out_width()};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return nn::MlpSpec::chain(std::move(w), nn::Activation::kNone);
  }
  nn::BoxCoder coder() const { return {angle_bins, mean_sizes}; }

  void validate() const {
    if (class_names.empty()) throw ConfigError("detector: at least one class required");
    if (mean_sizes.size() != class_names.size()) throw ConfigError("detector: one mean size per class required");
    for (const Vec3& m : mean_sizes)
      if (!(m.x > 0.0 && m.y > 0.0 && m.z > 0.0)) throw ConfigError("detector: mean sizes must be positive");
    if (encoder.empty()) throw ConfigError("detector: encoder needs at least one layer");
    if (angle_bins < 2) throw ConfigError("detector: need at least two angle bins");
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      const auto& e = encoder[l];
      if (e.npoint == 0 || e.npoint >= prev) throw ConfigError("detector: encoder sizes must strictly decrease");
      if (e.sa.scales.empty()) throw ConfigError("detector: SA layer " + std::to_string(l) + " has no scales");
      for (std::size_t s = 0; s < e.sa.scales.size(); ++s) {
        const auto& sc = e.sa.scales[s];
        if (!(sc.radius > 0.0) || sc.nquery == 0 || sc.mlp.empty())
          throw ConfigError("detector: SA layer " + std::to_string(l) + " scale " + std::to_string(s) + " invalid");
      }
      prev = e.npoint;
    }
    if (vote.npoint == 0 || vote.npoint > prev) throw ConfigError("detector: vote layer size invalid");
    if (aggregation.scales.empty()) throw ConfigError("detector: aggregation needs scales");
    if (!(score_threshold >= 0.0 && score_threshold <= 1.0) || !(nms_threshold >= 0.0 && nms_threshold <= 1.0))
      throw ConfigError("detector: thresholds must lie in [0, 1]");
    if (!(smooth_l1_beta > 0.0)) throw ConfigError("detector: smooth-L1 beta must be positive");
    context.validate();
  }

  /// Full-size architecture for 16,384-point inputs.
  static DetectorConfig kitti() {
    DetectorConfig c;
    c.encoder = {
        {Strategy::kDFps, 4096, {{{0.2, 16, {16, 16, 32}}, {0.8, 32, {32, 32, 64}}}, 64}, {}},
        {Strategy::kDFps, 1024, {{{0.8, 16, {64, 64, 128}}, {1.6, 32, {64, 96, 128}}}, 128}, {}},
        {Strategy::kCtrAware, 512, {{{1.6, 16, {128, 128, 256}}, {4.8, 32, {128, 256, 256}}}, 256}, {256}},
    };
    c.vote = {Strategy::kCtrAware, 256, {256}, {128}};
    c.aggregation = {{{4.8, 16, {256, 256, 512}}, {6.4, 32, {256, 512, 1024}}}, 512};
    c.cls_hidden = {256, 256};
    c.reg_hidden = {256, 256};
    c.nms_threshold = 0.01;
    return c;
  }

  /// Scaled-down architecture that trains in minutes on one CPU core
  /// (4,096-point scenes).
  static DetectorConfig toy() {
    DetectorConfig c;
    c.encoder = {
        {Strategy::kDFps, 1024, {{{0.4, 8, {16, 16}}, {0.8, 16, {16, 32}}}, 32}, {}},
        {Strategy::kDFps, 256, {{{0.8, 8, {32, 32}}, {1.6, 16, {32, 64}}}, 64}, {}},
        {Strategy::kCtrAware, 128, {{{1.6, 8, {64, 64}}, {3.2, 16, {64, 64}}}, 64}, {32}},
    };
    c.vote = {Strategy::kCtrAware, 64, {32}, {32}};
    c.aggregation = {{{1.6, 8, {64, 64}}, {3.2, 16, {64, 128}}}, 128};
    c.cls_hidden = {64, 64};
    c.reg_hidden = {64, 64};
    c.nms_threshold = 0.1;
    return c;
  }
};

// JSON (de)serialization. Unknown keys are rejected.

namespace detail {

inline void expect_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(where + ": unknown key '" + key + "'");
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline nlohmann::json sa_to_json(const nn::SaSpec& s) {
  nlohmann::json scales = nlohmann::json::array();
  for (const auto& sc : s.scales) scales.push_back({{"radius", sc.radius}, {"nquery", sc.nquery}, {"mlp", sc.mlp}});
  return {{"scales", scales}, {"post_width", s.post_width}};
}

inline nn::SaSpec sa_from_json(const nlohmann::json& j, const std::string& where) {
  expect_keys(j, {"scales", "post_width"}, where);
  nn::SaSpec s;
  s.post_width = get_or<std::size_t>(j, "post_width", 0, where);
  if (!j.contains("scales") || !j["scales"].is_array()) throw ConfigError(where + ": 'scales' array required");
  for (const auto& sc : j["scales"]) {
    expect_keys(sc, {"radius", "nquery", "mlp"}, where + ".scales");
    s.scales.push_back({get_or<double>(sc, "radius", 1.0, where), get_or<std::size_t>(sc, "nquery", 16, where),
                        get_or<std::vector<std::size_t>>(sc, "mlp", {}, where)});
  }
  return s;
}

inline Strategy strategy_from_json(const nlohmann::json& j, const char* key, Strategy fallback,
                                   const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return parse_strategy(j.at(key).get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const DetectorConfig& c) {
  nlohmann::json enc = nlohmann::json::array();
  for (const auto& e : c.encoder)
    enc.push_back({{"strategy", to_string(e.strategy)},
                   {"npoint", e.npoint},
                   {"sa", detail::sa_to_json(e.sa)},
                   {"score_hidden", e.score_hidden}});
  nlohmann::json sizes = nlohmann::json::array();
  for (const Vec3& m : c.mean_sizes) sizes.push_back({m.x, m.y, m.z});
  return {{"class_names", c.class_names},
          {"input_features", c.input_features},
          {"encoder", enc},
          {"vote",
           {{"strategy", to_string(c.vote.strategy)},
            {"npoint", c.vote.npoint},
            {"score_hidden", c.vote.score_hidden},
            {"offset_hidden", c.vote.offset_hidden}}},
          {"aggregation", detail::sa_to_json(c.aggregation)},
          {"cls_hidden", c.cls_hidden},
          {"reg_hidden", c.reg_hidden},
          {"mean_sizes", sizes},
          {"angle_bins", c.angle_bins},
          {"featfps_lambda", c.featfps_lambda},
          {"score_threshold", c.score_threshold},
          {"nms_threshold", c.nms_threshold},
          {"context", {{"mode", to_string(c.context.mode)}, {"amount", c.context.amount}}},
          {"loss_weights",
           {{"sample", c.loss_weights.sample},
            {"cent", c.loss_weights.cent},
            {"cls", c.loss_weights.cls},
            {"box", c.loss_weights.box}}},
          {"smooth_l1_beta", c.smooth_l1_beta}};
}

/// Keys absent from `j` keep the values of `base`.
inline DetectorConfig detector_config_from_json(const nlohmann::json& j, DetectorConfig base = DetectorConfig::toy(),
                                                const std::string& where = "detector") {
  using detail::get_or;
  detail::expect_keys(j,
                      {"preset", "class_names", "input_features", "encoder", "vote", "aggregation", "cls_hidden",
                       "reg_hidden", "mean_sizes", "angle_bins", "featfps_lambda", "score_threshold", "nms_threshold",
                       "context", "loss_weights", "smooth_l1_beta"},
                      where);
  DetectorConfig c = std::move(base);
  if (j.contains("preset")) {
    const auto p = get_or<std::string>(j, "preset", "toy", where);
    if (p == "toy")
      c = DetectorConfig::toy();
    else if (p == "kitti")
      c = DetectorConfig::kitti();
    else
      throw ConfigError(where + ".preset: unknown preset '" + p + "'");
  }
  c.class_names = get_or(j, "class_names", c.class_names, where);
  c.input_features = get_or(j, "input_features", c.input_features, where);
  if (c.input_features > 1) throw ConfigError(where + ".input_features: must be 0 or 1");
  if (j.contains("encoder")) {
    c.encoder.clear();
    for (const auto& e : j["encoder"]) {
      const std::string w = where + ".encoder";
      detail::expect_keys(e, {"strategy", "npoint", "sa", "score_hidden"}, w);
      EncoderLayerSpec s;
      s.strategy = detail::strategy_from_json(e, "strategy", Strategy::kDFps, w);
      s.npoint = get_or<std::size_t>(e, "npoint", 0, w);
      if (!e.contains("sa")) throw ConfigError(w + ": 'sa' required");
      s.sa = detail::sa_from_json(e["sa"], w + ".sa");
      s.score_hidden = get_or<std::vector<std::size_t>>(e, "score_hidden", {}, w);
      c.encoder.push_back(std::move(s));
    }
  }
  if (j.contains("vote")) {
    const auto& v = j["vote"];
    const std::string w = where + ".vote";
    detail::expect_keys(v, {"strategy", "npoint", "score_hidden", "offset_hidden"}, w);
    c.vote.strategy = detail::strategy_from_json(v, "strategy", c.vote.strategy, w);
    c.vote.npoint = get_or(v, "npoint", c.vote.npoint, w);
    c.vote.score_hidden = get_or(v, "score_hidden", c.vote.score_hidden, w);
    c.vote.offset_hidden = get_or(v, "offset_hidden", c.vote.offset_hidden, w);
  }
  if (j.contains("aggregation")) c.aggregation = detail::sa_from_json(j["aggregation"], where + ".aggregation");
  c.cls_hidden = get_or(j, "cls_hidden", c.cls_hidden, where);
  c.reg_hidden = get_or(j, "reg_hidden", c.reg_hidden, where);
  if (j.contains("mean_sizes")) {
    c.mean_sizes.clear();
    for (const auto& m : j["mean_sizes"]) {
      const auto v = m.get<std::vector<double>>();
      if (v.size() != 3) throw ConfigError(where + ".mean_sizes: each entry needs 3 values");
      c.mean_sizes.push_back({v[0], v[1], v[2]});
    }
  }
  c.angle_bins = get_or(j, "angle_bins", c.angle_bins, where);
  c.featfps_lambda = get_or(j, "featfps_lambda", c.featfps_lambda, where);
  c.score_threshold = get_or(j, "score_threshold", c.score_threshold, where);
  c.nms_threshold = get_or(j, "nms_threshold", c.nms_threshold, where);
  if (j.contains("context")) {
    const auto& x = j["context"];
    detail::expect_keys(x, {"mode", "amount"}, where + ".context");
    if (x.contains("mode")) c.context.mode = parse_context_mode(get_or<std::string>(x, "mode", "length", where));
    c.context.amount = get_or(x, "amount", c.context.amount, where);
  }
  if (j.contains("loss_weights")) {
    const auto& x = j["loss_weights"];
    detail::expect_keys(x, {"sample", "cent", "cls", "box"}, where + ".loss_weights");
    c.loss_weights.sample = get_or(x, "sample", c.loss_weights.sample, where);
    c.loss_weights.cent = get_or(x, "cent", c.loss_weights.cent, where);
    c.loss_weights.cls = get_or(x, "cls", c.loss_weights.cls, where);
    c.loss_weights.box = get_or(x, "box", c.loss_weights.box, where);
  }
  c.smooth_l1_beta = get_or(j, "smooth_l1_beta", c.smooth_l1_beta, where);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Detector

/// Per-scene cache of the deterministic prefix of the encoder (leading
/// D-FPS layers): sampled indices and ball-query groups.
class SceneCache {
 public:
  struct Layer {
    std::vector<std::size_t> centers;  // local indices into the previous layer
    std::vector<nn::ScaleInput> scales;
  };

  /// Clears the cache if `cloud` differs from the one it was filled for.
  void bind(const PointCloud& cloud) {
    std::uint64_t h = 1469598103934665603ull;
    for (const Vec3& p : cloud.coords)
      for (double v : {p.x, p.y, p.z}) {
        h ^= std::bit_cast<std::uint64_t>(v);
        h *= 1099511628211ull;
      }
    if (h != fingerprint_ || cloud.size() != size_) layers.clear();
    fingerprint_ = h;
    size_ = cloud.size();
  }

  std::vector<Layer> layers;

 private:
  std::uint64_t fingerprint_ = 0;
  std::size_t size_ = 0;
};

/// Points scored by a sampling head, with their logits.
struct ScoredLayer {
  std::size_t layer = 0;  // encoder index, or encoder.size() for the vote layer
  Strategy strategy = Strategy::kCtrAware;
  std::vector<Vec3> points;
  nn::Tensor logits;
};

struct ForwardOutput {
  std::vector<std::vector<std::size_t>> layer_indices;  // input-cloud indices per encoder layer
  std::vector<ScoredLayer> scored;
  VoteSet votes;
  nn::Tensor cls_logits;  // R x C
  nn::Tensor reg;         // R x coder width
};

struct DetectorParams {
  std::vector<nn::SaParams> encoder;
  std::vector<nn::MlpParams> encoder_score;  // empty MlpParams for non-scored layers
  nn::MlpParams vote_score;
  nn::MlpParams offset;
  nn::SaParams aggregation;
  nn::MlpParams cls;
  nn::MlpParams reg;
};

class Detector {
 public:
  explicit Detector(DetectorConfig config, std::uint64_t seed = 0) : cfg_(std::move(config)) {
    cfg_.validate();
    Rng rng(seed);
    for (std::size_t l = 0; l < cfg_.encoder.size(); ++l) {
      const auto& e = cfg_.encoder[l];
      p_.encoder.push_back(nn::init_sa(e.sa, cfg_.layer_input_width(l), rng));
      p_.encoder_score.push_back(is_score_based(e.strategy)
                                     ? init_score_head(cfg_.score_spec(cfg_.layer_input_width(l), e.score_hidden), rng)
                                     : nn::MlpParams{});
    }
    if (is_score_based(cfg_.vote.strategy))
      p_.vote_score = init_score_head(cfg_.score_spec(cfg_.encoder_width(), cfg_.vote.score_hidden), rng);
    p_.offset = nn::init_mlp(cfg_.offset_spec(), rng);
    zero_last(p_.offset);
    p_.aggregation = nn::init_sa(cfg_.aggregation, cfg_.encoder_width(), rng);
    p_.cls = init_score_head(cfg_.head_spec(cfg_.cls_hidden, cfg_.num_classes()), rng);
    p_.reg = nn::init_mlp(cfg_.head_spec(cfg_.reg_hidden, cfg_.coder().width()), rng);
    zero_last(p_.reg);
  }

  const DetectorConfig& config() const { return cfg_; }
  DetectorParams& params() { return p_; }

  /// Flat, ordered parameter list (checkpoint and optimizer order).
  nn::NamedParams parameters() const {
    nn::NamedParams np;
    for (std::size_t l = 0; l < p_.encoder.size(); ++l) {
      np.add("encoder" + std::to_string(l), p_.encoder[l]);
      if (!p_.encoder_score[l].layers.empty()) np.add("encoder" + std::to_string(l) + ".score", p_.encoder_score[l]);
    }
    if (!p_.vote_score.layers.empty()) np.add("vote.score", p_.vote_score);
    np.add("vote.offset", p_.offset);
    np.add("aggregation", p_.aggregation);
    np.add("head.cls", p_.cls);
    np.add("head.reg", p_.reg);
    return np;
  }

  /// `seed` drives random-strategy layers only.
  ForwardOutput forward(const PointCloud& cloud, SceneCache* cache = nullptr, std::uint64_t seed = 0) const {
    if (cloud.empty()) throw std::invalid_argument("Detector::forward: empty point cloud");
    if (cache) cache->bind(cloud);
    ForwardOutput out;
    std::vector<Vec3> pos = cloud.coords;
    std::vector<std::size_t> global(pos.size());
    std::iota(global.begin(), global.end(), std::size_t{0});
    nn::Tensor feat;
    if (cfg_.input_features == 1) {
      std::vector<double> v = cloud.has_intensity() ? cloud.intensity : std::vector<double>(cloud.size(), 0.0);
      feat = nn::Tensor({cloud.size(), 1}, std::move(v));
    }
    bool fixed_prefix = true;
    for (std::size_t l = 0; l < cfg_.encoder.size(); ++l) {
      const EncoderLayerSpec& e = cfg_.encoder[l];
      fixed_prefix = fixed_prefix && e.strategy == Strategy::kDFps;
      const bool cached = fixed_prefix && cache && cache->layers.size() > l;
      std::vector<std::size_t> local;
      if (cached)
        local = cache->layers[l].centers;
      else
        local = select(e.strategy, std::min(e.npoint, pos.size()), pos, feat,
                       is_score_based(e.strategy) ? &p_.encoder_score[l] : nullptr,
                       is_score_based(e.strategy) ? cfg_.score_spec(cfg_.layer_input_width(l), e.score_hidden)
                                                  : nn::MlpSpec{},
                       l, seed, out);
      std::vector<Vec3> centers;
      centers.reserve(local.size());
      for (std::size_t i : local) centers.push_back(pos[i]);
      std::vector<nn::ScaleInput> inputs;
      if (cached) {
        inputs = cache->layers[l].scales;
      } else {
        for (const auto& s : e.sa.scales) {
          GroupIndex g = ball_query(pos, centers, s.radius, s.nquery);
          std::vector<double> rel = relative_coordinates(pos, centers, g);
          inputs.push_back({std::move(g), std::move(rel)});
        }
        if (fixed_prefix && cache && cache->layers.size() == l) cache->layers.push_back({local, inputs});
      }
      feat = nn::sa_layer(e.sa, p_.encoder[l], inputs, feat);
      std::vector<std::size_t> g;
      g.reserve(local.size());
      for (std::size_t i : local) g.push_back(global[i]);
      global = std::move(g);
      pos = std::move(centers);
      out.layer_indices.push_back(global);
    }

    const std::size_t nv = std::min(cfg_.vote.npoint, pos.size());
    const std::size_t vote_layer = cfg_.encoder.size();
    std::vector<std::size_t> rep = select(
        cfg_.vote.strategy, nv, pos, feat, is_score_based(cfg_.vote.strategy) ? &p_.vote_score : nullptr,
        is_score_based(cfg_.vote.strategy) ? cfg_.score_spec(cfg_.encoder_width(), cfg_.vote.score_hidden)
                                           : nn::MlpSpec{},
        vote_layer, seed, out);
    std::vector<Vec3> rep_pos;
    for (std::size_t i : rep) rep_pos.push_back(pos[i]);
    out.votes = predict_and_shift(nn::gather_rows(feat, std::span<const std::size_t>(rep)), rep_pos,
                                  cfg_.offset_spec(), p_.offset);
    for (std::size_t i : rep) out.votes.indices.push_back(global[i]);

    const nn::Tensor agg = aggregate_instances(out.votes, pos, feat, cfg_.aggregation, p_.aggregation);
    out.cls_logits = nn::forward_mlp(cfg_.head_spec(cfg_.cls_hidden, cfg_.num_classes()), p_.cls, agg);
    out.reg = nn::forward_mlp(cfg_.head_spec(cfg_.reg_hidden, cfg_.coder().width()), p_.reg, agg);
    return out;
  }

  /// Multi-task loss against ground-truth boxes (original annotations).
  nn::LossTerms loss(ForwardOutput& f, std::span<const Box7> boxes) const {
    detail::require_instance_ids(boxes, "Detector::loss");
    const std::size_t C = cfg_.num_classes();
    for (const Box7& b : boxes)
      if (b.class_id < 0 || static_cast<std::size_t>(b.class_id) >= C)
        throw std::invalid_argument("Detector::loss: box class " + std::to_string(b.class_id) + " out of range");
    nn::LossTerms t;

    t.sample = nn::Tensor::scalar(0.0);
    for (const ScoredLayer& s : f.scored) {
      const PointTargets pt = point_targets(s.points, boxes, C);
      const nn::Tensor l = s.strategy == Strategy::kCtrAware ? nn::loss_ctr_aware(s.logits, pt.labels, pt.masks)
                                                             : nn::loss_cls_aware(s.logits, pt.labels);
      t.sample = nn::add(t.sample, l);
    }

    VoteSet& v = f.votes;
    v.membership = assign_membership(v.positions, boxes, cfg_.context);
    std::vector<Vec3> centers;
    for (const Box7& b : boxes) centers.push_back(b.center);
    t.cent = nn::loss_centroid(v.offsets, v.positions, v.membership, centers).loss;

    const PointTargets ct = point_targets(v.shifted, boxes, C);
    t.cls = nn::loss_cls_aware(f.cls_logits, ct.labels);

    std::vector<std::size_t> pos_rows;
    std::vector<Box7> targets;
    std::vector<Vec3> centroids;
    for (std::size_t i = 0; i < v.shifted.size(); ++i)
      if (ct.slot[i] >= 0) {
        pos_rows.push_back(i);
        targets.push_back(boxes[static_cast<std::size_t>(ct.slot[i])]);
        centroids.push_back(v.shifted[i]);
      }
    const nn::Tensor pred = pos_rows.empty() ? nn::Tensor::zeros({0, cfg_.coder().width()})
                                             : nn::gather_rows(f.reg, std::span<const std::size_t>(pos_rows));
    t.box = nn::loss_box(pred, targets, centroids, cfg_.coder(), cfg_.smooth_l1_beta);
    t.total = nn::combine(t, cfg_.loss_weights);
    return t;
  }

  std::vector<Proposal> proposals(const PointCloud& cloud, SceneCache* cache = nullptr) const {
    if (cloud.empty()) return {};
    nn::NoGradGuard guard;
    const ForwardOutput f = forward(cloud, cache);
    return generate_proposals(f.cls_logits, f.reg, f.votes.shifted, cfg_.coder());
  }

  std::vector<ScoredBox> detect(const PointCloud& cloud, SceneCache* cache = nullptr) const {
    const auto props = proposals(cloud, cache);
    return postprocess(props, cfg_.nms_threshold, cfg_.score_threshold);
  }

  // Checkpoint round trip: configuration plus every parameter buffer.
  void save_to(nn::Checkpoint& ck) const {
    ck.config = to_json(cfg_);
    const nn::NamedParams np = parameters();
    for (std::size_t i = 0; i < np.tensors.size(); ++i) {
      const auto v = np.tensors[i].values();
      ck.buffers.push_back({np.names[i], np.tensors[i].shape(), {v.begin(), v.end()}});
    }
  }

  static Detector load_from(const nn::Checkpoint& ck) {
    Detector d(detector_config_from_json(ck.config, DetectorConfig::toy(), "checkpoint.config"));
    nn::NamedParams np = d.parameters();
    for (std::size_t i = 0; i < np.tensors.size(); ++i) {
      const nn::NamedBuffer* b = ck.find(np.names[i]);
      if (!b) throw DataError("checkpoint: missing parameter '" + np.names[i] + "'");
      if (b->shape != np.tensors[i].shape())
        throw DataError("checkpoint: parameter '" + np.names[i] + "' has shape " + nn::shape_string(b->shape) +
                        ", model expects " + nn::shape_string(np.tensors[i].shape()));
      std::copy(b->values.begin(), b->values.end(), np.tensors[i].mutable_values().begin());
    }
    return d;
  }

 private:
  static nn::MlpParams init_score_head(const nn::MlpSpec& spec, Rng& rng) {
    nn::MlpParams p = nn::init_mlp(spec, rng);
    // Start from a low foreground prior.
    for (double& b : p.layers.back().bias.mutable_values()) b = -2.0;
    return p;
  }

  static void zero_last(nn::MlpParams& p) {
    for (double& w : p.layers.back().weight.mutable_values()) w = 0.0;
  }

  std::vector<std::size_t> select(Strategy strategy, std::size_t k, const std::vector<Vec3>& pos,
                                  const nn::Tensor& feat, const nn::MlpParams* head, const nn::MlpSpec& head_spec,
                                  std::size_t layer, std::uint64_t seed, ForwardOutput& out) const {
    switch (strategy) {
      case Strategy::kDFps:
        return sample_dfps(pos, k).indices;
      case Strategy::kRandom:
        return sample_random(pos.size(), k, Rng::derive(seed, layer)).indices;
      case Strategy::kFeatFps: {
        PointCloud pc;
        pc.coords = pos;
        if (feat.defined()) {
          pc.features = FeatureMatrix(feat.rows(), feat.cols());
          std::copy(feat.values().begin(), feat.values().end(), pc.features.data.begin());
        } else {
          pc.features = FeatureMatrix(pos.size(), 1, 0.0);
        }
        return sample_featfps(pc, k, 0, cfg_.featfps_lambda).indices;
      }
      case Strategy::kClsAware:
      case Strategy::kCtrAware: {
        if (!feat.defined()) throw ConfigError("score-based sampling needs point features");
        nn::Tensor logits = nn::forward_mlp(head_spec, *head, feat);
        const std::size_t c = logits.cols();
        std::vector<double> score(logits.rows());
        for (std::size_t i = 0; i < score.size(); ++i) {
          double m = logits.at(i, 0);
          for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits.at(i, j));
          score[i] = m;
        }
        out.scored.push_back({layer, strategy, pos, logits});
        return sample_topk(score, k, strategy).indices;
      }
    }
    return {};
  }

  DetectorConfig cfg_;
  DetectorParams p_;
};

inline void save_detector(const std::string& path, const Detector& d) {
  nn::Checkpoint ck;
  d.save_to(ck);
  nn::write_checkpoint(path, ck);
}

inline Detector load_detector(const std::string& path) { return Detector::load_from(nn::read_checkpoint(path)); }

}  // namespace iassd
