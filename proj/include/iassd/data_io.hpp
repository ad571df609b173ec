#pragma once

// Point and label file formats, synthetic scene generation, the training
// augmentation pipeline and a KITTI label converter.
//
// Point binary: consecutive 16-byte records of little-endian float32
// (x, y, z, intensity).
//
// Label text: one box per line,
//     <class> <cx> <cy> <cz> <l> <w> <h> <yaw> <instance_id>
// separated by whitespace; '#' starts a comment; blank lines are ignored.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "iassd/errors.hpp"
#include "iassd/geometry.hpp"
#include "iassd/point_cloud.hpp"
#include "iassd/random.hpp"

namespace iassd {

/// Class name <-> id mapping; the id is the position in `names`.
struct ClassCatalog {
  std::vector<std::string> names{"Car", "Pedestrian", "Cyclist"};

  std::size_t size() const { return names.size(); }
  std::optional<int> find(std::string_view name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return std::nullopt;
  }
  const std::string& name(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names.size())
      throw std::out_of_range("ClassCatalog: unknown class id " + std::to_string(id));
    return names[static_cast<std::size_t>(id)];
  }
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

inline float load_f32_le(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(v);
}

inline void store_f32_le(std::string& out, float f) {
  const auto v = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(const std::string& tok, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw DataError(where + ": '" + tok + "' is not a number");
  }
  if (used != tok.size() || !std::isfinite(v)) throw DataError(where + ": '" + tok + "' is not a finite number");
  return v;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Point binary

inline PointCloud parse_point_bin(const std::string& bytes, const std::string& source = "<memory>") {
  if (bytes.size() % 16 != 0)
    throw DataError(source + ": truncated point file, " + std::to_string(bytes.size()) +
                    " bytes is not a multiple of 16 (partial record at byte offset " +
                    std::to_string(bytes.size() - bytes.size() % 16) + ")");
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.coords.reserve(n);
  cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 4> v{};
    for (int c = 0; c < 4; ++c) {
      const std::size_t off = i * 16 + static_cast<std::size_t>(c) * 4;
      const float f = detail::load_f32_le(bytes.data() + off);
      if (!std::isfinite(f))
        throw DataError(source + ": non-finite value in record " + std::to_string(i) + " at byte offset " +
                        std::to_string(off));
      v[static_cast<std::size_t>(c)] = f;
    }
    cloud.coords.push_back({v[0], v[1], v[2]});
    cloud.intensity.push_back(v[3]);
  }
  return cloud;
}

inline PointCloud read_point_bin(const std::string& path) { return parse_point_bin(detail::read_file(path), path); }

/// Values are narrowed to float32; a missing intensity channel is written as 0.
inline std::string serialize_point_bin(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.coords[i];
    detail::store_f32_le(out, static_cast<float>(p.x));
    detail::store_f32_le(out, static_cast<float>(p.y));
    detail::store_f32_le(out, static_cast<float>(p.z));
    detail::store_f32_le(out, static_cast<float>(cloud.has_intensity() ? cloud.intensity[i] : 0.0));
  }
  return out;
}

inline void write_point_bin(const std::string& path, const PointCloud& cloud) {
  detail::write_file(path, serialize_point_bin(cloud));
}

// ---------------------------------------------------------------------------
// Label text

inline std::vector<Box7> parse_scene_labels(const std::string& text, const ClassCatalog& catalog = {},
                                            const std::string& source = "<memory>") {
  std::vector<Box7> boxes;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 9)
      throw DataError(where + ": expected 9 fields (class cx cy cz l w h yaw instance_id), got " +
                      std::to_string(tok.size()));
    const auto cls = catalog.find(tok[0]);
    if (!cls) throw DataError(where + ": unknown class '" + tok[0] + "'");
    std::array<double, 7> v{};
    for (std::size_t i = 0; i < 7; ++i) v[i] = detail::parse_double(tok[i + 1], where);
    std::int64_t id = 0;
    try {
      std::size_t used = 0;
      id = std::stoll(tok[8], &used);
      if (used != tok[8].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(where + ": instance id '" + tok[8] + "' is not an integer");
    }
    if (!(v[3] > 0.0 && v[4] > 0.0 && v[5] > 0.0)) throw DataError(where + ": box dimensions must be positive");
    boxes.emplace_back(Vec3{v[0], v[1], v[2]}, v[3], v[4], v[5], v[6], *cls, id);
  }
  return boxes;
}

inline std::vector<Box7> read_scene_labels(const std::string& path, const ClassCatalog& catalog = {}) {
  return parse_scene_labels(detail::read_file(path), catalog, path);
}

inline std::string serialize_scene_labels(std::span<const Box7> boxes, const ClassCatalog& catalog = {}) {
  std::string out = "# class cx cy cz l w h yaw instance_id\n";
  for (const Box7& b : boxes) {
    out += catalog.name(b.class_id);
    for (double v : {b.center.x, b.center.y, b.center.z, b.l, b.w, b.h, b.yaw}) out += " " + detail::format_double(v);
    out += " " + std::to_string(b.instance_id.value_or(-1)) + "\n";
  }
  return out;
}

inline void write_scene_labels(const std::string& path, std::span<const Box7> boxes, const ClassCatalog& catalog = {}) {
  detail::write_file(path, serialize_scene_labels(boxes, catalog));
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct ClassGenSpec {
  std::string name;
  std::size_t min_count = 0, max_count = 0;      // instances per scene
  Vec3 mean_size;                                // (l, w, h) meters
  Vec3 size_spread;                              // uniform +- per dimension
  std::size_t min_points = 0, max_points = 0;    // interior points per instance
};

struct SceneGenSpec {
  double extent = 20.0;              // half-width of the square scene, meters
  std::size_t background_points = 12000;
  std::size_t total_points = 0;      // when > 0, background = total - instance points
  double ground_noise = 0.03;        // stddev of ground z, meters
  double shell_fraction = 0.6;       // share of instance points near the faces
  double shell_depth = 0.08;         // meters
  std::uint64_t seed = 0;
  std::vector<ClassGenSpec> classes = default_classes();

  static std::vector<ClassGenSpec> default_classes() {
    return {{"Car", 2, 4, {4.0, 1.7, 1.6}, {0.3, 0.1, 0.1}, 30, 100},
            {"Pedestrian", 2, 4, {0.8, 0.6, 1.7}, {0.1, 0.1, 0.1}, 15, 60},
            {"Cyclist", 1, 3, {1.8, 0.6, 1.7}, {0.1, 0.05, 0.1}, 20, 80}};
  }

  void validate() const {
    if (!(extent > 0.0)) throw ConfigError("scene spec: extent must be positive");
    if (!(ground_noise >= 0.0)) throw ConfigError("scene spec: ground noise must be non-negative");
    if (!(shell_fraction >= 0.0 && shell_fraction <= 1.0)) throw ConfigError("scene spec: shell fraction outside [0, 1]");
    for (const auto& c : classes) {
      if (c.min_count > c.max_count) throw ConfigError("scene spec: class '" + c.name + "' count range inverted");
      if (c.min_points == 0 || c.min_points > c.max_points)
        throw ConfigError("scene spec: class '" + c.name + "' point range invalid");
      if (!(c.mean_size.x - c.size_spread.x > 0.0 && c.mean_size.y - c.size_spread.y > 0.0 &&
            c.mean_size.z - c.size_spread.z > 0.0))
        throw ConfigError("scene spec: class '" + c.name + "' sizes must stay positive");
    }
  }

  ClassCatalog catalog() const {
    ClassCatalog cat;
    cat.names.clear();
    for (const auto& c : classes) cat.names.push_back(c.name);
    return cat;
  }
};

namespace detail {

/// Uniform sample strictly inside the box, biased toward the faces by
/// `shell_fraction` (4 side faces and the roof, area weighted).
inline Vec3 sample_instance_point(const Box7& b, double shell_fraction, double shell_depth, Rng& rng) {
  constexpr double kInset = 1e-3;
  const double hl = 0.5 * b.l - kInset, hw = 0.5 * b.w - kInset, hh = 0.5 * b.h - kInset;
  Vec3 local;
  if (rng.uniform() < shell_fraction) {
    const double a_front = b.w * b.h, a_side = b.l * b.h, a_top = b.l * b.w;
    const double pick = rng.uniform(0.0, 2.0 * a_front + 2.0 * a_side + a_top);
    const double dx = std::min(shell_depth, hl), dy = std::min(shell_depth, hw), dz = std::min(shell_depth, hh);
    local = {rng.uniform(-hl, hl), rng.uniform(-hw, hw), rng.uniform(-hh, hh)};
    if (pick < 2.0 * a_front) {
      local.x = (pick < a_front ? 1.0 : -1.0) * (hl - rng.uniform(0.0, dx));
    } else if (pick < 2.0 * a_front + 2.0 * a_side) {
      local.y = (pick < 2.0 * a_front + a_side ? 1.0 : -1.0) * (hw - rng.uniform(0.0, dy));
    } else {
      local.z = hh - rng.uniform(0.0, dz);
    }
  } else {
    local = {rng.uniform(-hl, hl), rng.uniform(-hw, hw), rng.uniform(-hh, hh)};
  }
  return from_box_frame(local, b);
}

inline bool overlaps_any(const Box7& b, std::span<const Box7> others) {
  for (const Box7& o : others)
    if (bev_intersection_area(b, o) > 0.0) return true;
  return false;
}

inline bool inside_any(const Vec3& p, std::span<const Box7> boxes) {
  for (const Box7& b : boxes)
    if (contains(b, p)) return true;
  return false;
}

}  // namespace detail

/// Ground-plane background with boxed instances standing on it. Each
/// instance holds exactly its sampled point count (background points never
/// fall inside a box). Output point order is shuffled. Deterministic per seed.
inline LabeledScene generate_scene(const SceneGenSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  LabeledScene scene;
  scene.frame_id = "synth_" + std::to_string(spec.seed);
  std::vector<std::size_t> counts;
  std::int64_t next_id = 0;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    const ClassGenSpec& cs = spec.classes[c];
    const std::size_t n = cs.min_count + rng.below(cs.max_count - cs.min_count + 1);
    for (std::size_t k = 0; k < n; ++k) {
      const Vec3 size{rng.uniform(cs.mean_size.x - cs.size_spread.x, cs.mean_size.x + cs.size_spread.x),
                      rng.uniform(cs.mean_size.y - cs.size_spread.y, cs.mean_size.y + cs.size_spread.y),
                      rng.uniform(cs.mean_size.z - cs.size_spread.z, cs.mean_size.z + cs.size_spread.z)};
      const double margin = 0.5 * std::hypot(size.x, size.y);
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        const double x = rng.uniform(-spec.extent + margin, spec.extent - margin);
        const double y = rng.uniform(-spec.extent + margin, spec.extent - margin);
        const double yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
        Box7 b({x, y, 0.5 * size.z}, size.x, size.y, size.z, yaw, static_cast<int>(c), next_id);
        if (detail::overlaps_any(b, scene.boxes)) continue;
        scene.boxes.push_back(b);
        counts.push_back(cs.min_points + rng.below(cs.max_points - cs.min_points + 1));
        placed = true;
      }
      if (!placed)
        throw ConfigError("scene spec infeasible: could not place a '" + cs.name + "' instance after 100 retries");
      ++next_id;
    }
  }
  std::size_t instance_points = 0;
  for (std::size_t n : counts) instance_points += n;
  std::size_t background = spec.background_points;
  if (spec.total_points > 0) {
    if (spec.total_points < instance_points)
      throw ConfigError("scene spec infeasible: total points below instance point count");
    background = spec.total_points - instance_points;
  }
  PointCloud& cloud = scene.cloud;
  for (std::size_t b = 0; b < scene.boxes.size(); ++b)
    for (std::size_t k = 0; k < counts[b]; ++k) {
      cloud.coords.push_back(detail::sample_instance_point(scene.boxes[b], spec.shell_fraction, spec.shell_depth, rng));
      cloud.intensity.push_back(rng.uniform());
    }
  for (std::size_t k = 0; k < background; ++k) {
    Vec3 p;
    do {
      p = {rng.uniform(-spec.extent, spec.extent), rng.uniform(-spec.extent, spec.extent),
           rng.normal(0.0, spec.ground_noise)};
    } while (detail::inside_any(p, scene.boxes));
    cloud.coords.push_back(p);
    cloud.intensity.push_back(rng.uniform());
  }
  // Shuffle so point order carries no label information.
  for (std::size_t i = cloud.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(cloud.coords[i - 1], cloud.coords[j]);
    std::swap(cloud.intensity[i - 1], cloud.intensity[j]);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
  double flip_prob = 0.5;
  double rot_min = -std::numbers::pi / 4.0;
  double rot_max = std::numbers::pi / 4.0;
  double scale_min = 0.95;
  double scale_max = 1.05;
  std::vector<std::size_t> paste_counts{20, 15, 15};  // per class id
  std::size_t min_points = 5;
  std::size_t paste_retries = 100;                    // attempts per class

  void validate() const {
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("augment: flip probability outside [0, 1]");
    if (rot_min > rot_max) throw ConfigError("augment: rotation range inverted");
    if (!(scale_min > 0.0) || scale_min > scale_max) throw ConfigError("augment: scale range invalid");
  }

  static AugmentConfig identity() {
    AugmentConfig c;
    c.flip_prob = 0.0;
    c.rot_min = c.rot_max = 0.0;
    c.scale_min = c.scale_max = 1.0;
    c.paste_counts.assign(c.paste_counts.size(), 0);
    return c;
  }
};

/// A ground-truth instance and its interior points, in world coordinates.
struct BankEntry {
  Box7 box;
  std::vector<Vec3> points;
  std::vector<double> intensity;
};

inline std::vector<BankEntry> build_bank(std::span<const LabeledScene> scenes) {
  std::vector<BankEntry> bank;
  for (const auto& s : scenes)
    for (const Box7& b : s.boxes) {
      BankEntry e{b, {}, {}};
      for (std::size_t i = 0; i < s.cloud.size(); ++i)
        if (contains(b, s.cloud.coords[i])) {
          e.points.push_back(s.cloud.coords[i]);
          e.intensity.push_back(s.cloud.has_intensity() ? s.cloud.intensity[i] : 0.0);
        }
      bank.push_back(std::move(e));
    }
  return bank;
}

struct AugmentResult {
  LabeledScene scene;
  bool flipped = false;
  double rotation = 0.0;
  double scale = 1.0;
  std::size_t pasted = 0;
  std::size_t paste_shortfall = 0;  // requested pastes not placed within the retry budget
};

inline void flip_scene(LabeledScene& s) {
  for (Vec3& p : s.cloud.coords) p.y = -p.y;
  for (Box7& b : s.boxes) {
    b.center.y = -b.center.y;
    b.yaw = normalize_yaw(-b.yaw);
  }
}

inline void rotate_scene(LabeledScene& s, double theta) {
  const double c = std::cos(theta), sn = std::sin(theta);
  auto rot = [&](Vec3 p) { return Vec3{c * p.x - sn * p.y, sn * p.x + c * p.y, p.z}; };
  for (Vec3& p : s.cloud.coords) p = rot(p);
  for (Box7& b : s.boxes) {
    b.center = rot(b.center);
    b.yaw = normalize_yaw(b.yaw + theta);
  }
}

inline void scale_scene(LabeledScene& s, double f) {
  for (Vec3& p : s.cloud.coords) p = p * f;
  for (Box7& b : s.boxes) {
    b.center = b.center * f;
    b.l *= f;
    b.w *= f;
    b.h *= f;
  }
}

/// Flip (y-mirror) -> z-rotation -> uniform scale -> ground-truth paste of
/// bank instances at their recorded poses. Pastes overlapping any present
/// box in BEV are rejected; scene points inside a pasted box are removed.
inline AugmentResult augment(const LabeledScene& scene, const AugmentConfig& cfg, std::span<const BankEntry> bank,
                             std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  AugmentResult r{scene};
  LabeledScene& s = r.scene;
  r.flipped = rng.uniform() < cfg.flip_prob;
  r.rotation = rng.uniform(cfg.rot_min, cfg.rot_max);
  r.scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  if (r.flipped) flip_scene(s);
  if (r.rotation != 0.0) rotate_scene(s, r.rotation);
  if (r.scale != 1.0) scale_scene(s, r.scale);

  std::int64_t next_id = 0;
  for (const Box7& b : s.boxes) next_id = std::max(next_id, b.instance_id.value_or(-1) + 1);
  for (std::size_t cls = 0; cls < cfg.paste_counts.size(); ++cls) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < bank.size(); ++i)
      if (bank[i].box.class_id == static_cast<int>(cls) && bank[i].points.size() >= cfg.min_points)
        candidates.push_back(i);
    std::vector<char> used(bank.size(), 0);
    std::size_t placed = 0, attempts = 0;
    while (placed < cfg.paste_counts[cls] && attempts < cfg.paste_retries && !candidates.empty()) {
      ++attempts;
      const std::size_t pick = candidates[rng.below(candidates.size())];
      if (used[pick]) continue;
      const BankEntry& e = bank[pick];
      if (detail::overlaps_any(e.box, s.boxes)) continue;
      used[pick] = 1;
      PointCloud kept;
      for (std::size_t i = 0; i < s.cloud.size(); ++i)
        if (!contains(e.box, s.cloud.coords[i])) {
          kept.coords.push_back(s.cloud.coords[i]);
          if (s.cloud.has_intensity()) kept.intensity.push_back(s.cloud.intensity[i]);
        }
      for (std::size_t i = 0; i < e.points.size(); ++i) {
        kept.coords.push_back(e.points[i]);
        if (s.cloud.has_intensity() || s.cloud.empty()) kept.intensity.push_back(e.intensity[i]);
      }
      s.cloud = std::move(kept);
      Box7 b = e.box;
      b.instance_id = next_id++;
      s.boxes.push_back(b);
      ++placed;
    }
    r.pasted += placed;
    r.paste_shortfall += cfg.paste_counts[cls] - placed;
  }
  return r;
}

// ---------------------------------------------------------------------------
// KITTI conversion

/// Rectification and LiDAR->camera transform from a KITTI calib file.
struct KittiCalib {
  std::array<double, 9> r0{1, 0, 0, 0, 1, 0, 0, 0, 1};          // row-major 3x3
  std::array<double, 12> velo_to_cam{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};  // row-major 3x4
};

namespace detail {

inline std::array<double, 9> invert3(const std::array<double, 9>& m) {
  const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5], g = m[6], h = m[7], i = m[8];
  const double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
  if (std::abs(det) < 1e-12) throw DataError("calib: singular rotation matrix");
  const double s = 1.0 / det;
  return {(e * i - f * h) * s, (c * h - b * i) * s, (b * f - c * e) * s,
          (f * g - d * i) * s, (a * i - c * g) * s, (c * d - a * f) * s,
          (d * h - e * g) * s, (b * g - a * h) * s, (a * e - b * d) * s};
}

inline Vec3 mul3(const std::array<double, 9>& m, const Vec3& v) {
  return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
          m[6] * v.x + m[7] * v.y + m[8] * v.z};
}

}  // namespace detail

inline KittiCalib parse_kitti_calib(const std::string& text, const std::string& source = "<calib>") {
  std::map<std::string, std::vector<double>> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    std::vector<double> vals;
    for (const auto& tok : detail::split_ws(line.substr(colon + 1)))
      vals.push_back(detail::parse_double(tok, source + ":" + std::to_string(lineno)));
    kv[key] = std::move(vals);
  }
  auto need = [&](const char* key, std::size_t n) -> const std::vector<double>& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(source + ": missing calibration key '" + key + "'");
    if (it->second.size() != n)
      throw DataError(source + ": key '" + key + "' needs " + std::to_string(n) + " values");
    return it->second;
  };
  KittiCalib c;
  const auto& r0 = need("R0_rect", 9);
  std::copy(r0.begin(), r0.end(), c.r0.begin());
  const auto& tr = need("Tr_velo_to_cam", 12);
  std::copy(tr.begin(), tr.end(), c.velo_to_cam.begin());
  return c;
}

/// Rectified-camera point -> LiDAR frame: x_velo = R^-1 (R0^-1 x_rect - t).
inline Vec3 rect_to_lidar(const KittiCalib& c, const Vec3& p) {
  const std::array<double, 9> rot{c.velo_to_cam[0], c.velo_to_cam[1], c.velo_to_cam[2],
                                  c.velo_to_cam[4], c.velo_to_cam[5], c.velo_to_cam[6],
                                  c.velo_to_cam[8], c.velo_to_cam[9], c.velo_to_cam[10]};
  const Vec3 t{c.velo_to_cam[3], c.velo_to_cam[7], c.velo_to_cam[11]};
  const Vec3 ref = detail::mul3(detail::invert3(c.r0), p);
  return detail::mul3(detail::invert3(rot), ref - t);
}

/// Converts KITTI object labels (camera frame, bottom-center location,
/// dimensions h w l, rotation_y) into LiDAR-frame boxes. The camera's -y
/// axis is taken as "up"; yaw is the LiDAR-frame heading of the object's
/// length axis. Classes absent from the catalog (Van, DontCare, ...) are
/// skipped. Instance ids are the label line numbers (0-based).
inline std::vector<Box7> convert_kitti_labels(const std::string& text, const KittiCalib& calib,
                                              const ClassCatalog& catalog = {},
                                              const std::string& source = "<label>") {
  std::vector<Box7> out;
  std::istringstream in(text);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    const auto tok = detail::split_ws(line);
    ++lineno;
    if (tok.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (tok.size() < 15) throw DataError(where + ": expected at least 15 KITTI label fields");
    const auto cls = catalog.find(tok[0]);
    if (!cls) continue;
    const double h = detail::parse_double(tok[8], where), w = detail::parse_double(tok[9], where),
                 l = detail::parse_double(tok[10], where);
    const Vec3 bottom{detail::parse_double(tok[11], where), detail::parse_double(tok[12], where),
                      detail::parse_double(tok[13], where)};
    const double ry = detail::parse_double(tok[14], where);
    const Vec3 center = rect_to_lidar(calib, {bottom.x, bottom.y - 0.5 * h, bottom.z});
    const Vec3 origin = rect_to_lidar(calib, {0.0, 0.0, 0.0});
    const Vec3 heading = rect_to_lidar(calib, {std::cos(ry), 0.0, -std::sin(ry)}) - origin;
    out.emplace_back(center, l, w, h, std::atan2(heading.y, heading.x), *cls, lineno - 1);
  }
  return out;
}

}  // namespace iassd
