#pragma once

// Versioned experiment configuration (JSON, schema "iassd.experiment/v1").
//
// {
//   "schema": "iassd.experiment/v1",
//   "seed": 0,
//   "threads": 1,
//   "schedule": [{"strategy": "dfps", "k": 4096}, ...],
//   "strategies": ["random", "dfps", "featfps", "ctr_aware"],
//   "sample": {"k": 512, "runs": 10, "warmup": 2},
//   "scenes": {"source": "synthetic" | "directory", "count": 4, "first_seed": 0,
//              "generator": {...}, "dir": "path", "frames": ["000001", ...]},
//   "detector": {"preset": "toy", ...},
//   "train": {"steps": 1000, "lr": 0.01, ...},
//   "augment": {"flip_prob": 0.5, "rotation": [-0.785, 0.785], "scale": [0.95, 1.05],
//               "paste_counts": [20, 15, 15], "min_points": 5, "paste_retries": 100},
//   "eval": {"iou_thresholds": [0.7, 0.5, 0.5], "eleven_point": false},
//   "bench": {"n": 16384, "k": 512, "runs": 10, "warmup": 2},
//   "output": {"dir": "out"}
// }
//
// Every key except "schema" is optional. Unknown keys are errors.
// IASSD_DATA_DIR and IASSD_OUT_DIR override scenes.dir and output.dir.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "iassd/data_io.hpp"
#include "iassd/detector.hpp"
#include "iassd/errors.hpp"
#include "iassd/eval.hpp"
#include "iassd/sampling.hpp"
#include "iassd/train.hpp"
#include "json.hpp"

namespace iassd {

inline constexpr const char* kExperimentSchema = "iassd.experiment/v1";

struct SceneSource {
  enum class Kind { kSynthetic, kDirectory };
  Kind kind = Kind::kSynthetic;
  std::size_t count = 4;
  std::uint64_t first_seed = 0;
  SceneGenSpec generator;
  std::string dir;                  // <dir>/points/<frame>.bin, <dir>/labels/<frame>.txt
  std::vector<std::string> frames;  // empty: every .bin under <dir>/points
};

struct SampleSettings {
  std::size_t k = 512;
  std::size_t runs = 10;
  std::size_t warmup = 2;
};

struct BenchSettings {
  std::size_t n = 16384;
  std::size_t k = 512;
  std::size_t runs = 10;
  std::size_t warmup = 2;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::vector<LayerSpec> schedule = default_schedule();
  std::vector<Strategy> strategies{Strategy::kRandom, Strategy::kDFps, Strategy::kFeatFps, Strategy::kCtrAware};
  SampleSettings sample;
  SceneSource scenes;
  DetectorConfig detector = DetectorConfig::toy();
  bool detector_explicit = false;  // config file named a detector
  TrainConfig train;
  AugmentConfig augment;
  EvalConfig eval;
  BenchSettings bench;
  std::string out_dir = "out";
};

/// Path overrides from IASSD_DATA_DIR and IASSD_OUT_DIR.
inline void apply_environment(ExperimentConfig& e) {
  if (const char* d = std::getenv("IASSD_DATA_DIR"); d && *d) e.scenes.dir = d;
  if (const char* o = std::getenv("IASSD_OUT_DIR"); o && *o) e.out_dir = o;
}

namespace detail {

inline SceneGenSpec scene_spec_from_json(const nlohmann::json& j, const std::string& where) {
  expect_keys(j, {"extent", "background_points", "total_points", "ground_noise", "shell_fraction", "shell_depth",
                  "classes"},
              where);
  SceneGenSpec s;
  s.extent = get_or(j, "extent", s.extent, where);
  s.background_points = get_or(j, "background_points", s.background_points, where);
  s.total_points = get_or(j, "total_points", s.total_points, where);
  s.ground_noise = get_or(j, "ground_noise", s.ground_noise, where);
  s.shell_fraction = get_or(j, "shell_fraction", s.shell_fraction, where);
  s.shell_depth = get_or(j, "shell_depth", s.shell_depth, where);
  if (j.contains("classes")) {
    s.classes.clear();
    for (const auto& c : j["classes"]) {
      const std::string w = where + ".classes";
      expect_keys(c, {"name", "count", "mean_size", "size_spread", "points"}, w);
      ClassGenSpec cs;
      cs.name = get_or<std::string>(c, "name", "", w);
      const auto count = get_or<std::vector<std::size_t>>(c, "count", {1, 1}, w);
      const auto mean = get_or<std::vector<double>>(c, "mean_size", {1, 1, 1}, w);
      const auto spread = get_or<std::vector<double>>(c, "size_spread", {0, 0, 0}, w);
      const auto pts = get_or<std::vector<std::size_t>>(c, "points", {10, 10}, w);
      if (count.size() != 2 || pts.size() != 2 || mean.size() != 3 || spread.size() != 3)
        throw ConfigError(w + ": count/points need 2 values, mean_size/size_spread need 3");
      cs.min_count = count[0], cs.max_count = count[1];
      cs.mean_size = {mean[0], mean[1], mean[2]};
      cs.size_spread = {spread[0], spread[1], spread[2]};
      cs.min_points = pts[0], cs.max_points = pts[1];
      s.classes.push_back(cs);
    }
  }
  s.validate();
  return s;
}

inline AugmentConfig augment_from_json(const nlohmann::json& j, const std::string& where) {
  expect_keys(j, {"flip_prob", "rotation", "scale", "paste_counts", "min_points", "paste_retries"}, where);
  AugmentConfig a;
  a.flip_prob = get_or(j, "flip_prob", a.flip_prob, where);
  const auto rot = get_or<std::vector<double>>(j, "rotation", {a.rot_min, a.rot_max}, where);
  const auto scl = get_or<std::vector<double>>(j, "scale", {a.scale_min, a.scale_max}, where);
  if (rot.size() != 2 || scl.size() != 2) throw ConfigError(where + ": rotation and scale need [min, max]");
  a.rot_min = rot[0], a.rot_max = rot[1];
  a.scale_min = scl[0], a.scale_max = scl[1];
  a.paste_counts = get_or(j, "paste_counts", a.paste_counts, where);
  a.min_points = get_or(j, "min_points", a.min_points, where);
  a.paste_retries = get_or(j, "paste_retries", a.paste_retries, where);
  a.validate();
  return a;
}

}  // namespace detail

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  using detail::get_or;
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  if (!j.contains("schema")) throw ConfigError("config: missing 'schema' (expected \"" + std::string(kExperimentSchema) + "\")");
  const auto schema = get_or<std::string>(j, "schema", "", "config");
  if (schema != kExperimentSchema)
    throw ConfigError("config: unsupported schema '" + schema + "' (expected \"" + kExperimentSchema + "\")");
  detail::expect_keys(j,
                      {"schema", "seed", "threads", "schedule", "strategies", "sample", "scenes", "detector", "train",
                       "augment", "eval", "bench", "output"},
                      "config");
  ExperimentConfig e;
  e.seed = get_or(j, "seed", e.seed, "config");
  e.threads = get_or(j, "threads", e.threads, "config");
  if (e.threads == 0) throw ConfigError("config.threads: must be positive");
  if (j.contains("schedule")) {
    e.schedule.clear();
    for (const auto& l : j["schedule"]) {
      detail::expect_keys(l, {"strategy", "k"}, "config.schedule");
      e.schedule.push_back({detail::strategy_from_json(l, "strategy", Strategy::kDFps, "config.schedule"),
                            get_or<std::size_t>(l, "k", 0, "config.schedule")});
    }
    for (std::size_t i = 0; i < e.schedule.size(); ++i)
      if (e.schedule[i].k == 0 || (i > 0 && e.schedule[i].k >= e.schedule[i - 1].k))
        throw ConfigError("config.schedule: layer sizes must be positive and strictly decreasing");
  }
  if (j.contains("strategies")) {
    e.strategies.clear();
    for (const auto& s : j["strategies"]) {
      try {
        e.strategies.push_back(parse_strategy(s.get<std::string>()));
      } catch (const std::exception& ex) {
        throw ConfigError(std::string("config.strategies: ") + ex.what());
      }
    }
  }
  if (j.contains("sample")) {
    const auto& s = j["sample"];
    detail::expect_keys(s, {"k", "runs", "warmup"}, "config.sample");
    e.sample.k = get_or(s, "k", e.sample.k, "config.sample");
    e.sample.runs = get_or(s, "runs", e.sample.runs, "config.sample");
    e.sample.warmup = get_or(s, "warmup", e.sample.warmup, "config.sample");
    if (e.sample.k == 0 || e.sample.runs == 0) throw ConfigError("config.sample: k and runs must be positive");
  }
  if (j.contains("scenes")) {
    const auto& s = j["scenes"];
    detail::expect_keys(s, {"source", "count", "first_seed", "generator", "dir", "frames"}, "config.scenes");
    const auto src = get_or<std::string>(s, "source", "synthetic", "config.scenes");
    if (src == "synthetic")
      e.scenes.kind = SceneSource::Kind::kSynthetic;
    else if (src == "directory")
      e.scenes.kind = SceneSource::Kind::kDirectory;
    else
      throw ConfigError("config.scenes.source: expected 'synthetic' or 'directory'");
    e.scenes.count = get_or(s, "count", e.scenes.count, "config.scenes");
    e.scenes.first_seed = get_or(s, "first_seed", e.scenes.first_seed, "config.scenes");
    if (s.contains("generator")) e.scenes.generator = detail::scene_spec_from_json(s["generator"], "config.scenes.generator");
    e.scenes.dir = get_or(s, "dir", e.scenes.dir, "config.scenes");
    e.scenes.frames = get_or(s, "frames", e.scenes.frames, "config.scenes");
  }
  if (j.contains("detector")) {
    e.detector = detector_config_from_json(j["detector"], DetectorConfig::toy(), "config.detector");
    e.detector_explicit = true;
  }
  if (j.contains("train")) e.train = train_config_from_json(j["train"], {}, "config.train");
  if (j.contains("augment")) e.augment = detail::augment_from_json(j["augment"], "config.augment");
  e.train.augment_config = e.augment;
  if (j.contains("eval")) {
    const auto& x = j["eval"];
    detail::expect_keys(x, {"iou_thresholds", "eleven_point"}, "config.eval");
    e.eval.iou_thresholds = get_or(x, "iou_thresholds", e.eval.iou_thresholds, "config.eval");
    e.eval.eleven_point = get_or(x, "eleven_point", e.eval.eleven_point, "config.eval");
    for (double t : e.eval.iou_thresholds)
      if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("config.eval.iou_thresholds: values must lie in [0, 1]");
  }
  if (j.contains("bench")) {
    const auto& b = j["bench"];
    detail::expect_keys(b, {"n", "k", "runs", "warmup"}, "config.bench");
    e.bench.n = get_or(b, "n", e.bench.n, "config.bench");
    e.bench.k = get_or(b, "k", e.bench.k, "config.bench");
    e.bench.runs = get_or(b, "runs", e.bench.runs, "config.bench");
    e.bench.warmup = get_or(b, "warmup", e.bench.warmup, "config.bench");
    if (e.bench.runs < 10) throw ConfigError("config.bench.runs: at least 10 timed runs required");
    if (e.bench.k == 0 || e.bench.k > e.bench.n) throw ConfigError("config.bench: need 0 < k <= n");
  }
  if (j.contains("output")) {
    detail::expect_keys(j["output"], {"dir"}, "config.output");
    e.out_dir = get_or(j["output"], "dir", e.out_dir, "config.output");
  }
  apply_environment(e);
  return e;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

/// Loads or generates the configured scenes. Directory scenes require a
/// label file per frame when `need_labels` is set.
inline std::vector<LabeledScene> load_scenes(const SceneSource& src, const ClassCatalog& catalog,
                                             bool need_labels = true) {
  namespace fs = std::filesystem;
  std::vector<LabeledScene> out;
  if (src.kind == SceneSource::Kind::kSynthetic) {
    for (std::size_t i = 0; i < src.count; ++i) {
      SceneGenSpec s = src.generator;
      s.seed = src.first_seed + i;
      out.push_back(generate_scene(s));
    }
    return out;
  }
  if (src.dir.empty()) throw ConfigError("scenes: directory source needs 'dir' (or IASSD_DATA_DIR)");
  std::vector<std::string> frames = src.frames;
  if (frames.empty()) {
    const fs::path pts = fs::path(src.dir) / "points";
    if (!fs::is_directory(pts)) throw DataError("scenes: missing directory '" + pts.string() + "'");
    for (const auto& e : fs::directory_iterator(pts))
      if (e.path().extension() == ".bin") frames.push_back(e.path().stem().string());
    std::sort(frames.begin(), frames.end());
  }
  for (const auto& fr : frames) {
    LabeledScene s;
    s.frame_id = fr;
    s.cloud = read_point_bin((fs::path(src.dir) / "points" / (fr + ".bin")).string());
    const fs::path lab = fs::path(src.dir) / "labels" / (fr + ".txt");
    if (fs::exists(lab))
      s.boxes = read_scene_labels(lab.string(), catalog);
    else if (need_labels)
      throw DataError("scenes: frame '" + fr + "' has no label file '" + lab.string() + "'");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace iassd
