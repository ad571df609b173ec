#pragma once

// Subcommand implementations behind tools/iassd. Each returns the result
// table; side outputs (index files, checkpoints, detections) land in the
// configured output directory.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "iassd/bench.hpp"
#include "iassd/data_io.hpp"
#include "iassd/detector.hpp"
#include "iassd/errors.hpp"
#include "iassd/eval.hpp"
#include "iassd/experiment.hpp"
#include "iassd/geometry.hpp"
#include "iassd/neighborhood.hpp"
#include "iassd/nn/checkpoint.hpp"
#include "iassd/report.hpp"
#include "iassd/sampling.hpp"
#include "iassd/train.hpp"

namespace iassd::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumeric = 4, kInternal = 5 };

inline fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError("cannot create output directory '" + p.string() + "': " + ec.message());
  return p;
}

/// Writes <out>/<name>.csv and <out>/<name>.json and prints the table.
inline void emit(const ReportTable& t, const std::string& name, const std::string& out_dir, TableFormat f,
                 std::ostream& os) {
  const fs::path dir = ensure_dir(out_dir);
  iassd::detail::write_file((dir / (name + ".csv")).string(), t.to_csv());
  iassd::detail::write_file((dir / (name + ".json")).string(), t.to_json().dump(2) + "\n");
  os << t.render(f);
}

namespace detail {

inline std::vector<LabeledScene> scenes_or_inputs(const ExperimentConfig& e, const std::vector<std::string>& inputs,
                                                  bool need_labels) {
  if (inputs.empty()) return load_scenes(e.scenes, e.detector.catalog(), need_labels);
  std::vector<LabeledScene> out;
  for (const auto& path : inputs) {
    LabeledScene s;
    s.frame_id = fs::path(path).stem().string();
    s.cloud = read_point_bin(path);
    out.push_back(std::move(s));
  }
  return out;
}

inline PointCloud with_intensity_features(const PointCloud& c) {
  if (c.has_features()) return c;
  PointCloud out = c;
  out.features = FeatureMatrix(c.size(), 1, 0.0);
  if (c.has_intensity()) std::copy(c.intensity.begin(), c.intensity.end(), out.features.data.begin());
  return out;
}

/// Schedule used for one recall row.
inline std::vector<LayerSpec> row_schedule(const std::vector<LayerSpec>& base, Strategy s) {
  std::vector<LayerSpec> out = base;
  bool any_scored = false;
  for (const auto& l : base) any_scored |= is_score_based(l.strategy);
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (s) {
      case Strategy::kRandom:
      case Strategy::kDFps:
        out[i].strategy = s;
        break;
      case Strategy::kFeatFps:
        out[i].strategy = i == 0 ? Strategy::kDFps : Strategy::kFeatFps;
        break;
      case Strategy::kClsAware:
      case Strategy::kCtrAware: {
        const bool scored = any_scored ? is_score_based(base[i].strategy) : i + 2 >= out.size();
        out[i].strategy = scored ? s : Strategy::kDFps;
        break;
      }
    }
  }
  return out;
}

inline Scorer oracle_for(Strategy s, const LabeledScene& scene) {
  if (scene.boxes.empty()) return intensity_scorer();
  return s == Strategy::kClsAware ? class_oracle(scene.boxes) : centroid_oracle(scene.boxes);
}

inline std::size_t working_bytes(Strategy s, std::size_t n, std::size_t k, std::size_t feature_cols) {
  const std::size_t word = sizeof(std::size_t);
  switch (s) {
    case Strategy::kRandom: return n * word;
    case Strategy::kDFps: return n * sizeof(double) + k * word;
    case Strategy::kFeatFps: return n * sizeof(double) * (1 + feature_cols) + k * word;
    case Strategy::kClsAware:
    case Strategy::kCtrAware: return n * (word + sizeof(double)) + k * word;
  }
  return 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Single-layer sampling per cloud and strategy; index files go to
/// <out>/samples/<frame>.<strategy>.idx.
inline ReportTable cmd_sample(const ExperimentConfig& e, const std::vector<std::string>& inputs) {
  const auto scenes = detail::scenes_or_inputs(e, inputs, false);
  const fs::path dir = ensure_dir(fs::path(e.out_dir) / "samples");
  ReportTable t("sample", "run", {"n", "k", "median_ms", "p95_ms", "est_peak_bytes"});
  for (const auto& scene : scenes) {
    const PointCloud cloud = detail::with_intensity_features(scene.cloud);
    const std::size_t k = std::min(e.sample.k, cloud.size());
    if (k == 0) throw DataError("sample: frame '" + scene.frame_id + "' has no points");
    std::vector<std::size_t> all(cloud.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    for (Strategy s : e.strategies) {
      std::vector<double> scores;
      if (is_score_based(s)) scores = detail::oracle_for(s, scene)(cloud, all, 0);
      SamplingOutcome out;
      auto run = [&] {
        switch (s) {
          case Strategy::kRandom: out = sample_random(cloud.size(), k, e.seed); break;
          case Strategy::kDFps: out = sample_dfps(cloud, k); break;
          case Strategy::kFeatFps: out = sample_featfps(cloud, k, 0, e.detector.featfps_lambda); break;
          case Strategy::kClsAware:
          case Strategy::kCtrAware: out = sample_topk(scores, k, s); break;
        }
      };
      const BenchStats st = time_it(run, e.sample.runs, e.sample.warmup);
      std::string idx;
      for (std::size_t i : out.indices) idx += std::to_string(i) + "\n";
      iassd::detail::write_file((dir / (scene.frame_id + "." + std::string(to_string(s)) + ".idx")).string(), idx);
      t.add_row(scene.frame_id + "/" + std::string(to_string(s)),
                std::vector<double>{static_cast<double>(cloud.size()), static_cast<double>(k), st.median_ms,
                                    st.p95_ms,
                                    static_cast<double>(detail::working_bytes(s, cloud.size(), k, cloud.features.cols))});
    }
  }
  return t;
}

/// Pooled instance recall per layer and class, one row per strategy.
/// Score-based rows use ground-truth oracle scores.
inline ReportTable cmd_recall(const ExperimentConfig& e) {
  const ClassCatalog cat = e.detector.catalog();
  const auto scenes = load_scenes(e.scenes, cat, true);
  if (scenes.empty()) throw ConfigError("recall: no scenes");
  std::vector<std::string> cols;
  for (const auto& l : e.schedule)
    for (const auto& n : cat.names) cols.push_back(std::to_string(l.k) + "/" + n);
  ReportTable t("recall", "strategy", cols);
  for (Strategy s : e.strategies) {
    const auto sched = detail::row_schedule(e.schedule, s);
    std::vector<RecallReport> per(scenes.size());
    parallel_for(scenes.size(), e.threads, [&](std::size_t i) {
      const LabeledScene& sc = scenes[i];
      ScheduleOptions opt;
      opt.seed = Rng::derive(e.seed, i);
      opt.featfps_lambda = e.detector.featfps_lambda;
      const PointCloud cloud = detail::with_intensity_features(sc.cloud);
      per[i] = instance_recall(sc, run_schedule(cloud, sched, detail::oracle_for(s, sc), opt));
    });
    RecallReport pooled;
    for (const auto& r : per) accumulate(pooled, r);
    std::vector<std::optional<double>> row;
    for (const auto& layer : pooled.layers)
      for (std::size_t c = 0; c < cat.size(); ++c) {
        const auto it = layer.recall.find(static_cast<int>(c));
        row.push_back(it == layer.recall.end() ? std::nullopt : std::optional<double>(it->second));
      }
    t.add_row(std::string(to_string(s)), row);
  }
  return t;
}

struct TrainOptions {
  std::string resume;                 // checkpoint to continue from
  std::size_t checkpoint_every = 0;   // 0: only at the end
};

/// Trains on the configured scenes. Writes <out>/train_log.jsonl (appended
/// on resume) and <out>/model.ckpt.
inline ReportTable cmd_train(const ExperimentConfig& e, const TrainOptions& o = {}) {
  const fs::path dir = ensure_dir(e.out_dir);
  std::optional<nn::Checkpoint> from;
  DetectorConfig model = e.detector;
  if (!o.resume.empty()) {
    from = nn::read_checkpoint(o.resume);
    if (e.detector_explicit && to_json(e.detector) != from->config)
      throw ConfigError("train: --resume checkpoint was built from a different detector configuration");
    model = detector_config_from_json(from->config, DetectorConfig::toy(), "checkpoint.config");
  }
  Trainer tr(model, e.train, load_scenes(e.scenes, model.catalog(), true));
  if (from) tr.resume(*from);
  const std::string ckpt = (dir / "model.ckpt").string();
  std::ofstream log(dir / "train_log.jsonl", from ? std::ios::app : std::ios::trunc);
  if (!log) throw ConfigError("train: cannot write '" + (dir / "train_log.jsonl").string() + "'");

  ReportTable t("train", "point",
                {"step", "lr", "total", "sample", "cent", "cls", "box", "loc", "size", "angle_bin", "angle_res",
                 "corner"});
  auto row = [](std::size_t s, double lr, const nn::LossBreakdown& b) {
    return std::vector<double>{static_cast<double>(s), lr, b.total, b.sample, b.cent, b.cls, b.box, b.loc,
                               b.size, b.angle_bin, b.angle_res, b.corner};
  };
  std::optional<std::vector<double>> first, last;
  tr.run([&](std::size_t s, double lr, const nn::LossBreakdown& b) {
    log << to_json(s, lr, b).dump() << "\n";
    if (!first) first = row(s, lr, b);
    last = row(s, lr, b);
    if (o.checkpoint_every && (s + 1) % o.checkpoint_every == 0) nn::write_checkpoint(ckpt, tr.checkpoint());
  });
  nn::write_checkpoint(ckpt, tr.checkpoint());
  if (first) {
    t.add_row("first", *first);
    t.add_row("last", *last);
  } else {
    std::vector<std::optional<double>> cells(t.columns.size());
    cells[0] = static_cast<double>(tr.step());
    t.add_row("none", cells);
  }
  return t;
}

/// Runs a checkpoint over the configured scenes; writes <out>/detections.txt.
inline ReportTable cmd_detect(const ExperimentConfig& e, const std::string& checkpoint,
                              const std::vector<std::string>& inputs = {}) {
  const nn::Checkpoint ck = nn::read_checkpoint(checkpoint);
  if (e.detector_explicit && to_json(e.detector) != ck.config)
    throw ConfigError("detect: checkpoint '" + checkpoint + "' was built from a different detector configuration");
  const Detector model = Detector::load_from(ck);
  const ClassCatalog cat = model.config().catalog();
  const auto scenes = detail::scenes_or_inputs(e, inputs, false);
  const fs::path dir = ensure_dir(e.out_dir);
  std::vector<std::vector<ScoredBox>> found(scenes.size());
  parallel_for(scenes.size(), e.threads, [&](std::size_t i) { found[i] = model.detect(scenes[i].cloud); });
  std::string text;
  ReportTable t("detect", "frame", {"points", "detections"});
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (const auto& d : found[i]) text += format_detection({scenes[i].frame_id, d.box, d.score}, cat) + "\n";
    t.add_row(scenes[i].frame_id,
              std::vector<double>{static_cast<double>(scenes[i].cloud.size()), static_cast<double>(found[i].size())});
  }
  iassd::detail::write_file((dir / "detections.txt").string(), text);
  return t;
}

/// Scores a detection file against the configured ground truth.
inline ReportTable cmd_eval(const ExperimentConfig& e, const std::string& detections) {
  const ClassCatalog cat = e.detector.catalog();
  const auto dets = parse_detections(iassd::detail::read_file(detections), cat, detections);
  const auto scenes = load_scenes(e.scenes, cat, true);
  std::map<std::string, std::size_t> by_frame;
  for (std::size_t i = 0; i < scenes.size(); ++i) by_frame[scenes[i].frame_id] = i;
  std::vector<FrameResult> frames;
  for (const auto& s : scenes) frames.push_back({s.frame_id, s.boxes, {}});
  for (const auto& d : dets) {
    const auto it = by_frame.find(d.frame);
    if (it == by_frame.end())
      throw DataError(detections + ": detection for frame '" + d.frame + "' which has no ground truth");
    frames[it->second].detections.push_back({d.box, d.score});
  }
  if (e.eval.iou_thresholds.size() < cat.size())
    throw ConfigError("eval: need an IoU threshold for each of the " + std::to_string(cat.size()) + " classes");
  const EvalReport rep = evaluate(frames, cat.size(), e.eval);
  ReportTable t("eval", "class", {"iou_threshold", "gt", "detections", "true_positives", "recall", "ap"});
  for (const auto& c : rep.classes)
    t.add_row(cat.name(c.class_id),
              std::vector<double>{e.eval.threshold(c.class_id), static_cast<double>(c.gt),
                                  static_cast<double>(c.detections), static_cast<double>(c.true_positives), c.recall,
                                  c.ap});
  t.add_row("mean", std::vector<std::optional<double>>{std::nullopt, std::nullopt, std::nullopt, std::nullopt,
                                                       std::nullopt, rep.mean_ap});
  return t;
}

/// Kernel timings on a seeded uniform cloud, plus the top-k speedup over
/// D-FPS and the linearity of D-FPS time in k.
inline ReportTable cmd_bench(const ExperimentConfig& e) {
  const auto& b = e.bench;
  Rng rng(e.seed);
  PointCloud cloud;
  for (std::size_t i = 0; i < b.n; ++i) {
    cloud.coords.push_back({rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-3, 1)});
    cloud.intensity.push_back(rng.uniform());
  }
  cloud = detail::with_intensity_features(cloud);
  std::vector<double> scores(b.n);
  for (double& s : scores) s = rng.uniform();

  std::vector<Box7> boxes;
  for (int i = 0; i < 200; ++i)
    boxes.emplace_back(Vec3{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-1, 1)}, rng.uniform(1, 5),
                       rng.uniform(0.5, 2), rng.uniform(1, 2), rng.uniform(-std::numbers::pi, std::numbers::pi), 0);
  std::vector<ScoredBox> scored;
  for (const auto& bx : boxes) scored.push_back({bx, rng.uniform()});
  const std::vector<std::size_t> centers_idx = sample_random(b.n, std::min<std::size_t>(512, b.n), e.seed).indices;
  std::vector<Vec3> centers;
  for (std::size_t i : centers_idx) centers.push_back(cloud.coords[i]);

  ReportTable t("bench", "kernel", {"n", "k", "median_ms", "p95_ms", "runs", "value"});
  auto add = [&](const std::string& name, std::size_t n, std::size_t k, const BenchStats& s) {
    t.add_row(name, std::vector<std::optional<double>>{static_cast<double>(n), static_cast<double>(k), s.median_ms,
                                                       s.p95_ms, static_cast<double>(s.runs), std::nullopt});
  };
  auto add_value = [&](const std::string& name, double v) {
    std::vector<std::optional<double>> cells(t.columns.size());
    cells.back() = v;
    t.add_row(name, cells);
  };
  std::size_t sink = 0;
  const auto random = time_it([&] { sink += sample_random(b.n, b.k, e.seed).indices[0]; }, b.runs, b.warmup);
  const auto dfps = time_it([&] { sink += sample_dfps(cloud, b.k).indices[0]; }, b.runs, b.warmup);
  const auto featfps =
      time_it([&] { sink += sample_featfps(cloud, b.k, 0, e.detector.featfps_lambda).indices[0]; }, b.runs, b.warmup);
  const auto topk = time_it([&] { sink += sample_topk(scores, b.k).indices[0]; }, b.runs, b.warmup);
  const auto bq = time_it([&] { sink += ball_query(cloud, centers, 0.8, 16).indices[0]; }, b.runs, b.warmup);
  double acc = 0.0;
  const auto iou = time_it(
      [&] {
        for (std::size_t i = 0; i + 1 < boxes.size(); ++i) acc += iou_3d(boxes[i], boxes[i + 1]);
      },
      b.runs, b.warmup);
  const auto nms = time_it([&] { sink += nms_3d_indices(scored, 0.1).size(); }, b.runs, b.warmup);
  add("random", b.n, b.k, random);
  add("dfps", b.n, b.k, dfps);
  add("featfps", b.n, b.k, featfps);
  add("topk", b.n, b.k, topk);
  add("ball_query", b.n, centers.size(), bq);
  add("iou_3d_x199", boxes.size(), 0, iou);
  add("nms_3d", scored.size(), 0, nms);
  add_value("topk_speedup_vs_dfps", dfps.median_ms / std::max(topk.median_ms, 1e-9));

  std::vector<double> ks, ms;
  for (std::size_t k = std::max<std::size_t>(1, b.k / 4); k <= b.k; k += std::max<std::size_t>(1, b.k / 4)) {
    ks.push_back(static_cast<double>(k));
    ms.push_back(time_it([&] { sink += sample_dfps(cloud, k).indices[0]; }, b.runs, b.warmup).median_ms);
  }
  if (ks.size() >= 2) add_value("dfps_time_vs_k_r2", linear_r2(ks, ms));
  volatile double observed = acc + static_cast<double>(sink);
  (void)observed;
  return t;
}

struct ConvertOptions {
  std::string labels;    // directory of KITTI label_2 files
  std::string calib;     // directory of KITTI calib files
  std::string velodyne;  // optional directory of velodyne .bin files
};

/// KITTI camera-frame labels to LiDAR-frame scene labels under
/// <out>/labels (and validated point files under <out>/points).
inline ReportTable cmd_convert(const ExperimentConfig& e, const ConvertOptions& o) {
  if (o.labels.empty() || o.calib.empty()) throw ConfigError("convert: --labels and --calib are required");
  if (!fs::is_directory(o.labels)) throw DataError("convert: missing label directory '" + o.labels + "'");
  const ClassCatalog cat = e.detector.catalog();
  const fs::path out_labels = ensure_dir(fs::path(e.out_dir) / "labels");
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(o.labels))
    if (f.path().extension() == ".txt") files.push_back(f.path());
  std::sort(files.begin(), files.end());
  ReportTable t("convert", "frame", {"objects", "kept", "points"});
  for (const auto& f : files) {
    const std::string frame = f.stem().string();
    const fs::path calib = fs::path(o.calib) / (frame + ".txt");
    const KittiCalib c = parse_kitti_calib(iassd::detail::read_file(calib.string()), calib.string());
    const std::string text = iassd::detail::read_file(f.string());
    const auto boxes = convert_kitti_labels(text, c, cat, f.string());
    std::size_t objects = 0;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) objects += !iassd::detail::split_ws(line).empty();
    write_scene_labels((out_labels / (frame + ".txt")).string(), boxes, cat);
    std::optional<double> points;
    if (!o.velodyne.empty()) {
      const fs::path bin = fs::path(o.velodyne) / (frame + ".bin");
      const PointCloud pc = read_point_bin(bin.string());
      write_point_bin((ensure_dir(fs::path(e.out_dir) / "points") / (frame + ".bin")).string(), pc);
      points = static_cast<double>(pc.size());
    }
    t.add_row(frame, std::vector<std::optional<double>>{static_cast<double>(objects),
                                                        static_cast<double>(boxes.size()), points});
  }
  return t;
}

}  // namespace iassd::cli
