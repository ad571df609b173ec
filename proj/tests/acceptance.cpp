// Acceptance suite: one PASS/FAIL line per criterion. A criterion fails when
// its check fails or it exceeds its runtime limit. Exit status is nonzero if
// any criterion fails.
//
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "iassd/bench.hpp"
#include "iassd/cli.hpp"
#include "iassd/data_io.hpp"
#include "iassd/eval.hpp"
#include "iassd/neighborhood.hpp"
#include "iassd/sampling.hpp"
#include "iassd/train.hpp"
#include "loss_cases.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace iassd;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

/// Box-local to world, written out independently of the library.
Vec3 to_world(const Box7& b, double x, double y, double z) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {b.center.x + c * x - s * y, b.center.y + s * x + c * y, b.center.z + z};
}

Vec3 rotate(const Vec3& p, double a) {
  return {std::cos(a) * p.x - std::sin(a) * p.y, std::sin(a) * p.x + std::cos(a) * p.y, p.z};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("iassd_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------

Outcome soft_mask_suite() {
  Rng rng(1001);
  double worst_fixed = 0.0, worst_inv = 0.0;
  const double quarter = std::cbrt(1.0 / 3.0);
  for (int i = 0; i < 1000; ++i) {
    const Box7 b = oracle::random_box(rng, 20.0);
    worst_fixed = std::max(worst_fixed, std::abs(soft_point_mask(b, b.center) - 1.0));
    // Random points on each of the six faces.
    const double u = rng.uniform(-0.5, 0.5), v = rng.uniform(-0.5, 0.5);
    for (int sgn : {-1, 1}) {
      worst_fixed = std::max(worst_fixed, soft_point_mask(b, to_world(b, 0.5 * sgn * b.l, u * b.w, v * b.h)));
      worst_fixed = std::max(worst_fixed, soft_point_mask(b, to_world(b, u * b.l, 0.5 * sgn * b.w, v * b.h)));
      worst_fixed = std::max(worst_fixed, soft_point_mask(b, to_world(b, u * b.l, v * b.w, 0.5 * sgn * b.h)));
      worst_fixed = std::max(worst_fixed, std::abs(soft_point_mask(b, to_world(b, 0.25 * sgn * b.l, 0, 0)) - quarter));
      worst_fixed = std::max(worst_fixed, std::abs(soft_point_mask(b, to_world(b, 0, 0.25 * sgn * b.w, 0)) - quarter));
      worst_fixed = std::max(worst_fixed, std::abs(soft_point_mask(b, to_world(b, 0, 0, 0.25 * sgn * b.h)) - quarter));
    }
    const Vec3 p = rng.uniform() < 0.8 ? oracle::point_in_box(rng, b) : oracle::random_point(rng, 25.0);
    const double m = soft_point_mask(b, p);
    const double a = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const Vec3 t = oracle::random_point(rng, 100.0);
    const Box7 moved(rotate(b.center, a) + t, b.l, b.w, b.h, b.yaw + a);
    worst_inv = std::max(worst_inv, std::abs(soft_point_mask(moved, rotate(p, a) + t) - m));
    const double s = rng.uniform(0.1, 10.0);
    const Box7 scaled(b.center * s, b.l * s, b.w * s, b.h * s, b.yaw);
    worst_inv = std::max(worst_inv, std::abs(soft_point_mask(scaled, p * s) - m));
  }
  return {worst_fixed < 1e-9 && worst_inv < 1e-9,
          fmt("center/surface/quarter max err %.2e, rigid+scale max err %.2e over 1000 pairs", worst_fixed, worst_inv)};
}

Outcome gradient_checks() {
  std::string detail;
  bool ok = true;
  for (const auto& c : oracle::loss_cases()) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) worst = std::max(worst, c.run(2000 + seed));
    ok = ok && worst < 1e-4;
    detail += fmt("%s %.1e; ", c.name.c_str(), worst);
  }
  return {ok, detail + "20 instantiations each"};
}

Outcome sampling_oracles() {
  Rng rng(3001);
  std::size_t dfps_bad = 0, feat_bad = 0, topk_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(500);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(n, 128));
    // Every other instance on an integer grid, so distances tie.
    const bool grid = t % 2 == 0;
    std::vector<Vec3> pts(n);
    for (auto& p : pts)
      p = grid ? Vec3{double(rng.below(8)), double(rng.below(8)), double(rng.below(3))} : oracle::random_point(rng, 10);
    const std::size_t start = rng.below(n);
    dfps_bad += sample_dfps(pts, k, start).indices != oracle::naive_dfps(pts, k, start);

    PointCloud c;
    c.coords = pts;
    const std::size_t d = 1 + rng.below(4);
    c.features = FeatureMatrix(n, d);
    for (double& v : c.features.data) v = grid ? std::round(rng.uniform() * 4.0) : rng.normal();
    const double lambda = t % 3 == 0 ? 0.0 : rng.uniform(0.1, 2.0);
    auto d2 = [&](std::size_t a, std::size_t b) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += (c.features(a, j) - c.features(b, j)) * (c.features(a, j) - c.features(b, j));
      if (lambda > 0.0) acc += lambda * squared_distance(pts[a], pts[b]);
      return acc;
    };
    feat_bad += sample_featfps(c, k, start, lambda).indices != oracle::naive_fps(n, k, start, d2);

    std::vector<double> s(n);
    for (double& v : s) v = grid ? std::round(rng.uniform() * 10.0) : rng.normal();
    const std::size_t kk = rng.below(n + 1);
    topk_bad += sample_topk(s, kk).indices != oracle::full_sort_topk(s, kk);
  }

  // One 20-point instance in a 2000-point cloud; keep 256.
  const std::size_t n = 2000, m = 20, k = 256;
  LabeledScene scene;
  for (std::size_t i = 0; i < n; ++i) scene.cloud.coords.push_back(i < m ? Vec3{0, 0, 0} : Vec3{10, 10, 10});
  scene.boxes.emplace_back(Vec3{0, 0, 0}, 1, 1, 1, 0, 0, 0);
  double worst_gap = 0.0;
  std::string rec;
  for (std::size_t thr : {1u, 2u, 4u}) {
    double hits = 0.0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed)
      hits += instance_recall(scene, sample_random(n, k, seed), thr).recall.at(0);
    const double emp = hits / 10000.0, exact = oracle::hypergeometric_at_least(n, m, k, thr);
    worst_gap = std::max(worst_gap, std::abs(emp - exact));
    rec += fmt(" t=%zu %.4f vs %.4f;", thr, emp, exact);
  }
  return {dfps_bad == 0 && feat_bad == 0 && topk_bad == 0 && worst_gap <= 0.02,
          fmt("mismatches dfps %zu featfps %zu topk %zu of 1000; random recall", dfps_bad, feat_bad, topk_bad) + rec};
}

Outcome geometry_oracles() {
  Rng rng(4001);
  double worst_iou = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Box7 a = oracle::random_box(rng);
    const Box7 b = oracle::nearby_box(rng, a);
    worst_iou = std::max(worst_iou, std::abs(iou_3d(a, b) - oracle::monte_carlo_iou(a, b, 1'000'000, 4100 + i)));
  }
  std::size_t nms_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<ScoredBox> boxes;
    for (std::size_t i = 0, n = rng.below(40); i < n; ++i) {
      const Box7 b(oracle::random_point(rng, 3), rng.uniform(1, 4), rng.uniform(.5, 2), rng.uniform(.5, 2),
                   rng.uniform(-3.2, 3.2));
      boxes.push_back({b, std::round(rng.uniform() * 8) / 8});
    }
    const double thr = rng.uniform(0.0, 0.7);
    nms_bad += nms_3d_indices(boxes, thr) !=
               oracle::brute_nms(boxes, thr, [](const Box7& a, const Box7& b) { return iou_3d(a, b); });
  }
  std::size_t ball_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + rng.below(400);
    const bool lattice = t % 2 == 0;
    std::vector<Vec3> cloud(n);
    for (auto& p : cloud)
      p = lattice ? Vec3{double(rng.below(8)) * 0.5, double(rng.below(8)) * 0.5, double(rng.below(3)) * 0.5}
                  : oracle::random_point(rng, 3);
    std::vector<Vec3> centers(1 + rng.below(30));
    for (auto& c : centers) c = rng.uniform() < 0.5 ? cloud[rng.below(n)] : oracle::random_point(rng, 5);
    const double r = lattice ? 0.5 * double(1 + rng.below(3)) : rng.uniform(0.05, 2.0);
    const std::size_t nq = 1 + rng.below(32);
    const GroupIndex g = ball_query(cloud, centers, r, nq);
    const auto ref = oracle::brute_ball_query(cloud, centers, r, nq);
    ball_bad += g.indices != ref.indices || g.valid != ref.valid || g.empty != ref.empty;
  }
  return {worst_iou <= 0.01 && nms_bad == 0 && ball_bad == 0,
          fmt("iou max |err| vs 1e6-sample oracle %.4f over 200 pairs; nms mismatches %zu/1000; ball_query "
              "mismatches %zu/1000",
              worst_iou, nms_bad, ball_bad)};
}

Outcome recall_ordering() {
  const std::size_t scenes = 100, classes = 3;
  const std::vector<std::size_t> ks{4096, 1024, 512, 256};
  auto uniform = [&](Strategy s) {
    std::vector<LayerSpec> v;
    for (std::size_t k : ks) v.push_back({s, k});
    return v;
  };
  std::vector<LayerSpec> ctr = uniform(Strategy::kDFps);
  ctr[2].strategy = ctr[3].strategy = Strategy::kCtrAware;
  const std::vector<std::pair<std::string, std::vector<LayerSpec>>> rows{
      {"ctr_aware", ctr}, {"dfps", uniform(Strategy::kDFps)}, {"random", uniform(Strategy::kRandom)}};

  std::vector<RecallReport> pooled(rows.size());
  std::vector<double> class_points(classes, 0.0);
  double total_points = 0.0;
  for (std::size_t i = 0; i < scenes; ++i) {
    SceneGenSpec spec;
    spec.seed = 5000 + i;
    spec.total_points = 16384;
    const LabeledScene s = generate_scene(spec);
    total_points += static_cast<double>(s.cloud.size());
    for (const Vec3& p : s.cloud.coords)
      for (const Box7& b : s.boxes)
        if (contains(b, p)) class_points[static_cast<std::size_t>(b.class_id)] += 1.0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto out = run_schedule(s.cloud, rows[r].second, centroid_oracle(s.boxes), {spec.seed, 0, 0.0});
      RecallReport rep;
      for (const auto& layer : out) rep.layers.push_back(instance_recall(s, layer));
      accumulate(pooled[r], rep);
    }
  }
  bool ok = true;
  std::string detail;
  for (std::size_t c = 0; c < classes; ++c) {
    const int id = static_cast<int>(c);
    const double rc = pooled[0].layers.back().recall.at(id), rd = pooled[1].layers.back().recall.at(id),
                 rr = pooled[2].layers.back().recall.at(id);
    const double frac = class_points[c] / total_points;
    ok = ok && rc >= rd && rd >= rr;
    if (frac < 0.02) ok = ok && rc >= 0.95 && rr <= 0.80;
    detail += fmt("%s (%.2f%% of points) ctr %.3f dfps %.3f random %.3f; ", ClassCatalog{}.name(id).c_str(),
                  100.0 * frac, rc, rd, rr);
  }
  return {ok, detail + "recall at 256 over 100 scenes"};
}

Outcome sampling_speed() {
  Rng rng(6001);
  std::vector<Vec3> pts(16384);
  for (auto& p : pts) p = {rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-3, 1)};
  std::vector<double> scores(pts.size());
  for (double& s : scores) s = rng.normal();
  volatile std::size_t sink = 0;
  const BenchStats dfps = time_it([&] { sink = sink + sample_dfps(pts, 512).indices.back(); }, 15, 3);
  const BenchStats topk = time_it([&] { sink = sink + sample_topk(scores, 512).indices.back(); }, 15, 3);
  const double speedup = dfps.median_ms / topk.median_ms;
  return {speedup >= 5.0, fmt("16384->512 median of 15 warm runs: dfps %.3f ms, top-k %.4f ms, speedup %.1fx",
                              dfps.median_ms, topk.median_ms, speedup)};
}

/// Five small fixed scenes with one or two instances per class.
SceneSource small_scenes(std::uint64_t first_seed, std::size_t count) {
  SceneSource src;
  src.kind = SceneSource::Kind::kSynthetic;
  src.first_seed = first_seed;
  src.count = count;
  src.generator.extent = 12;
  src.generator.total_points = 4096;
  for (auto& c : src.generator.classes) c.min_count = 1, c.max_count = 2;
  return src;
}

Outcome overfit() {
  ExperimentConfig e;
  e.scenes = small_scenes(100, 5);
  e.detector = DetectorConfig::toy();
  e.train.steps = 2000;
  e.train.lr = 0.01;
  e.eval.iou_thresholds = {0.5, 0.5, 0.5};
  e.out_dir = scratch("overfit").string();
  cli::cmd_train(e);
  cli::cmd_detect(e, (fs::path(e.out_dir) / "model.ckpt").string());
  const ReportTable t = cli::cmd_eval(e, (fs::path(e.out_dir) / "detections.txt").string());
  bool ok = true;
  std::string detail;
  for (const auto& name : e.detector.class_names) {
    const double recall = t.cell(name, "recall").value_or(0.0), ap = t.cell(name, "ap").value_or(0.0);
    ok = ok && recall >= 0.9 && ap >= 0.8;
    detail += fmt("%s recall %.2f ap %.3f; ", name.c_str(), recall, ap);
  }
  fs::remove_all(e.out_dir);
  return {ok, detail + "2000 steps on 5 scenes, IoU 0.5"};
}

Outcome context_ablation() {
  const std::size_t seeds = 20;
  double sum[2] = {0.0, 0.0};
  std::size_t wins = 0;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    const auto scenes = load_scenes(small_scenes(10'000 + 100 * seed, 5), ClassCatalog{});
    double small[2];
    for (int mode = 0; mode < 2; ++mode) {
      DetectorConfig d = DetectorConfig::toy();
      d.context = mode == 0 ? ContextConfig{ContextMode::kLength, 1.0} : ContextConfig{ContextMode::kCenters, 0.0};
      TrainConfig tc;
      tc.steps = 300;
      tc.lr = 0.01;
      tc.seed = seed;
      tc.model_seed = seed;
      Trainer tr(d, tc, scenes);
      tr.run();
      std::vector<FrameResult> frames;
      for (const auto& s : scenes) frames.push_back({s.frame_id, s.boxes, tr.model().detect(s.cloud)});
      const EvalReport r = evaluate(frames, 3, EvalConfig{{0.5, 0.5, 0.5}});
      // Pedestrians and cyclists pooled.
      small[mode] = double(r.classes[1].true_positives + r.classes[2].true_positives) /
                    double(r.classes[1].gt + r.classes[2].gt);
      sum[mode] += small[mode];
    }
    wins += small[0] > small[1];
    std::printf("  seed %2zu small-class recall: length %.3f centers %.3f\n", seed, small[0], small[1]);
    std::fflush(stdout);
  }
  const double length = sum[0] / seeds, centers = sum[1] / seeds;
  return {centers < length, fmt("mean small-class recall at IoU 0.5 over %zu seeds: extend-length %.3f, "
                                "centers-assign %.3f (length ahead on %zu seeds)",
                                seeds, length, centers, wins)};
}

Outcome round_trips() {
  Rng rng(9001);
  PointCloud c;
  for (int i = 0; i < 5000; ++i) {
    c.coords.push_back({static_cast<float>(rng.uniform(-80, 80)), static_cast<float>(rng.uniform(-80, 80)),
                        static_cast<float>(rng.uniform(-3, 3))});
    c.intensity.push_back(static_cast<float>(rng.uniform()));
  }
  const fs::path dir = scratch("roundtrip");
  write_point_bin((dir / "p.bin").string(), c);
  const std::string bytes = serialize_point_bin(c);
  const PointCloud back = read_point_bin((dir / "p.bin").string());
  bool points_ok = serialize_point_bin(back) == bytes && back.size() == c.size();
  for (std::size_t i = 0; points_ok && i < c.size(); ++i)
    points_ok = back.coords[i].x == c.coords[i].x && back.coords[i].y == c.coords[i].y &&
                back.coords[i].z == c.coords[i].z && back.intensity[i] == c.intensity[i];

  double label_err = 0.0;
  std::vector<Box7> boxes;
  for (int i = 0; i < 500; ++i) {
    Box7 b = oracle::random_box(rng, 60.0, static_cast<int>(rng.below(3)));
    b.instance_id = i;
    boxes.push_back(b);
  }
  write_scene_labels((dir / "l.txt").string(), boxes);
  const auto lb = read_scene_labels((dir / "l.txt").string());
  bool labels_ok = lb.size() == boxes.size();
  for (std::size_t i = 0; labels_ok && i < boxes.size(); ++i) {
    for (auto [x, y] : {std::pair{lb[i].center.x, boxes[i].center.x}, {lb[i].center.y, boxes[i].center.y},
                        {lb[i].center.z, boxes[i].center.z}, {lb[i].l, boxes[i].l}, {lb[i].w, boxes[i].w},
                        {lb[i].h, boxes[i].h}, {lb[i].yaw, boxes[i].yaw}})
      label_err = std::max(label_err, std::abs(x - y));
    labels_ok = lb[i].class_id == boxes[i].class_id && lb[i].instance_id == boxes[i].instance_id;
  }
  labels_ok = labels_ok && label_err <= 1e-6;

  // Briefly trained detector so every buffer is nontrivial.
  const auto scenes = load_scenes(small_scenes(300, 2), ClassCatalog{});
  TrainConfig tc;
  tc.steps = 10;
  Trainer tr(DetectorConfig::toy(), tc, scenes);
  tr.run();
  const std::string ckpt = (dir / "m.ckpt").string();
  save_detector(ckpt, tr.model());
  const Detector loaded = load_detector(ckpt);
  bool ckpt_ok = true;
  for (const auto& s : scenes) {
    const auto a = tr.model().proposals(s.cloud), b = loaded.proposals(s.cloud);
    ckpt_ok = ckpt_ok && a.size() == b.size();
    for (std::size_t i = 0; ckpt_ok && i < a.size(); ++i) {
      const double va[] = {a[i].box.center.x, a[i].box.center.y, a[i].box.center.z, a[i].box.l, a[i].box.w,
                           a[i].box.h,        a[i].box.yaw};
      const double vb[] = {b[i].box.center.x, b[i].box.center.y, b[i].box.center.z, b[i].box.l, b[i].box.w,
                           b[i].box.h,        b[i].box.yaw};
      ckpt_ok = std::memcmp(va, vb, sizeof va) == 0 && a[i].scores == b[i].scores &&
                a[i].box.class_id == b[i].box.class_id;
    }
  }
  fs::remove_all(dir);
  return {points_ok && labels_ok && ckpt_ok,
          fmt("points bit-exact %s (5000); labels max err %.1e (500); checkpoint outputs byte-identical %s",
              points_ok ? "yes" : "no", label_err, ckpt_ok ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "soft point mask suite", 1.0, soft_mask_suite},
      {2, "loss gradient checks", 30.0, gradient_checks},
      {3, "sampling oracles", 120.0, sampling_oracles},
      {4, "geometry oracles", 300.0, geometry_oracles},
      {5, "sampling recall ordering", 600.0, recall_ordering},
      {6, "top-k vs D-FPS speed", 60.0, sampling_speed},
      {7, "overfit end-to-end", 1800.0, overfit},
      {8, "context membership ablation", 2700.0, context_ablation},
      {9, "format round trips", 60.0, round_trips},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.ok && secs < c.limit_s;
    failed += !pass;
    std::printf("%s %d %s (%.2f s, limit %.0f s): %s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs, c.limit_s,
                o.detail.c_str(), o.ok && !pass ? " [over time limit]" : "");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
