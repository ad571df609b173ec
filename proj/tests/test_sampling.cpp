#include <gtest/gtest.h>

#include <set>

#include "iassd/data_io.hpp"
#include "iassd/sampling.hpp"
#include "oracles.hpp"

using namespace iassd;

namespace {

PointCloud cloud_from(const std::vector<Vec3>& pts, Rng& rng, std::size_t feat_cols = 0) {
  PointCloud c;
  c.coords = pts;
  if (feat_cols) {
    c.features = FeatureMatrix(pts.size(), feat_cols);
    // Coarse values so that feature distances tie often.
    for (double& v : c.features.data) v = std::round(rng.uniform() * 4.0);
  }
  return c;
}

}  // namespace

TEST(Strategy, ParseAndName) {
  for (Strategy s : {Strategy::kRandom, Strategy::kDFps, Strategy::kFeatFps, Strategy::kClsAware, Strategy::kCtrAware})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_EQ(parse_strategy("d-fps"), Strategy::kDFps);
  EXPECT_THROW(parse_strategy("fps2"), std::invalid_argument);
}

TEST(DFps, MatchesNaiveReference) {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(200);
    // Integer grid coordinates produce distance ties.
    std::vector<Vec3> pts(n);
    for (auto& p : pts) p = {double(rng.below(6)), double(rng.below(6)), double(rng.below(3))};
    const std::size_t k = 1 + rng.below(n);
    const std::size_t start = rng.below(n);
    EXPECT_EQ(sample_dfps(pts, k, start).indices, oracle::naive_dfps(pts, k, start)) << "trial " << t;
  }
}

TEST(DFps, CoverageRadiusIsNonIncreasing) {
  Rng rng(12);
  const auto pts = oracle::random_points(rng, 500, 10);
  const auto idx = sample_dfps(pts, 100).indices;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t s = 1; s < idx.size(); ++s) {
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < s; ++j) d = std::min(d, squared_distance(pts[idx[j]], pts[idx[s]]));
    EXPECT_LE(d, prev + 1e-12);
    prev = d;
  }
}

TEST(DFps, Errors) {
  std::vector<Vec3> pts(5);
  EXPECT_THROW(sample_dfps(pts, 6), std::invalid_argument);
  EXPECT_THROW(sample_dfps(pts, 2, 5), std::invalid_argument);
  EXPECT_TRUE(sample_dfps(pts, 0).indices.empty());
}

TEST(FeatFps, MatchesNaiveReference) {
  Rng rng(13);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(150);
    const std::size_t d = 1 + rng.below(4);
    const PointCloud c = cloud_from(oracle::random_points(rng, n, 5), rng, d);
    const double lambda = rng.uniform() < 0.5 ? 0.0 : rng.uniform(0.1, 2.0);
    const std::size_t k = 1 + rng.below(n);
    auto d2 = [&](std::size_t a, std::size_t b) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += (c.features(a, j) - c.features(b, j)) * (c.features(a, j) - c.features(b, j));
      if (lambda > 0.0) acc += lambda * squared_distance(c.coords[a], c.coords[b]);
      return acc;
    };
    EXPECT_EQ(sample_featfps(c, k, 0, lambda).indices, oracle::naive_fps(n, k, 0, d2)) << "trial " << t;
  }
}

TEST(FeatFps, NeedsFeatures) {
  PointCloud c;
  c.coords.resize(4);
  EXPECT_THROW(sample_featfps(c, 2), std::invalid_argument);
}

TEST(TopK, MatchesFullSort) {
  Rng rng(14);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<double> s(n);
    for (double& v : s) v = std::round(rng.uniform() * 10.0);
    const std::size_t k = rng.below(n + 1);
    EXPECT_EQ(sample_topk(s, k).indices, oracle::full_sort_topk(s, k));
  }
  std::vector<double> bad{1.0, NAN};
  EXPECT_THROW(sample_topk(bad, 1), std::invalid_argument);
  EXPECT_THROW(sample_topk(std::vector<double>{1.0}, 2), std::invalid_argument);
}

TEST(Random, DistinctDeterministicAndComplete) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto a = sample_random(300, 40, seed).indices;
    EXPECT_EQ(a, sample_random(300, 40, seed).indices);
    EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 40u);
    for (std::size_t i : a) EXPECT_LT(i, 300u);
  }
  EXPECT_EQ(sample_random(5, 10, 0).indices.size(), 5u);
  EXPECT_NE(sample_random(1000, 10, 1).indices, sample_random(1000, 10, 2).indices);
}

TEST(Random, RecallMatchesHypergeometric) {
  // One instance of m points in a cloud of n; keep k.
  const std::size_t n = 1000, m = 12, k = 100;
  LabeledScene s;
  for (std::size_t i = 0; i < n; ++i) s.cloud.coords.push_back(i < m ? Vec3{0, 0, 0} : Vec3{10, 10, 10});
  s.boxes.emplace_back(Vec3{0, 0, 0}, 1, 1, 1, 0, 0, 0);
  for (std::size_t t : {1u, 2u}) {
    double hits = 0;
    const int seeds = 3000;
    for (int seed = 0; seed < seeds; ++seed)
      hits += instance_recall(s, sample_random(n, k, seed), t).recall.at(0);
    EXPECT_NEAR(hits / seeds, oracle::hypergeometric_at_least(n, m, k, t), 0.03) << "threshold " << t;
  }
}

TEST(Recall, CountsAndPooling) {
  LabeledScene s;
  s.cloud.coords = {{0, 0, 0}, {0.1, 0, 0}, {5, 5, 0}, {20, 0, 0}};
  s.boxes = {Box7({0, 0, 0}, 1, 1, 1, 0, 0, 1), Box7({5, 5, 0}, 1, 1, 1, 0, 1, 2), Box7({-9, 0, 0}, 1, 1, 1, 0, 1, 3)};
  const std::vector<std::size_t> keep{1, 3};
  const LayerRecall r = instance_recall(s, std::span<const std::size_t>(keep));
  EXPECT_EQ(r.recall.at(0), 1.0);
  EXPECT_EQ(r.recall.at(1), 0.0);
  EXPECT_EQ(instance_recall(s, std::span<const std::size_t>(keep), 2).recall.at(0), 0.0);

  RecallReport a{{r}}, b{{instance_recall(s, std::vector<std::size_t>{0, 2})}};
  accumulate(a, b);
  EXPECT_EQ(a.layers[0].instances.at(1), 4u);
  EXPECT_EQ(a.layers[0].recalled.at(1), 1u);
  EXPECT_DOUBLE_EQ(a.layers[0].recall.at(1), 0.25);

  LabeledScene unlabeled = s;
  unlabeled.boxes[0].instance_id.reset();
  EXPECT_THROW(instance_recall(unlabeled, std::span<const std::size_t>(keep)), std::invalid_argument);
}

TEST(Schedule, NestedSurvivorsAndValidation) {
  SceneGenSpec spec;
  spec.seed = 3;
  spec.total_points = 4096;
  const LabeledScene scene = generate_scene(spec);
  const std::vector<LayerSpec> sched{{Strategy::kRandom, 2048}, {Strategy::kDFps, 512}, {Strategy::kCtrAware, 128},
                                     {Strategy::kClsAware, 64}};
  const auto out = run_schedule(scene.cloud, sched, centroid_oracle(scene.boxes), {7, 0, 0.0});
  ASSERT_EQ(out.size(), 4u);
  for (std::size_t l = 0; l < out.size(); ++l) {
    EXPECT_EQ(out[l].indices.size(), sched[l].k);
    EXPECT_EQ(out[l].layer, l);
    EXPECT_EQ(out[l].strategy, sched[l].strategy);
    if (l > 0) {
      std::set<std::size_t> prev(out[l - 1].indices.begin(), out[l - 1].indices.end());
      for (std::size_t i : out[l].indices) EXPECT_TRUE(prev.count(i));
    }
  }
  EXPECT_EQ(out[0].indices, run_schedule(scene.cloud, sched, centroid_oracle(scene.boxes), {7, 0, 0.0})[0].indices);

  const std::vector<LayerSpec> growing{{Strategy::kDFps, 10}, {Strategy::kDFps, 20}};
  EXPECT_THROW(run_schedule(scene.cloud, growing), std::invalid_argument);
  const std::vector<LayerSpec> scored{{Strategy::kCtrAware, 10}};
  EXPECT_THROW(run_schedule(scene.cloud, scored), std::invalid_argument);
}

TEST(Oracles, CentroidScorerPrefersCenters) {
  const Box7 b({0, 0, 0}, 4, 2, 2, 0.2, 0, 0);
  PointCloud c;
  c.coords = {{0, 0, 0}, {1.5, 0, 0}, {10, 0, 0}};
  const std::vector<std::size_t> all{0, 1, 2};
  const auto s = centroid_oracle({b})(c, all, 0);
  EXPECT_GT(s[0], s[1]);
  EXPECT_GT(s[1], s[2]);
  EXPECT_EQ(s[2], 0.0);
  const auto f = class_oracle({b})(c, all, 0);
  EXPECT_EQ(f, (std::vector<double>{1, 1, 0}));
}
