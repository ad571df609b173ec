#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "iassd/train.hpp"

using namespace iassd;

namespace {

// Small enough to take a few milliseconds per step.
DetectorConfig micro() {
  DetectorConfig c = DetectorConfig::toy();
  c.encoder = {
      {Strategy::kDFps, 256, {{{0.8, 8, {16}}, {1.6, 8, {16}}}, 16}, {}},
      {Strategy::kCtrAware, 64, {{{1.6, 8, {16}}, {3.2, 8, {16}}}, 32}, {16}},
  };
  c.vote = {Strategy::kCtrAware, 32, {16}, {16}};
  c.aggregation = {{{1.6, 8, {32}}, {3.2, 8, {32}}}, 32};
  c.cls_hidden = {32};
  c.reg_hidden = {32};
  return c;
}

std::vector<LabeledScene> scenes(std::size_t n) {
  std::vector<LabeledScene> out;
  for (std::size_t i = 0; i < n; ++i) {
    SceneGenSpec s;
    s.seed = 500 + i;
    s.extent = 8;
    s.total_points = 1024;
    for (auto& c : s.classes) c.min_count = c.max_count = 1;
    out.push_back(generate_scene(s));
  }
  return out;
}

TrainConfig train_config(std::size_t steps, bool augment = false) {
  TrainConfig t;
  t.steps = steps;
  t.lr = 0.01;
  t.seed = 7;
  t.model_seed = 3;
  t.augment = augment;
  if (augment) t.augment_config.paste_counts = {1, 1, 1};
  return t;
}

}  // namespace

TEST(Trainer, DeterministicForFixedSeeds) {
  Trainer a(micro(), train_config(6), scenes(3));
  Trainer b(micro(), train_config(6), scenes(3));
  a.run();
  b.run();
  EXPECT_EQ(nn::serialize_checkpoint(a.checkpoint()), nn::serialize_checkpoint(b.checkpoint()));
  TrainConfig other = train_config(6);
  other.model_seed = 4;
  Trainer c(micro(), other, scenes(3));
  c.run();
  EXPECT_NE(nn::serialize_checkpoint(a.checkpoint()), nn::serialize_checkpoint(c.checkpoint()));
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  for (bool augment : {false, true}) {
    Trainer full(micro(), train_config(8, augment), scenes(3));
    full.run();

    Trainer first(micro(), train_config(8, augment), scenes(3));
    for (int i = 0; i < 4; ++i) first.step_once();
    const std::string mid = nn::serialize_checkpoint(first.checkpoint());

    Trainer second(micro(), train_config(8, augment), scenes(3));
    second.resume(nn::parse_checkpoint(mid));
    EXPECT_EQ(second.step(), 4u);
    second.run();
    EXPECT_EQ(nn::serialize_checkpoint(second.checkpoint()), nn::serialize_checkpoint(full.checkpoint()))
        << "augment " << augment;
  }
}

TEST(Trainer, LossDecreases) {
  Trainer t(micro(), train_config(200), scenes(2));
  std::vector<double> totals;
  t.run([&](std::size_t, double lr, const nn::LossBreakdown& b) {
    EXPECT_GT(lr, 0.0);
    totals.push_back(b.total);
  });
  ASSERT_EQ(totals.size(), 200u);
  const double head = std::accumulate(totals.begin(), totals.begin() + 20, 0.0);
  const double tail = std::accumulate(totals.end() - 20, totals.end(), 0.0);
  EXPECT_LT(tail, 0.5 * head);
}

TEST(Trainer, CheckpointReloadReproducesDetections) {
  const auto data = scenes(2);
  Trainer t(micro(), train_config(20), data);
  t.run();
  const Detector back = Detector::load_from(nn::parse_checkpoint(nn::serialize_checkpoint(t.checkpoint())));
  for (const auto& s : data) {
    const auto a = t.model().detect(s.cloud), b = back.detect(s.cloud);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
      EXPECT_EQ(format_detection({s.frame_id, a[i].box, a[i].score}), format_detection({s.frame_id, b[i].box, b[i].score}));
  }
}

TEST(Trainer, ScheduleAndConfig) {
  Trainer zero(micro(), train_config(0), scenes(1));
  zero.run();
  EXPECT_EQ(zero.step(), 0u);
  EXPECT_EQ(nn::serialize_checkpoint(zero.checkpoint()),
            nn::serialize_checkpoint(Trainer(micro(), train_config(0), scenes(1)).checkpoint()));

  Trainer t(micro(), train_config(10), scenes(4));
  for (std::size_t epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen;
    for (std::size_t s = 0; s < 4; ++s) seen.insert(t.scene_for(epoch * 4 + s));
    EXPECT_EQ(seen.size(), 4u);
  }

  EXPECT_THROW(Trainer(micro(), train_config(1), {}), ConfigError);
  TrainConfig bad = train_config(1);
  bad.lr = 0.0;
  EXPECT_THROW(Trainer(micro(), bad, scenes(1)), ConfigError);

  const TrainConfig tc = train_config(42, true);
  const TrainConfig back = train_config_from_json(to_json(tc));
  EXPECT_EQ(back.steps, 42u);
  EXPECT_EQ(back.seed, 7u);
  EXPECT_TRUE(back.augment);
  EXPECT_THROW(train_config_from_json({{"epochs", 3}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"optimizer", "rmsprop"}}), ConfigError);
}
