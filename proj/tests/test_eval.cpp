#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "iassd/eval.hpp"

using namespace iassd;

namespace {

Box7 car_at(double x, double y = 0.0) { return Box7({x, y, 0.8}, 4.0, 2.0, 1.6, 0.0, 0); }

ScoredBox det(const Box7& b, double score) { return {b, score}; }

}  // namespace

// Four ground truths; ranked detections TP, FP, TP, TP.
// Precision/recall: (1, .25) (.5, .25) (2/3, .5) (.75, .75).
class ApFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    FrameResult f;
    f.frame = "000";
    for (double x : {0.0, 10.0, 20.0, 30.0}) f.gt.push_back(car_at(x));
    f.detections = {det(car_at(0.0), 0.9), det(car_at(50.0), 0.8), det(car_at(10.0), 0.7), det(car_at(20.0), 0.6)};
    frames.push_back(f);
  }
  std::vector<FrameResult> frames;
};

TEST_F(ApFixture, FortyPointInterpolation) {
  // Recall positions 1/40..10/40 see precision 1, 11/40..30/40 see 0.75, the rest 0.
  const EvalReport r = evaluate(frames, 1);
  EXPECT_NEAR(r.classes[0].ap, (10 * 1.0 + 20 * 0.75) / 40.0, 1e-12);
  EXPECT_EQ(r.classes[0].true_positives, 3u);
  EXPECT_EQ(r.classes[0].detections, 4u);
  EXPECT_DOUBLE_EQ(r.classes[0].recall, 0.75);
  EXPECT_DOUBLE_EQ(r.mean_ap, r.classes[0].ap);
}

TEST_F(ApFixture, ElevenPointInterpolation) {
  EvalConfig cfg;
  cfg.eleven_point = true;
  // 0, .1, .2 -> 1; .3 .. .7 -> .75; .8 .. 1 -> 0
  EXPECT_NEAR(evaluate(frames, 1, cfg).classes[0].ap, (3 * 1.0 + 5 * 0.75) / 11.0, 1e-12);
}

TEST_F(ApFixture, InputOrderDoesNotMatter) {
  auto shuffled = frames;
  std::reverse(shuffled[0].detections.begin(), shuffled[0].detections.end());
  EXPECT_DOUBLE_EQ(evaluate(shuffled, 1).classes[0].ap, evaluate(frames, 1).classes[0].ap);
}

TEST(Matching, GreedyHighestIouAndSingleUse) {
  FrameResult f;
  f.gt = {car_at(0.0), car_at(3.0)};
  // First detection overlaps both; it takes the better one (x = 3).
  f.detections = {det(car_at(2.6), 0.9), det(car_at(0.3), 0.8), det(car_at(0.2), 0.7)};
  const std::vector<FrameResult> frames{f};
  EvalConfig cfg;
  cfg.iou_thresholds = {0.5};
  const ClassEval c = evaluate(frames, 1, cfg).classes[0];
  EXPECT_EQ(c.true_positives, 2u);  // the duplicate at 0.2 is a false positive
  EXPECT_DOUBLE_EQ(c.recall, 1.0);
  EXPECT_NEAR(c.ap, 1.0, 1e-12);
}

TEST(Matching, ThresholdIsInclusiveAndPerClass) {
  FrameResult f;
  f.gt = {car_at(0.0)};
  // Half-length shift: overlap is half of each box, IoU = 1/3.
  const Box7 shifted = car_at(2.0);
  const double iou = iou_3d(shifted, f.gt[0]);
  EXPECT_NEAR(iou, 1.0 / 3.0, 1e-12);
  f.detections = {det(shifted, 0.5)};
  const std::vector<FrameResult> frames{f};
  EvalConfig cfg;
  cfg.iou_thresholds = {iou};
  EXPECT_EQ(evaluate(frames, 1, cfg).classes[0].true_positives, 1u);
  cfg.iou_thresholds = {iou + 1e-9};
  EXPECT_EQ(evaluate(frames, 1, cfg).classes[0].true_positives, 0u);
  EXPECT_THROW(evaluate(frames, 2, cfg), std::out_of_range);
}

TEST(Matching, FramesAndClassesAreIsolated) {
  FrameResult a, b;
  a.frame = "a";
  b.frame = "b";
  a.gt = {car_at(0.0)};
  b.detections = {det(car_at(0.0), 0.9)};  // right place, wrong frame
  Box7 ped = car_at(0.0);
  ped.class_id = 1;
  a.detections = {det(ped, 0.8)};  // right place, wrong class
  const std::vector<FrameResult> frames{a, b};
  const EvalReport r = evaluate(frames, 2, EvalConfig{{0.5, 0.5}});
  EXPECT_EQ(r.classes[0].true_positives, 0u);
  EXPECT_EQ(r.classes[0].detections, 1u);
  EXPECT_EQ(r.classes[0].ap, 0.0);
  EXPECT_TRUE(std::isnan(r.classes[1].ap));  // no ground truth
  EXPECT_EQ(r.classes[1].detections, 1u);
  EXPECT_EQ(r.mean_ap, 0.0);
}

TEST(Matching, NoDetections) {
  FrameResult f;
  f.gt = {car_at(0.0)};
  const std::vector<FrameResult> frames{f};
  const ClassEval c = evaluate(frames, 1).classes[0];
  EXPECT_EQ(c.ap, 0.0);
  EXPECT_EQ(c.recall, 0.0);
  EXPECT_TRUE(std::isnan(evaluate(std::vector<FrameResult>{}, 1).mean_ap));
}
