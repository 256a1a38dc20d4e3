#include <gtest/gtest.h>

#include <random>

#include "jointq/geometry.hpp"

namespace jointq {
namespace {

void expect_box_near(const Box& a, const Box& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(a.w, b.w, tol);
  EXPECT_NEAR(a.h, b.h, tol);
}

Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> size(kMinBoxSize, 1.0), unit(0.0, 1.0);
  Box b;
  b.w = size(rng);
  b.h = size(rng);
  b.x = unit(rng) * (1.0 - b.w);
  b.y = unit(rng) * (1.0 - b.h);
  return b;
}

TEST(ApplyActionTest, MoveRight) {
  expect_box_near(apply_action({0.1, 0.1, 0.4, 0.4}, Action::kMoveRight, 0.2), {0.18, 0.1, 0.4, 0.4}, 1e-15);
}

TEST(ApplyActionTest, MovesInEveryDirection) {
  const Box b{0.3, 0.3, 0.2, 0.1};
  expect_box_near(apply_action(b, Action::kMoveLeft), {0.26, 0.3, 0.2, 0.1}, 1e-15);
  expect_box_near(apply_action(b, Action::kMoveUp), {0.3, 0.28, 0.2, 0.1}, 1e-15);
  expect_box_near(apply_action(b, Action::kMoveDown), {0.3, 0.32, 0.2, 0.1}, 1e-15);
}

TEST(ApplyActionTest, ScaleBiggerThenSmallerIsIdentity) {
  const Box b{0.3, 0.35, 0.2, 0.15};
  expect_box_near(apply_action(apply_action(b, Action::kScaleBigger), Action::kScaleSmaller), b, 1e-12);
  expect_box_near(apply_action(apply_action(b, Action::kFatter), Action::kTaller), b, 1e-12);
}

TEST(ApplyActionTest, AspectChangesKeepCenter) {
  const Box b{0.3, 0.35, 0.2, 0.15};
  const Box f = apply_action(b, Action::kFatter);
  EXPECT_NEAR(f.w, 0.24, 1e-15);
  EXPECT_NEAR(f.h, 0.125, 1e-15);
  EXPECT_NEAR(f.cx(), b.cx(), 1e-15);
  EXPECT_NEAR(f.cy(), b.cy(), 1e-15);
}

TEST(ApplyActionTest, MoveRightClampsAtBorder) {
  const Box b = apply_action({0.55, 0.2, 0.4, 0.4}, Action::kMoveRight);
  EXPECT_DOUBLE_EQ(b.right(), 1.0);
  EXPECT_DOUBLE_EQ(b.w, 0.4);
}

TEST(ApplyActionTest, TriggerIsRejected) {
  EXPECT_THROW(apply_action(Box::full_scene(), Action::kTrigger), std::invalid_argument);
}

TEST(ApplyActionTest, FuzzedResultsStayValid) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> action(0, kNumActions - 2);
  std::uniform_real_distribution<double> alpha(0.01, 0.99);
  for (int k = 0; k < 20000; ++k) {
    const Box b = random_box(rng);
    const Box next = apply_action(b, action_from_code(action(rng)), alpha(rng));
    ASSERT_TRUE(is_valid(next)) << next.x << " " << next.y << " " << next.w << " " << next.h;
  }
}

TEST(ApplyActionTest, LongRandomWalksStayValid) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> action(0, kNumActions - 2);
  Box b = Box::full_scene();
  for (int k = 0; k < 50000; ++k) {
    b = apply_action(b, action_from_code(action(rng)));
    ASSERT_TRUE(is_valid(b));
  }
}

TEST(IouTest, Examples) {
  const Box a{0.1, 0.2, 0.3, 0.4};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou({0, 0, 0.2, 0.2}, {0.5, 0.5, 0.2, 0.2}), 0.0);
  EXPECT_NEAR(iou({0, 0, 0.2, 0.2}, {0.1, 0.1, 0.2, 0.2}), 1.0 / 7.0, 1e-15);
}

TEST(IouTest, SymmetricAndBounded) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 10000; ++k) {
    const Box a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    ASSERT_EQ(v, iou(b, a));
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    if (!(a == b)) {
      ASSERT_LT(v, 1.0);
    }
  }
}

TEST(RewardTest, StepRewardSigns) {
  const Box g{0.4, 0.4, 0.2, 0.2};
  const Box far = Box::full_scene();
  const Box near{0.35, 0.35, 0.3, 0.3};
  ASSERT_LT(iou(far, g), iou(near, g));
  EXPECT_EQ(step_reward(far, near, g), 1.0);
  EXPECT_EQ(step_reward(near, far, g), -1.0);
  EXPECT_EQ(step_reward(near, near, g), 0.0);
}

TEST(RewardTest, UnchangedBoxGivesZeroForAnyTarget) {
  std::mt19937_64 rng(14);
  for (int k = 0; k < 1000; ++k) {
    const Box b = random_box(rng);
    ASSERT_EQ(step_reward(b, b, random_box(rng)), 0.0);
  }
}

TEST(RewardTest, TriggerReward) {
  const Box g{0.2, 0.2, 0.4, 0.4};
  EXPECT_EQ(trigger_reward(g, g), 3.0);
  EXPECT_EQ(trigger_reward({0.7, 0.7, 0.2, 0.2}, g), -3.0);
  // IoU exactly 0.5 against tau 0.5 counts as success.
  const Box half{0.2, 0.2, 0.2, 0.4};
  ASSERT_DOUBLE_EQ(iou(half, g), 0.5);
  EXPECT_EQ(trigger_reward(half, g, 0.5, 3.0), 3.0);
}

TEST(HistoryTest, EmptyEncodesZeros) {
  const auto v = encode_history(ActionHistory{});
  EXPECT_EQ(v.size(), 90);
  EXPECT_TRUE(v.isZero(0));
}

TEST(HistoryTest, SingleActionOneHot) {
  ActionHistory h;
  h.push(action_from_code(3));
  const auto v = encode_history(h);
  EXPECT_EQ(v.sum(), 1.0);
  EXPECT_EQ(v(3), 1.0);
}

TEST(HistoryTest, MostRecentFirstAndEviction) {
  ActionHistory h;
  for (int k = 0; k < 11; ++k) h.push(action_from_code(k % 8));
  EXPECT_EQ(h.size(), 10u);
  EXPECT_EQ(code(h.at(0)), 10 % 8);
  EXPECT_EQ(code(h.at(9)), 1);
  const auto v = encode_history(h);
  EXPECT_EQ(v.sum(), 10.0);
  EXPECT_EQ(v(0 * kNumActions + 2), 1.0);
}

TEST(HistoryTest, EncodingSumsToLength) {
  ActionHistory h;
  for (int k = 0; k < 15; ++k) {
    h.push(action_from_code(k % kNumActions));
    EXPECT_EQ(encode_history(h).sum(), static_cast<double>(std::min(k + 1, 10)));
  }
}

TEST(ActionTest, CodesAreStable) {
  EXPECT_EQ(code(Action::kMoveRight), 0);
  EXPECT_EQ(code(Action::kTrigger), 8);
  for (int c = 0; c < kNumActions; ++c) EXPECT_EQ(code(action_from_code(c)), c);
  EXPECT_THROW(action_from_code(9), std::invalid_argument);
}

}  // namespace
}  // namespace jointq
