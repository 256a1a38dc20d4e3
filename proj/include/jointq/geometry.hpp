// Bounding-box MDP primitives: the nine search actions, box transforms,
// IoU, rewards and the fixed-length action history.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <deque>
#include <optional>
#include <string_view>

namespace jointq {

inline constexpr double kMinBoxSize = 0.02;
inline constexpr double kDefaultAlpha = 0.2;
inline constexpr double kDefaultTriggerThreshold = 0.6;
inline constexpr double kDefaultTriggerReward = 3.0;

// Axis-aligned box in unit scene coordinates; (x, y) is the top-left corner.
struct Box {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;
  double h = 1.0;

  double area() const { return w * h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double right() const { return x + w; }
  double bottom() const { return y + h; }

  static Box full_scene() { return {0.0, 0.0, 1.0, 1.0}; }
  static Box centered(double cx, double cy, double w, double h) { return {cx - 0.5 * w, cy - 0.5 * h, w, h}; }

  // Box scaled by factor about its own center (may leave the unit scene).
  Box expanded(double factor) const { return centered(cx(), cy(), w * factor, h * factor); }

  bool operator==(const Box&) const = default;
};

// True when w, h >= min size and the box lies inside the unit square.
bool is_valid(const Box& b, double tolerance = 1e-12);

enum class Action : int {
  kMoveRight = 0,
  kMoveLeft = 1,
  kMoveUp = 2,
  kMoveDown = 3,
  kScaleBigger = 4,
  kScaleSmaller = 5,
  kFatter = 6,
  kTaller = 7,
  kTrigger = 8,
};

inline constexpr int kNumActions = 9;

constexpr int code(Action a) { return static_cast<int>(a); }
Action action_from_code(int code);
std::string_view action_name(Action a);

// Transforms b by one non-trigger action with step factor alpha, then clamps
// into the unit scene. Moves keep the size; scalings keep the center unless
// the clamp has to shift the box back inside.
Box apply_action(const Box& b, Action a, double alpha = kDefaultAlpha);

double intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);

// sign(IoU(b_next, g) - IoU(b, g)).
double step_reward(const Box& b, const Box& b_next, const Box& g);

// +eta when iou(b, g) >= tau, else -eta.
double trigger_reward(const Box& b, const Box& g, double tau = kDefaultTriggerThreshold,
                      double eta = kDefaultTriggerReward);

// The last kLength actions, most recent first.
class ActionHistory {
 public:
  static constexpr std::size_t kLength = 10;
  static constexpr std::size_t kEncodedSize = kLength * kNumActions;

  void push(Action a);
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  // k = 0 is the most recent action.
  Action at(std::size_t k) const;

  bool operator==(const ActionHistory&) const = default;

 private:
  std::array<signed char, kLength> codes_{};  // ring buffer
  std::size_t head_ = 0;                       // slot of most recent entry
  std::size_t size_ = 0;
};

// 90-length 0/1 vector; slot k holds the one-hot of the k-th most recent action.
Eigen::VectorXd encode_history(const ActionHistory& h);

}  // namespace jointq
