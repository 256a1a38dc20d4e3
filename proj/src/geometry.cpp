#include "jointq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "jointq/numerics.hpp"

namespace jointq {

bool is_valid(const Box& b, double tolerance) {
  return b.w >= kMinBoxSize - tolerance && b.h >= kMinBoxSize - tolerance && b.x >= -tolerance &&
         b.y >= -tolerance && b.right() <= 1.0 + tolerance && b.bottom() <= 1.0 + tolerance;
}

Action action_from_code(int c) {
  if (c < 0 || c >= kNumActions) throw ShapeError("action code out of range: " + std::to_string(c));
  return static_cast<Action>(c);
}

std::string_view action_name(Action a) {
  switch (a) {
    case Action::kMoveRight: return "move_right";
    case Action::kMoveLeft: return "move_left";
    case Action::kMoveUp: return "move_up";
    case Action::kMoveDown: return "move_down";
    case Action::kScaleBigger: return "scale_bigger";
    case Action::kScaleSmaller: return "scale_smaller";
    case Action::kFatter: return "fatter";
    case Action::kTaller: return "taller";
    case Action::kTrigger: return "trigger";
  }
  return "unknown";
}

namespace {

Box clamp_position(Box b) {
  b.x = std::clamp(b.x, 0.0, 1.0 - b.w);
  b.y = std::clamp(b.y, 0.0, 1.0 - b.h);
  return b;
}

Box resize_about_center(const Box& b, double w, double h) {
  w = std::clamp(w, kMinBoxSize, 1.0);
  h = std::clamp(h, kMinBoxSize, 1.0);
  return clamp_position(Box::centered(b.cx(), b.cy(), w, h));
}

}  // namespace

Box apply_action(const Box& b, Action a, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ShapeError("apply_action: alpha must lie in (0, 1)");
  const double grow = 1.0 + alpha;
  Box out = b;
  switch (a) {
    case Action::kMoveRight: out.x += alpha * b.w; return clamp_position(out);
    case Action::kMoveLeft: out.x -= alpha * b.w; return clamp_position(out);
    case Action::kMoveUp: out.y -= alpha * b.h; return clamp_position(out);
    case Action::kMoveDown: out.y += alpha * b.h; return clamp_position(out);
    case Action::kScaleBigger: return resize_about_center(b, b.w * grow, b.h * grow);
    case Action::kScaleSmaller: return resize_about_center(b, b.w / grow, b.h / grow);
    case Action::kFatter: return resize_about_center(b, b.w * grow, b.h / grow);
    case Action::kTaller: return resize_about_center(b, b.w / grow, b.h * grow);
    case Action::kTrigger: break;
  }
  throw ShapeError("apply_action: trigger does not transform the box");
}

double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const double ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  return (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  // Sum the areas in a fixed order so iou(a, b) == iou(b, a) bit for bit.
  const double lo = std::min(a.area(), b.area());
  const double hi = std::max(a.area(), b.area());
  const double uni = (lo + hi) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double step_reward(const Box& b, const Box& b_next, const Box& g) {
  const double delta = iou(b_next, g) - iou(b, g);
  return static_cast<double>((delta > 0.0) - (delta < 0.0));
}

double trigger_reward(const Box& b, const Box& g, double tau, double eta) {
  return iou(b, g) >= tau ? eta : -eta;
}

void ActionHistory::push(Action a) {
  head_ = (head_ + kLength - 1) % kLength;
  codes_[head_] = static_cast<signed char>(code(a));
  size_ = std::min(size_ + 1, kLength);
}

Action ActionHistory::at(std::size_t k) const {
  if (k >= size_) throw ShapeError("ActionHistory::at: index beyond stored actions");
  return static_cast<Action>(codes_[(head_ + k) % kLength]);
}

Eigen::VectorXd encode_history(const ActionHistory& h) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(ActionHistory::kEncodedSize);
  for (std::size_t k = 0; k < h.size(); ++k) out(static_cast<Eigen::Index>(k * kNumActions + code(h.at(k)))) = 1.0;
  return out;
}

}  // namespace jointq
