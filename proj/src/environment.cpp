#include "jointq/environment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "jointq/numerics.hpp"

namespace jointq {

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw std::invalid_argument(field + ": " + what);
}

void require_range(const Range& r, double lo, double hi, const std::string& field) {
  require(r.first >= lo && r.second <= hi && r.first <= r.second, field, "range must satisfy " +
                                                                           std::to_string(lo) + " <= min <= max <= " +
                                                                           std::to_string(hi));
}

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double gaussian(Rng& rng, double mean, double std) {
  if (std == 0.0) return mean;
  return std::normal_distribution<double>(mean, std)(rng);
}

Box random_box_uniform(Rng& rng, const Range& size) {
  const double w = uniform(rng, size.first, size.second);
  const double h = uniform(rng, size.first, size.second);
  return {uniform(rng, 0.0, 1.0 - w), uniform(rng, 0.0, 1.0 - h), w, h};
}

bool inside_scene(const Box& b) { return b.x >= 0.0 && b.y >= 0.0 && b.right() <= 1.0 && b.bottom() <= 1.0; }

}  // namespace

void SceneSpec::validate() const {
  require(num_classes >= 1, "num_classes", "must be >= 1");
  require(static_cast<int>(size_range.size()) == num_classes, "size_range", "needs one range per class");
  require(static_cast<int>(class_intensities.size()) == num_classes, "class_intensities",
          "needs one intensity per class");
  for (const auto& r : size_range) require_range(r, kMinBoxSize, 1.0, "size_range");
  require_range(distractor_size_range, kMinBoxSize, 1.0, "distractor_size_range");
  for (double v : class_intensities) require(v >= 0.0 && v <= 1.0, "class_intensities", "must lie in [0, 1]");
  require(pair_offset_mean.allFinite(), "pair_offset_mean", "must be finite");
  require(pair_offset_std >= 0.0 && std::isfinite(pair_offset_std), "pair_offset_std", "must be >= 0");
  require(num_distractors >= 0, "num_distractors", "must be >= 0");
  require(intensity_jitter_std >= 0.0, "intensity_jitter_std", "must be >= 0");
  require_range(distractor_intensity_range, 0.0, 1.0, "distractor_intensity_range");
  require(pixel_noise_std >= 0.0, "pixel_noise_std", "must be >= 0");
  require(p_both >= 0.0 && p_both <= 1.0, "p_both", "must lie in [0, 1]");
}

bool Scene::has_all_classes() const {
  return std::all_of(ground_truth.begin(), ground_truth.end(), [](const auto& g) { return g.has_value(); });
}

Scene generate_scene(const SceneSpec& spec, Rng& rng) {
  spec.validate();
  const auto n = static_cast<std::size_t>(spec.num_classes);
  std::vector<Box> targets(n);
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    targets[0] = random_box_uniform(rng, spec.size_range[0]);
    placed = true;
    for (std::size_t k = 1; k < n; ++k) {
      const double w = uniform(rng, spec.size_range[k].first, spec.size_range[k].second);
      const double h = uniform(rng, spec.size_range[k].first, spec.size_range[k].second);
      const double cx = targets[k - 1].cx() + gaussian(rng, spec.pair_offset_mean.x(), spec.pair_offset_std);
      const double cy = targets[k - 1].cy() + gaussian(rng, spec.pair_offset_mean.y(), spec.pair_offset_std);
      targets[k] = Box::centered(cx, cy, w, h);
      if (!inside_scene(targets[k])) {
        placed = false;
        break;
      }
    }
  }
  if (!placed) throw SceneGenerationError("generate_scene: could not place correlated targets inside the scene");

  std::vector<bool> present(n, true);
  if (n > 1 && spec.p_both < 1.0 && uniform(rng, 0.0, 1.0) >= spec.p_both) {
    const auto keep = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    for (std::size_t k = 0; k < n; ++k) present[k] = (k == keep);
  }

  Scene scene;
  scene.ground_truth.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double intensity =
        std::clamp(gaussian(rng, spec.class_intensities[k], spec.intensity_jitter_std), 0.0, 1.0);
    if (!present[k]) continue;
    scene.objects.push_back({static_cast<int>(k), targets[k], intensity});
    scene.ground_truth[k] = targets[k];
  }
  for (int d = 0; d < spec.num_distractors; ++d) {
    const Box b = random_box_uniform(rng, spec.distractor_size_range);
    const double intensity =
        uniform(rng, spec.distractor_intensity_range.first, spec.distractor_intensity_range.second);
    scene.objects.push_back({kDistractor, b, intensity});
  }
  return scene;
}

void ObservationConfig::validate() const {
  require(grid_size >= 2, "grid_size", "must be >= 2");
  require(context_margin >= 1.0, "context_margin", "must be >= 1");
}

Eigen::VectorXd render_observation(const Scene& scene, const Box& window, const ObservationConfig& cfg,
                                   double pixel_noise_std, Rng& rng) {
  const int g = cfg.grid_size;
  const Box view = window.expanded(cfg.context_margin);
  const double cw = view.w / g;
  const double ch = view.h / g;
  // Overlaps thinner than this are edge contacts from rounding, not coverage.
  const double eps = 1e-9 * std::max(view.w, view.h);

  Eigen::VectorXd out(cfg.observation_size());
  std::normal_distribution<double> noise(0.0, pixel_noise_std > 0.0 ? pixel_noise_std : 1.0);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      const Box cell{view.x + c * cw, view.y + r * ch, cw, ch};
      double value = 0.0;
      const bool in_scene = cell.right() > eps && cell.bottom() > eps && cell.x < 1.0 - eps && cell.y < 1.0 - eps;
      if (in_scene) {
        for (const auto& obj : scene.objects) {
          const double ow = std::min(cell.right(), obj.box.right()) - std::max(cell.x, obj.box.x);
          const double oh = std::min(cell.bottom(), obj.box.bottom()) - std::max(cell.y, obj.box.y);
          if (ow > eps && oh > eps) value = std::max(value, obj.intensity);
        }
        if (pixel_noise_std > 0.0) value = std::clamp(value + noise(rng), 0.0, 1.0);
      }
      out(r * g + c) = value;
    }
  }
  const Eigen::Index base = static_cast<Eigen::Index>(g) * g;
  out(base + 0) = window.x;
  out(base + 1) = window.y;
  out(base + 2) = window.w;
  out(base + 3) = window.h;
  return out;
}

void AgentState::write_to(Eigen::Ref<Eigen::VectorXd> out) const {
  if (out.size() != size()) throw ShapeError("AgentState::write_to: output length mismatch");
  const Eigen::Index n = observation.size();
  out.head(n) = observation;
  out.tail(static_cast<Eigen::Index>(ActionHistory::kEncodedSize)).setZero();
  for (std::size_t k = 0; k < history.size(); ++k)
    out(n + static_cast<Eigen::Index>(k * kNumActions + code(history.at(k)))) = 1.0;
}

Eigen::VectorXd AgentState::vector() const {
  Eigen::VectorXd out(size());
  write_to(out);
  return out;
}

AgentState make_state(Eigen::VectorXd observation, const ActionHistory& history) {
  return {std::move(observation), history};
}

void EnvConfig::validate() const {
  observation.validate();
  require(max_steps >= 1, "max_steps", "must be >= 1");
  require(alpha > 0.0 && alpha < 1.0, "alpha", "must lie in (0, 1)");
  require(trigger_threshold > 0.0 && trigger_threshold < 1.0, "trigger_threshold", "must lie in (0, 1)");
  require(trigger_reward > 0.0, "trigger_reward", "must be > 0");
}

EpisodeState::EpisodeState(Scene scene, const EnvConfig& cfg, double pixel_noise_std, Rng rng)
    : scene_(std::move(scene)), cfg_(cfg), noise_std_(pixel_noise_std), rng_(std::move(rng)) {
  cfg_.validate();
  slots_.resize(scene_.ground_truth.size());
  for (int i = 0; i < num_agents(); ++i) {
    auto& slot = slots_[static_cast<std::size_t>(i)];
    slot.present = scene_.has_class(i);
    slot.done = !slot.present;
    if (slot.present) slot.state = render(i);
  }
}

bool EpisodeState::all_done() const {
  return std::all_of(slots_.begin(), slots_.end(), [](const AgentSlot& s) { return s.done; });
}

const Box& EpisodeState::ground_truth(int i) const {
  const auto& g = scene_.ground_truth.at(static_cast<std::size_t>(i));
  if (!g) throw ShapeError("agent " + std::to_string(i) + " has no target in this scene");
  return *g;
}

AgentState EpisodeState::render(int i) {
  const auto& slot = slots_[static_cast<std::size_t>(i)];
  return make_state(render_observation(scene_, slot.box, cfg_.observation, noise_std_, rng_), slot.history);
}

EpisodeState::StepResult EpisodeState::step(const std::vector<std::optional<Action>>& actions) {
  if (all_done()) throw ShapeError("env_step: episode already finished");
  if (static_cast<int>(actions.size()) != num_agents()) throw ShapeError("env_step: one action slot per agent");
  for (int i = 0; i < num_agents(); ++i) {
    const auto& slot = slots_[static_cast<std::size_t>(i)];
    const auto& a = actions[static_cast<std::size_t>(i)];
    if (slot.done && a) throw ShapeError("env_step: action for already-done agent " + std::to_string(i));
    if (!slot.done && !a) throw ShapeError("env_step: missing action for live agent " + std::to_string(i));
  }

  StepResult result;
  result.rewards.assign(slots_.size(), 0.0);
  ++t_;
  // Agents are processed in index order so the noise stream is reproducible.
  for (int i = 0; i < num_agents(); ++i) {
    auto& slot = slots_[static_cast<std::size_t>(i)];
    const auto& a = actions[static_cast<std::size_t>(i)];
    if (!a) continue;
    const Box& g = ground_truth(i);
    if (*a == Action::kTrigger) {
      result.rewards[static_cast<std::size_t>(i)] =
          trigger_reward(slot.box, g, cfg_.trigger_threshold, cfg_.trigger_reward);
      slot.done = true;
      slot.triggered = true;
      slot.history.push(*a);
      slot.state = make_state(slot.state->observation, slot.history);
      continue;
    }
    const Box next = apply_action(slot.box, *a, cfg_.alpha);
    result.rewards[static_cast<std::size_t>(i)] = step_reward(slot.box, next, g);
    slot.box = next;
    slot.history.push(*a);
    slot.state = render(i);
  }
  if (t_ >= cfg_.max_steps)
    for (auto& slot : slots_) slot.done = true;

  for (const auto& slot : slots_) {
    result.states.push_back(slot.state);
    result.done.push_back(slot.done);
  }
  return result;
}

EpisodeState::StepResult env_step(EpisodeState& ep, const std::vector<std::optional<Action>>& actions) {
  return ep.step(actions);
}

}  // namespace jointq
