// Synthetic joint-search world: scenes with spatially correlated target
// pairs plus distractors, a max-intensity grid renderer for box windows, and
// a lockstep multi-agent episode.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "jointq/geometry.hpp"

namespace jointq {

using Rng = std::mt19937_64;

inline constexpr int kDistractor = -1;

class SceneGenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Range = std::pair<double, double>;

struct SceneSpec {
  int num_classes = 2;
  // Independent (min, max) ranges for width and height, per class.
  std::vector<Range> size_range = {{0.22, 0.34}, {0.12, 0.2}};
  Eigen::Vector2d pair_offset_mean = Eigen::Vector2d(0.0, 0.25);
  double pair_offset_std = 0.05;
  int num_distractors = 4;
  Range distractor_size_range = {0.12, 0.2};
  std::vector<double> class_intensities = {0.9, 0.5};
  double intensity_jitter_std = 0.05;
  Range distractor_intensity_range = {0.3, 1.0};
  double pixel_noise_std = 0.05;
  // Probability that a scene holds every class; otherwise exactly one class,
  // chosen uniformly.
  double p_both = 1.0;
  std::uint64_t rng_seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct SceneObject {
  int class_id = kDistractor;
  Box box;
  double intensity = 0.0;
};

struct Scene {
  std::vector<SceneObject> objects;
  std::vector<std::optional<Box>> ground_truth;  // indexed by class

  bool has_class(int c) const {
    return c >= 0 && c < static_cast<int>(ground_truth.size()) && ground_truth[static_cast<std::size_t>(c)].has_value();
  }
  bool has_all_classes() const;
};

// Class 0 is placed uniformly; class k > 0 is centered at the class k-1
// center plus a Gaussian offset. The whole chain is redrawn (at most 100
// times) until every target lies inside the scene.
Scene generate_scene(const SceneSpec& spec, Rng& rng);

struct ObservationConfig {
  int grid_size = 8;
  double context_margin = 1.5;

  int observation_size() const { return grid_size * grid_size + 4; }
  int state_size() const { return observation_size() + static_cast<int>(ActionHistory::kEncodedSize); }
  void validate() const;
};

// G*G cell maxima over the window expanded by the context margin (row-major,
// rows along y), followed by the window's (x, y, w, h).
Eigen::VectorXd render_observation(const Scene& scene, const Box& window, const ObservationConfig& cfg,
                                   double pixel_noise_std, Rng& rng);

// s = (o, h). The history is kept as codes and expanded on demand.
struct AgentState {
  Eigen::VectorXd observation;
  ActionHistory history;

  Eigen::Index size() const { return observation.size() + static_cast<Eigen::Index>(ActionHistory::kEncodedSize); }
  // Writes the concatenated state into out (length size()).
  void write_to(Eigen::Ref<Eigen::VectorXd> out) const;
  Eigen::VectorXd vector() const;
};

AgentState make_state(Eigen::VectorXd observation, const ActionHistory& history);

struct EnvConfig {
  ObservationConfig observation;
  int max_steps = 50;
  double alpha = kDefaultAlpha;
  double trigger_threshold = kDefaultTriggerThreshold;
  double trigger_reward = kDefaultTriggerReward;

  void validate() const;
};

struct AgentSlot {
  bool present = false;   // the agent's class is in the scene
  Box box = Box::full_scene();
  ActionHistory history;
  bool done = false;
  bool triggered = false;
  std::optional<AgentState> state;  // last rendered state; kept after done
};

class EpisodeState {
 public:
  // One agent per class; agents whose class is absent start done.
  EpisodeState(Scene scene, const EnvConfig& cfg, double pixel_noise_std, Rng rng);

  const Scene& scene() const { return scene_; }
  const EnvConfig& config() const { return cfg_; }
  int num_agents() const { return static_cast<int>(slots_.size()); }
  const AgentSlot& agent(int i) const { return slots_.at(static_cast<std::size_t>(i)); }
  int step_count() const { return t_; }
  bool all_done() const;
  const Box& ground_truth(int i) const;

  struct StepResult {
    std::vector<std::optional<AgentState>> states;
    std::vector<double> rewards;   // 0 for agents that did not act
    std::vector<bool> done;
  };

  // actions[i] must be set exactly for the agents that are still live.
  StepResult step(const std::vector<std::optional<Action>>& actions);

 private:
  AgentState render(int i);

  Scene scene_;
  EnvConfig cfg_;
  double noise_std_;
  Rng rng_;
  std::vector<AgentSlot> slots_;
  int t_ = 0;
};

EpisodeState::StepResult env_step(EpisodeState& ep, const std::vector<std::optional<Action>>& actions);

// One row of the trajectory CSV.
struct TrajectoryRecord {
  std::int64_t episode_id = 0;
  int t = 0;
  int agent_id = 0;
  int action_code = -1;  // -1 for the initial box
  Box box;
  double reward = 0.0;
  double iou = 0.0;
};

}  // namespace jointq
