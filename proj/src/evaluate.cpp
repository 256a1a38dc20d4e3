#include <algorithm>
#include <cmath>
#include <limits>

#include "jointq/harness.hpp"

namespace jointq {

namespace {

double median(std::vector<int> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

EvalReport evaluate(const JointModel& model, const SceneSpec& spec, const EnvConfig& env, int n_episodes,
                    double iou_threshold, std::uint64_t seed, std::vector<TrajectoryRecord>* trajectories,
                    int trajectory_episodes) {
  spec.validate();
  env.validate();
  const int n = model.online.num_agents();
  if (spec.num_classes != n) throw ShapeError("evaluate: scene classes do not match the model's agents");
  if (env.observation.state_size() != model.online.config.state_dim)
    throw ShapeError("evaluate: observation config does not match the checkpoint's state_dim");
  const auto un = static_cast<std::size_t>(n);
  const auto T = static_cast<std::size_t>(env.max_steps);

  EvalReport r;
  r.episodes = std::max(n_episodes, 0);
  r.max_steps = env.max_steps;
  r.iou_threshold = iou_threshold;
  r.class_episodes.assign(un, 0);
  r.accuracy.assign(un, 0.0);
  r.median_steps.assign(un, std::numeric_limits<double>::quiet_NaN());
  r.recall_at_k.assign(un, std::vector<double>(T, 0.0));
  r.steps_histogram.assign(un, std::vector<int>(T, 0));
  r.gate_trace.assign(un, std::vector<double>(T, std::numeric_limits<double>::quiet_NaN()));

  std::vector<int> hits(un, 0);
  std::vector<std::vector<int>> first_hit_count(un, std::vector<int>(T + 1, 0));  // by first attended index
  std::vector<std::vector<int>> success_steps(un);
  std::vector<std::vector<double>> gate_sum(un, std::vector<double>(T, 0.0));
  std::vector<std::vector<int>> gate_n(un, std::vector<int>(T, 0));

  Rng master(seed);
  Rng scene_rng(master());
  Rng noise_rng(master());
  Rng policy_rng(master());

  for (int e = 0; e < r.episodes; ++e) {
    EpisodeState ep(generate_scene(spec, scene_rng), env, spec.pixel_noise_std, Rng(noise_rng()));
    const bool record = trajectories && e < trajectory_episodes;
    // index (0-based) of the first attended box with IoU >= threshold
    std::vector<std::size_t> first_hit(un, std::numeric_limits<std::size_t>::max());
    std::vector<std::size_t> attended(un, 0);

    auto attend = [&](int i, int t, int action, double reward) {
      const auto ui = static_cast<std::size_t>(i);
      const auto& slot = ep.agent(i);
      const double q = iou(slot.box, ep.ground_truth(i));
      if (action != code(Action::kTrigger)) {
        if (q >= iou_threshold && first_hit[ui] == std::numeric_limits<std::size_t>::max())
          first_hit[ui] = attended[ui];
        ++attended[ui];
      }
      if (record) trajectories->push_back({e, t, i, action, slot.box, reward, q});
    };

    for (int i = 0; i < n; ++i)
      if (ep.agent(i).present) attend(i, 0, -1, 0.0);

    while (!ep.all_done()) {
      StateSlots states(un);
      std::vector<bool> live(un);
      for (int i = 0; i < n; ++i) {
        states[static_cast<std::size_t>(i)] = ep.agent(i).state;
        live[static_cast<std::size_t>(i)] = !ep.agent(i).done;
      }
      const auto sel = select_actions(model.online, states, live, 0.0, policy_rng);
      const auto t = static_cast<std::size_t>(ep.step_count());
      for (std::size_t i = 0; i < un; ++i) {
        if (!sel.actions[i]) continue;
        gate_sum[i][t] += sel.gates[i];
        ++gate_n[i][t];
      }
      const auto result = ep.step(sel.actions);
      for (int i = 0; i < n; ++i) {
        const auto& a = sel.actions[static_cast<std::size_t>(i)];
        if (a) attend(i, ep.step_count(), code(*a), result.rewards[static_cast<std::size_t>(i)]);
      }
    }

    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const auto& slot = ep.agent(i);
      if (!slot.present) continue;
      ++r.class_episodes[ui];
      if (first_hit[ui] <= T) ++first_hit_count[ui][std::min(first_hit[ui], T)];
      if (slot.triggered && iou(slot.box, ep.ground_truth(i)) >= iou_threshold) {
        ++hits[ui];
        // attended boxes = moves + 1 = actions including the trigger
        success_steps[ui].push_back(static_cast<int>(attended[ui]));
      }
    }
  }

  for (std::size_t c = 0; c < un; ++c) {
    const int m = r.class_episodes[c];
    if (m == 0) continue;
    r.accuracy[c] = static_cast<double>(hits[c]) / m;
    int cum = 0;
    for (std::size_t k = 0; k < T; ++k) {
      cum += first_hit_count[c][k];
      r.recall_at_k[c][k] = static_cast<double>(cum) / m;
    }
    for (int s : success_steps[c])
      if (s >= 1 && static_cast<std::size_t>(s) <= T) ++r.steps_histogram[c][static_cast<std::size_t>(s - 1)];
    r.median_steps[c] = median(success_steps[c]);
    for (std::size_t t = 0; t < T; ++t)
      if (gate_n[c][t] > 0) r.gate_trace[c][t] = gate_sum[c][t] / gate_n[c][t];
  }
  return r;
}

double full_scene_hit_probability(const Range& size_range, double iou_threshold) {
  const auto [lo, hi] = size_range;
  auto p_h_at_least = [&](double need) {
    if (hi == lo) return lo >= need ? 1.0 : 0.0;
    return std::clamp((hi - std::max(need, lo)) / (hi - lo), 0.0, 1.0);
  };
  if (hi == lo) return p_h_at_least(iou_threshold / lo);
  constexpr int kSteps = 20000;
  double acc = 0.0;
  for (int k = 0; k < kSteps; ++k) {
    const double w = lo + (hi - lo) * (k + 0.5) / kSteps;
    acc += p_h_at_least(iou_threshold / w);
  }
  return acc / kSteps;
}

}  // namespace jointq
