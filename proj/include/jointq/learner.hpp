// Multi-agent deep Q-learning with joint exploitation sampling and virtual
// agents: epsilon-greedy action selection on Q_a + sum Q_v, per-agent and
// per-channel replay pools, target networks, and the interleaved actual /
// virtual update loop with trunk copies.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "jointq/environment.hpp"
#include "jointq/qnet.hpp"
#include "jointq/replay.hpp"

namespace jointq {

struct TrainConfig {
  double gamma = 0.9;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double epsilon_decay_fraction = 0.3;  // of the episodes of a phase
  double learning_rate = 1e-3;
  int batch_size = 32;
  int replay_capacity = 20000;
  int target_sync_period = 500;  // gradient steps
  int episodes = 2000;           // M
  // Single-agent episodes run before the joint phase (or before the same
  // number of extra single episodes in single mode).
  int pretrain_episodes = 0;

  void validate() const;
};

// Linear from start to end over the first fraction * total episodes.
double epsilon_at(const TrainConfig& cfg, std::int64_t episode, std::int64_t total);

using StateSlots = std::vector<std::optional<AgentState>>;

// Batched forward of agent i over one set of states. Senders with a channel
// into i and a state present contribute; the rest drop out.
JointForward forward_states(const QNetParams& params, int agent, const StateSlots& states);

// Lowest action code among the maxima.
int greedy_action(const Eigen::Ref<const VectorXd>& q);

struct Selection {
  std::vector<std::optional<Action>> actions;
  std::vector<double> gates;  // receiver gate of each live agent, NaN otherwise
};

// Independently per live agent: uniform random action with probability
// epsilon, otherwise the argmax of the joint value.
Selection select_actions(const QNetParams& params, const StateSlots& states, const std::vector<bool>& live,
                         double epsilon, Rng& rng);

// Owns D^(i) for every agent and D^(j->i) for every channel.
class ReplayPools {
 public:
  ReplayPools(const QNetParams& params, std::size_t capacity);

  // Always into D^(agent); into D^(j->agent) for every sender j whose
  // snapshot is present, i.e. whose class is in the scene.
  void store(const TransitionPtr& t, int agent);

  ReplayMemory& actual(int agent) { return actual_.at(static_cast<std::size_t>(agent)); }
  const ReplayMemory& actual(int agent) const { return actual_.at(static_cast<std::size_t>(agent)); }
  ReplayMemory& channel(int index) { return channel_.at(static_cast<std::size_t>(index)); }
  const ReplayMemory& channel(int index) const { return channel_.at(static_cast<std::size_t>(index)); }
  int num_channels() const { return static_cast<int>(channel_.size()); }

  // Adds empty pools for channels created after construction; existing
  // pools are kept.
  void add_channels(const QNetParams& params);

 private:
  std::vector<ReplayMemory> actual_;
  std::vector<ReplayMemory> channel_;
  std::vector<std::pair<int, int>> routes_;  // (sender, receiver) per channel
  std::size_t capacity_ = 0;
};

// y = r if terminal, else r + gamma * max_a q_next(a).
double td_target(double reward, bool terminal, const Eigen::Ref<const VectorXd>& target_q_next, double gamma);

// Targets for a minibatch of agent i's transitions, evaluated with the
// target network on s_next and the stored peer next-states.
Eigen::RowVectorXd td_targets(const QNetParams& target, int agent, const std::vector<TransitionPtr>& batch,
                              double gamma);

// Builds the (s) or (s_next) batch of a minibatch, including sender columns.
StateBatch make_batch(const QNetParams& params, int agent, const std::vector<TransitionPtr>& batch, bool next);

// Mean squared TD error before the update; nullopt if the batch is empty.
// Updates only theta_share^(i) and theta_self^(i).
std::optional<double> train_step_actual(JointModel& model, int agent, const std::vector<TransitionPtr>& batch,
                                        const TrainConfig& cfg);

// Same objective through Q_v; updates only the channel's trunk copy and
// message layer, then copies the trunk back to the sending agent. Throws if a
// sample lacks the sender snapshot.
std::optional<double> train_step_virtual(JointModel& model, int channel, const std::vector<TransitionPtr>& batch,
                                         const TrainConfig& cfg);

struct EpisodeLog {
  std::int64_t episode = 0;
  double epsilon = 0.0;
  double mean_loss = 0.0;
  std::vector<double> total_reward;     // per agent
  std::vector<int> success;             // 1/0, -1 if the class was absent
  int steps_used = 0;
  std::vector<double> mean_gate;        // NaN if the agent never acted
  bool joint = false;                   // channels were active
};

struct TrainingLog {
  std::vector<EpisodeLog> episodes;
  std::int64_t gradient_steps = 0;
};

// Observed after every copy step; used by tests to check weight sharing.
using CopyObserver = std::function<void(const JointModel&)>;
// Observed after every stored transition.
using StoreObserver = std::function<void(const ReplayPools&)>;

struct TrainHooks {
  CopyObserver on_copy;
  StoreObserver on_store;
  std::string dump_on_failure;  // checkpoint path written on non-finite loss
};

struct RunContext {
  SceneSpec scene;
  EnvConfig env;
  TrainConfig train;
  double success_iou = 0.5;
};

class Trainer {
 public:
  Trainer(JointModel& model, const RunContext& ctx, std::uint64_t seed);

  // Runs `episodes` training episodes with the model's current channel
  // configuration; epsilon follows the schedule over this call's episodes.
  void run(std::int64_t episodes, TrainingLog& log, const TrainHooks& hooks = {});

  const ReplayPools& pools() const { return *pools_; }
  // Call after channels were added to the model.
  void sync_channel_pools();

 private:
  EpisodeLog run_episode(std::int64_t index, double epsilon, TrainingLog& log, const TrainHooks& hooks);
  void update_agent(int agent, double& loss_sum, int& loss_count, TrainingLog& log, const TrainHooks& hooks);
  void maybe_sync(TrainingLog& log);

  JointModel& model_;
  RunContext ctx_;
  Rng scene_rng_, policy_rng_, replay_rng_, noise_rng_;
  std::optional<ReplayPools> pools_;
  std::int64_t episode_counter_ = 0;
};

// Full training: optional single-agent pre-training, then the main phase.
// With joint = true the main phase runs with channels (added with random
// message weights on top of the pre-trained agents).
TrainingLog train(JointModel& model, const RunContext& ctx, bool joint, std::uint64_t seed,
                  const TrainHooks& hooks = {});

}  // namespace jointq
