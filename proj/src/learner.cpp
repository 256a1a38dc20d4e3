#include "jointq/learner.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "jointq/checkpoint.hpp"

namespace jointq {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* field, const char* what) {
    if (!ok) throw std::invalid_argument(std::string(field) + ": " + what);
  };
  require(gamma >= 0.0 && gamma <= 1.0, "gamma", "must lie in [0, 1]");
  require(epsilon_start >= 0.0 && epsilon_start <= 1.0, "epsilon_start", "must lie in [0, 1]");
  require(epsilon_end >= 0.0 && epsilon_end <= epsilon_start, "epsilon_end", "must lie in [0, epsilon_start]");
  require(epsilon_decay_fraction > 0.0 && epsilon_decay_fraction <= 1.0, "epsilon_decay_fraction",
          "must lie in (0, 1]");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate", "must be > 0");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(replay_capacity >= 1, "replay_capacity", "must be >= 1");
  require(target_sync_period >= 1, "target_sync_period", "must be >= 1");
  require(episodes >= 0, "episodes", "must be >= 0");
  require(pretrain_episodes >= 0, "pretrain_episodes", "must be >= 0");
}

double epsilon_at(const TrainConfig& cfg, std::int64_t episode, std::int64_t total) {
  const double horizon = cfg.epsilon_decay_fraction * static_cast<double>(total);
  if (horizon <= 0.0 || static_cast<double>(episode) >= horizon) return cfg.epsilon_end;
  const double frac = static_cast<double>(episode) / horizon;
  return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
}

JointForward forward_states(const QNetParams& params, int agent, const StateSlots& states) {
  const auto& own = states.at(static_cast<std::size_t>(agent));
  if (!own) throw ShapeError("forward_states: no state for agent " + std::to_string(agent));
  StateBatch batch;
  batch.own = own->vector();
  for (int j : params.senders_into(agent)) {
    const auto& s = states.at(static_cast<std::size_t>(j));
    if (s) batch.senders.push_back({j, s->vector(), Eigen::RowVectorXd::Ones(1)});
  }
  return q_forward(params, agent, batch);
}

int greedy_action(const Eigen::Ref<const VectorXd>& q) {
  int best = 0;
  for (int a = 1; a < q.size(); ++a)
    if (q(a) > q(best)) best = a;
  return best;
}

Selection select_actions(const QNetParams& params, const StateSlots& states, const std::vector<bool>& live,
                         double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ShapeError("select_actions: epsilon must lie in [0, 1]");
  const auto n = static_cast<std::size_t>(params.num_agents());
  if (states.size() != n || live.size() != n) throw ShapeError("select_actions: one slot per agent");
  Selection sel;
  sel.actions.resize(n);
  sel.gates.assign(n, std::numeric_limits<double>::quiet_NaN());
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int> any_action(0, kNumActions - 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!live[i]) continue;
    const auto f = forward_states(params, static_cast<int>(i), states);
    sel.gates[i] = f.head.gate(0);
    if (coin(rng) < epsilon)
      sel.actions[i] = action_from_code(any_action(rng));
    else
      sel.actions[i] = action_from_code(greedy_action(f.q.col(0)));
  }
  return sel;
}

ReplayPools::ReplayPools(const QNetParams& params, std::size_t capacity) : capacity_(capacity) {
  for (int i = 0; i < params.num_agents(); ++i) actual_.emplace_back(capacity);
  add_channels(params);
}

void ReplayPools::add_channels(const QNetParams& params) {
  for (std::size_t c = channel_.size(); c < params.channels.size(); ++c) {
    channel_.emplace_back(capacity_);
    routes_.emplace_back(params.channels[c].sender, params.channels[c].receiver);
  }
}

void ReplayPools::store(const TransitionPtr& t, int agent) {
  actual(agent).push(t);
  for (std::size_t c = 0; c < routes_.size(); ++c) {
    const auto [sender, receiver] = routes_[c];
    if (receiver == agent && t->peer_states.count(sender) && t->peer_next_states.count(sender))
      channel_[c].push(t);
  }
}

double td_target(double reward, bool terminal, const Eigen::Ref<const VectorXd>& target_q_next, double gamma) {
  if (terminal || gamma == 0.0) return reward;
  return reward + gamma * target_q_next.maxCoeff();
}

StateBatch make_batch(const QNetParams& params, int agent, const std::vector<TransitionPtr>& batch, bool next) {
  const auto bsz = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index dim = params.config.state_dim;
  StateBatch out;
  out.own.resize(dim, bsz);
  for (Eigen::Index b = 0; b < bsz; ++b) {
    const auto& t = *batch[static_cast<std::size_t>(b)];
    const auto& s = next ? t.s_next : t.s;
    if (s->size() != dim) throw ShapeError("make_batch: state length mismatch");
    s->write_to(out.own.col(b));
  }
  for (int j : params.senders_into(agent)) {
    SenderBatch sb;
    sb.sender = j;
    sb.states = MatrixXd::Zero(dim, bsz);
    sb.mask = Eigen::RowVectorXd::Zero(bsz);
    for (Eigen::Index b = 0; b < bsz; ++b) {
      const auto& t = *batch[static_cast<std::size_t>(b)];
      const auto& peers = next ? t.peer_next_states : t.peer_states;
      auto it = peers.find(j);
      if (it == peers.end()) continue;
      it->second->write_to(sb.states.col(b));
      sb.mask(b) = 1.0;
    }
    if (sb.mask.sum() > 0.0) out.senders.push_back(std::move(sb));
  }
  return out;
}

Eigen::RowVectorXd td_targets(const QNetParams& target, int agent, const std::vector<TransitionPtr>& batch,
                              double gamma) {
  const auto bsz = static_cast<Eigen::Index>(batch.size());
  Eigen::RowVectorXd y(bsz);
  bool any_live = false;
  for (const auto& t : batch) any_live = any_live || !t->terminal;
  MatrixXd q_next;
  if (any_live && gamma > 0.0) q_next = q_forward(target, agent, make_batch(target, agent, batch, true)).q;
  for (Eigen::Index b = 0; b < bsz; ++b) {
    const auto& t = *batch[static_cast<std::size_t>(b)];
    y(b) = (t.terminal || q_next.size() == 0) ? t.reward : td_target(t.reward, false, q_next.col(b), gamma);
  }
  return y;
}

namespace {

std::vector<int> actions_of(const std::vector<TransitionPtr>& batch) {
  std::vector<int> a;
  a.reserve(batch.size());
  for (const auto& t : batch) a.push_back(t->action);
  return a;
}

// Forward + backward of the receiver's squared TD loss; returns the mean
// squared TD error. Gradients are those of 0.5 * mean(td^2).
double accumulate_td_gradients(JointModel& model, int agent, const std::vector<TransitionPtr>& batch,
                               const TrainConfig& cfg) {
  const Eigen::RowVectorXd y = td_targets(model.target, agent, batch, cfg.gamma);
  const auto f = q_forward(model.online, agent, make_batch(model.online, agent, batch, false));
  const auto actions = actions_of(batch);
  const auto bsz = static_cast<Eigen::Index>(batch.size());
  Eigen::RowVectorXd td(bsz);
  for (Eigen::Index b = 0; b < bsz; ++b) td(b) = f.q(actions[static_cast<std::size_t>(b)], b) - y(b);
  const double loss = td.squaredNorm() / static_cast<double>(bsz);
  if (!std::isfinite(loss)) throw NumericError("non-finite TD loss for agent " + std::to_string(agent));
  model.zero_grad();
  q_backward(model.online, f, actions, td / static_cast<double>(bsz));
  return loss;
}

}  // namespace

std::optional<double> train_step_actual(JointModel& model, int agent, const std::vector<TransitionPtr>& batch,
                                        const TrainConfig& cfg) {
  if (batch.empty()) return std::nullopt;
  const double loss = accumulate_td_gradients(model, agent, batch, cfg);
  model.sgd_agent(agent, cfg.learning_rate);
  model.zero_grad();
  return loss;
}

std::optional<double> train_step_virtual(JointModel& model, int channel, const std::vector<TransitionPtr>& batch,
                                         const TrainConfig& cfg) {
  if (batch.empty()) return std::nullopt;
  const auto& ch = model.online.channels.at(static_cast<std::size_t>(channel));
  const int sender = ch.sender;
  const int receiver = ch.receiver;
  for (const auto& t : batch)
    if (!t->peer_states.count(sender) || !t->peer_next_states.count(sender))
      throw ShapeError("train_step_virtual: sample without snapshot of sender " + std::to_string(sender));
  const double loss = accumulate_td_gradients(model, receiver, batch, cfg);
  model.sgd_channel(channel, cfg.learning_rate);
  model.zero_grad();
  model.copy_to_actual(channel);
  return loss;
}

Trainer::Trainer(JointModel& model, const RunContext& ctx, std::uint64_t seed) : model_(model), ctx_(ctx) {
  ctx_.scene.validate();
  ctx_.env.validate();
  ctx_.train.validate();
  if (ctx_.scene.num_classes != model_.online.num_agents())
    throw ShapeError("Trainer: one agent per scene class required");
  if (ctx_.env.observation.state_size() != model_.online.config.state_dim)
    throw ShapeError("Trainer: observation config does not match network state_dim");
  Rng master(seed);
  scene_rng_.seed(master());
  policy_rng_.seed(master());
  replay_rng_.seed(master());
  noise_rng_.seed(master());
  pools_.emplace(model_.online, static_cast<std::size_t>(ctx_.train.replay_capacity));
}

void Trainer::sync_channel_pools() { pools_->add_channels(model_.online); }

void Trainer::maybe_sync(TrainingLog& log) {
  ++log.gradient_steps;
  if (log.gradient_steps % ctx_.train.target_sync_period == 0) model_.sync_target();
}

void Trainer::update_agent(int agent, double& loss_sum, int& loss_count, TrainingLog& log,
                           const TrainHooks& hooks) {
  const auto bsz = static_cast<std::size_t>(ctx_.train.batch_size);
  auto& own_pool = pools_->actual(agent);
  if (own_pool.empty()) return;
  const auto loss = train_step_actual(model_, agent, own_pool.sample(bsz, replay_rng_), ctx_.train);
  if (loss) {
    loss_sum += *loss;
    ++loss_count;
    maybe_sync(log);
  }
  if (!model_.has_channels()) return;
  model_.copy_shared(agent);
  if (hooks.on_copy) hooks.on_copy(model_);
  for (int c = 0; c < pools_->num_channels(); ++c) {
    if (model_.online.channels[static_cast<std::size_t>(c)].receiver != agent) continue;
    auto& pool = pools_->channel(c);
    if (pool.empty()) continue;
    if (train_step_virtual(model_, c, pool.sample(bsz, replay_rng_), ctx_.train)) maybe_sync(log);
    if (hooks.on_copy) hooks.on_copy(model_);
  }
}

EpisodeLog Trainer::run_episode(std::int64_t index, double epsilon, TrainingLog& log, const TrainHooks& hooks) {
  const int n = model_.online.num_agents();
  Scene scene = generate_scene(ctx_.scene, scene_rng_);
  EpisodeState ep(std::move(scene), ctx_.env, ctx_.scene.pixel_noise_std, Rng(noise_rng_()));
  const bool both = ep.scene().has_all_classes();

  EpisodeLog entry;
  entry.episode = index;
  entry.epsilon = epsilon;
  entry.joint = model_.has_channels();
  entry.total_reward.assign(static_cast<std::size_t>(n), 0.0);
  entry.success.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> gate_sum(static_cast<std::size_t>(n), 0.0);
  std::vector<int> gate_count(static_cast<std::size_t>(n), 0);
  double loss_sum = 0.0;
  int loss_count = 0;

  while (!ep.all_done()) {
    StateSlots states(static_cast<std::size_t>(n));
    std::vector<bool> live(static_cast<std::size_t>(n));
    std::vector<StatePtr> now(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const auto& slot = ep.agent(i);
      live[static_cast<std::size_t>(i)] = !slot.done;
      if (slot.state) {
        states[static_cast<std::size_t>(i)] = slot.state;
        now[static_cast<std::size_t>(i)] = std::make_shared<const AgentState>(*slot.state);
      }
    }
    const auto sel = select_actions(model_.online, states, live, epsilon, policy_rng_);
    const auto result = ep.step(sel.actions);

    std::vector<StatePtr> next(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      if (result.states[static_cast<std::size_t>(i)])
        next[static_cast<std::size_t>(i)] = std::make_shared<const AgentState>(*result.states[static_cast<std::size_t>(i)]);

    for (int i = 0; i < n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (!sel.actions[ui]) continue;
      gate_sum[ui] += sel.gates[ui];
      ++gate_count[ui];
      auto t = std::make_shared<Transition>();
      t->s = now[ui];
      t->action = code(*sel.actions[ui]);
      t->reward = result.rewards[ui];
      t->s_next = next[ui];
      t->terminal = result.done[ui];
      t->both_class = both;
      t->episode = index;
      for (int j = 0; j < n; ++j) {
        if (j == i || !now[static_cast<std::size_t>(j)]) continue;
        t->peer_states[j] = now[static_cast<std::size_t>(j)];
        t->peer_next_states[j] = next[static_cast<std::size_t>(j)];
      }
      entry.total_reward[ui] += t->reward;
      pools_->store(t, i);
      if (hooks.on_store) hooks.on_store(*pools_);
    }

    for (int i = 0; i < n; ++i) {
      if (!ep.agent(i).present) continue;
      update_agent(i, loss_sum, loss_count, log, hooks);
    }
  }

  entry.steps_used = ep.step_count();
  entry.mean_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
  entry.mean_gate.assign(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (gate_count[ui] > 0) entry.mean_gate[ui] = gate_sum[ui] / gate_count[ui];
    const auto& slot = ep.agent(i);
    if (!slot.present) continue;
    entry.success[ui] = (slot.triggered && iou(slot.box, ep.ground_truth(i)) >= ctx_.success_iou) ? 1 : 0;
  }
  return entry;
}

void Trainer::run(std::int64_t episodes, TrainingLog& log, const TrainHooks& hooks) {
  for (std::int64_t e = 0; e < episodes; ++e) {
    const double eps = epsilon_at(ctx_.train, e, episodes);
    try {
      log.episodes.push_back(run_episode(episode_counter_++, eps, log, hooks));
    } catch (const NumericError&) {
      if (!hooks.dump_on_failure.empty()) save_checkpoint(model_, hooks.dump_on_failure, "{}");
      throw;
    }
  }
}

TrainingLog train(JointModel& model, const RunContext& ctx, bool joint, std::uint64_t seed,
                  const TrainHooks& hooks) {
  TrainingLog log;
  Trainer trainer(model, ctx, seed);
  if (ctx.train.pretrain_episodes > 0) {
    if (model.has_channels()) throw ShapeError("train: pre-training expects a model without channels");
    trainer.run(ctx.train.pretrain_episodes, log, hooks);
  }
  if (joint && !model.has_channels()) {
    Rng channel_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    model.enable_channels(channel_rng);
    trainer.sync_channel_pools();
  }
  trainer.run(ctx.train.episodes, log, hooks);
  return log;
}

}  // namespace jointq
