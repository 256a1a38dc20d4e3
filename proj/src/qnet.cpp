#include "jointq/qnet.hpp"

#include <algorithm>
#include <stdexcept>

namespace jointq {

std::string to_string(HeadMode mode) { return mode == HeadMode::kLinear ? "linear" : "faithful"; }

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "linear") return HeadMode::kLinear;
  if (s == "faithful") return HeadMode::kFaithful;
  throw std::invalid_argument("head_mode: expected 'linear' or 'faithful', got '" + s + "'");
}

void NetworkConfig::validate() const {
  if (state_dim < 1) throw std::invalid_argument("state_dim: must be >= 1");
  if (hidden < 1) throw std::invalid_argument("hidden: must be >= 1");
}

namespace {

void add_trunk(ParameterSet<double>& p, const NetworkConfig& cfg, Rng* rng) {
  if (rng) {
    p.add(names::kTrunk0, AffineLayer<double>::glorot(cfg.state_dim, cfg.hidden, *rng));
    p.add(names::kTrunk1, AffineLayer<double>::glorot(cfg.hidden, cfg.hidden, *rng));
  } else {
    p.add(names::kTrunk0, AffineLayer<double>::zeros(cfg.state_dim, cfg.hidden));
    p.add(names::kTrunk1, AffineLayer<double>::zeros(cfg.hidden, cfg.hidden));
  }
}

const std::string kTrunkTensors[] = {"trunk.0.weight", "trunk.0.bias", "trunk.1.weight", "trunk.1.bias"};

void copy_trunk(const ParameterSet<double>& from, ParameterSet<double>& to) {
  for (const auto& name : kTrunkTensors) to.value(name) = from.value(name);
}

MatrixXd apply_head(const MatrixXd& pre, HeadMode mode) {
  return mode == HeadMode::kFaithful ? sigmoid_forward(pre) : pre;
}

MatrixXd head_backward(const MatrixXd& post, const MatrixXd& upstream, HeadMode mode) {
  return mode == HeadMode::kFaithful ? sigmoid_backward(post, upstream) : upstream;
}

}  // namespace

AgentNetwork AgentNetwork::random(const NetworkConfig& cfg, Rng& rng) {
  cfg.validate();
  AgentNetwork a;
  add_trunk(a.params, cfg, &rng);
  a.params.add(names::kHead, AffineLayer<double>::glorot(cfg.hidden, kNumActions, rng));
  a.params.add(names::kGate, AffineLayer<double>::glorot(kNumActions, 1, rng));
  return a;
}

AgentNetwork AgentNetwork::zeros(const NetworkConfig& cfg) {
  cfg.validate();
  AgentNetwork a;
  add_trunk(a.params, cfg, nullptr);
  a.params.add(names::kHead, AffineLayer<double>::zeros(cfg.hidden, kNumActions));
  a.params.add(names::kGate, AffineLayer<double>::zeros(kNumActions, 1));
  return a;
}

int QNetParams::channel_index(int sender, int receiver) const {
  for (std::size_t c = 0; c < channels.size(); ++c)
    if (channels[c].sender == sender && channels[c].receiver == receiver) return static_cast<int>(c);
  return -1;
}

std::vector<int> QNetParams::senders_into(int receiver) const {
  std::vector<int> out;
  for (const auto& ch : channels)
    if (ch.receiver == receiver) out.push_back(ch.sender);
  std::sort(out.begin(), out.end());
  return out;
}

TrunkCache trunk_forward(const ParameterSet<double>& params, const MatrixXd& states) {
  TrunkCache c;
  c.input = states;
  c.z0 = affine_forward(params.layer(names::kTrunk0), states);
  c.a0 = relu_forward(c.z0);
  c.z1 = affine_forward(params.layer(names::kTrunk1), c.a0);
  c.features = relu_forward(c.z1);
  return c;
}

MatrixXd trunk_backward(ParameterSet<double>& params, const TrunkCache& cache, const MatrixXd& d_features) {
  const MatrixXd dz1 = relu_backward(cache.z1, d_features);
  auto g1 = affine_backward(params.layer(names::kTrunk1), cache.a0, dz1);
  params.accumulate(names::kTrunk1, g1);
  const MatrixXd dz0 = relu_backward(cache.z0, g1.grad_x);
  auto g0 = affine_backward(params.layer(names::kTrunk0), cache.input, dz0);
  params.accumulate(names::kTrunk0, g0);
  return std::move(g0.grad_x);
}

HeadOutput own_head(const AgentNetwork& agent, const MatrixXd& features, HeadMode mode) {
  HeadOutput out;
  out.xbar_pre = affine_forward(agent.params.layer(names::kHead), features);
  out.xbar = apply_head(out.xbar_pre, mode);
  out.gate_pre = affine_forward(agent.params.layer(names::kGate), out.xbar);
  out.gate = sigmoid_forward(out.gate_pre);
  return out;
}

MatrixXd message(const VirtualChannel& channel, const MatrixXd& sender_features, HeadMode mode) {
  return apply_head(affine_forward(channel.params.layer(names::kMessage), sender_features), mode);
}

double neutral_message(HeadMode mode) { return mode == HeadMode::kFaithful ? 0.5 : 0.0; }

MatrixXd JointForward::q_actual() const { return head.xbar.array().rowwise() * head.gate.array(); }

std::vector<MatrixXd> JointForward::q_virtual() const {
  std::vector<MatrixXd> out;
  const Eigen::RowVectorXd denom = sender_count.cwiseMax(1.0);
  const Eigen::RowVectorXd weight = (1.0 - head.gate.array()) / denom.array();
  for (const auto& s : senders) {
    MatrixXd v = s.message.array().rowwise() * (weight.array() * s.mask.array());
    out.push_back(std::move(v));
  }
  if (senders.empty() || (sender_count.array() == 0.0).any()) {
    // Columns without any sender carry the neutral substitute; fold it into
    // an extra term so that q_actual + sum(q_virtual) == q.
    MatrixXd v = MatrixXd::Zero(q.rows(), q.cols());
    for (Eigen::Index b = 0; b < q.cols(); ++b)
      if (sender_count(b) == 0.0) v.col(b).setConstant((1.0 - head.gate(b)) * neutral_message(mode));
    out.push_back(std::move(v));
  }
  return out;
}

JointForward q_forward(const QNetParams& params, int agent, const StateBatch& batch) {
  if (agent < 0 || agent >= params.num_agents()) throw ShapeError("q_forward: agent index out of range");
  const Eigen::Index bsz = batch.batch_size();
  if (batch.own.rows() != params.config.state_dim)
    throw ShapeError("q_forward: state length " + std::to_string(batch.own.rows()) + " != " +
                     std::to_string(params.config.state_dim));

  JointForward f;
  f.agent = agent;
  f.generation = params.generation;
  f.mode = params.config.head_mode;
  const auto& net = params.agents[static_cast<std::size_t>(agent)];
  f.own = trunk_forward(net.params, batch.own);
  f.head = own_head(net, f.own.features, f.mode);

  f.sender_count = Eigen::RowVectorXd::Zero(bsz);
  MatrixXd sum = MatrixXd::Zero(kNumActions, bsz);
  for (const auto& sb : batch.senders) {
    const int ch = params.channel_index(sb.sender, agent);
    if (ch < 0) continue;
    if (sb.states.cols() != bsz || sb.mask.size() != bsz)
      throw ShapeError("q_forward: sender batch size mismatch");
    SenderCache sc;
    sc.sender = sb.sender;
    sc.channel = ch;
    sc.mask = sb.mask;
    sc.trunk = trunk_forward(params.channels[static_cast<std::size_t>(ch)].params, sb.states);
    sc.message_pre = affine_forward(params.channels[static_cast<std::size_t>(ch)].params.layer(names::kMessage),
                                    sc.trunk.features);
    sc.message = apply_head(sc.message_pre, f.mode);
    sum += (sc.message.array().rowwise() * sc.mask.array()).matrix();
    f.sender_count += sc.mask;
    f.senders.push_back(std::move(sc));
  }
  f.message_mean.resize(kNumActions, bsz);
  for (Eigen::Index b = 0; b < bsz; ++b) {
    if (f.sender_count(b) > 0.0)
      f.message_mean.col(b) = sum.col(b) / f.sender_count(b);
    else
      f.message_mean.col(b).setConstant(neutral_message(f.mode));
  }
  f.q = f.head.xbar.array().rowwise() * f.head.gate.array() +
        f.message_mean.array().rowwise() * (1.0 - f.head.gate.array());
  return f;
}

namespace {

StateBatch single_column(const QNetParams& params, int agent, const std::vector<std::optional<AgentState>>& states,
                         bool require_senders) {
  if (static_cast<int>(states.size()) != params.num_agents())
    throw ShapeError("q_joint: expected one state slot per agent");
  const auto& own = states[static_cast<std::size_t>(agent)];
  if (!own) throw ShapeError("q_joint: missing state for agent " + std::to_string(agent));
  StateBatch batch;
  batch.own = own->vector();
  for (int j : params.senders_into(agent)) {
    const auto& s = states[static_cast<std::size_t>(j)];
    if (!s) {
      if (require_senders) throw ShapeError("q_joint: missing state for sender " + std::to_string(j));
      continue;
    }
    batch.senders.push_back({j, s->vector(), Eigen::RowVectorXd::Ones(1)});
  }
  return batch;
}

}  // namespace

VectorXd q_joint(const QNetParams& params, int agent, const std::vector<std::optional<AgentState>>& states) {
  return q_forward(params, agent, single_column(params, agent, states, true)).q.col(0);
}

VectorXd q_single(const QNetParams& params, int agent, const AgentState& state) {
  StateBatch batch;
  batch.own = state.vector();
  return q_forward(params, agent, batch).q.col(0);
}

void q_backward(QNetParams& params, const JointForward& f, const std::vector<int>& actions,
                const Eigen::RowVectorXd& td_errors) {
  if (f.generation != params.generation) throw ShapeError("q_backward: stale forward cache");
  const Eigen::Index bsz = f.q.cols();
  if (static_cast<Eigen::Index>(actions.size()) != bsz || td_errors.size() != bsz)
    throw ShapeError("q_backward: actions/td_errors must match batch size");

  MatrixXd dq = MatrixXd::Zero(kNumActions, bsz);
  for (Eigen::Index b = 0; b < bsz; ++b) {
    const int a = actions[static_cast<std::size_t>(b)];
    if (a < 0 || a >= kNumActions) throw ShapeError("q_backward: action code out of range");
    dq(a, b) = td_errors(b);
  }

  auto& net = params.agents[static_cast<std::size_t>(f.agent)];
  const auto& g = f.head.gate;

  // Q = g * xbar + (1 - g) * mbar
  MatrixXd d_xbar = dq.array().rowwise() * g.array();
  const Eigen::RowVectorXd d_gate = (dq.array() * (f.head.xbar - f.message_mean).array()).colwise().sum();
  const MatrixXd d_gate_pre = sigmoid_backward(g, d_gate);
  auto gg = affine_backward(net.params.layer(names::kGate), f.head.xbar, d_gate_pre);
  net.params.accumulate(names::kGate, gg);
  d_xbar += gg.grad_x;

  const MatrixXd d_xbar_pre = head_backward(f.head.xbar, d_xbar, f.mode);
  auto gh = affine_backward(net.params.layer(names::kHead), f.own.features, d_xbar_pre);
  net.params.accumulate(names::kHead, gh);
  trunk_backward(net.params, f.own, gh.grad_x);

  const Eigen::RowVectorXd one_minus_g = 1.0 - g.array();
  for (const auto& sc : f.senders) {
    auto& ch = params.channels[static_cast<std::size_t>(sc.channel)];
    Eigen::RowVectorXd w(bsz);
    for (Eigen::Index b = 0; b < bsz; ++b)
      w(b) = f.sender_count(b) > 0.0 ? one_minus_g(b) * sc.mask(b) / f.sender_count(b) : 0.0;
    const MatrixXd d_m = dq.array().rowwise() * w.array();
    const MatrixXd d_m_pre = head_backward(sc.message, d_m, f.mode);
    auto gm = affine_backward(ch.params.layer(names::kMessage), sc.trunk.features, d_m_pre);
    ch.params.accumulate(names::kMessage, gm);
    trunk_backward(ch.params, sc.trunk, gm.grad_x);
  }
}

JointModel::JointModel(const NetworkConfig& cfg, int num_agents, bool with_channels, Rng& rng) {
  cfg.validate();
  if (num_agents < 1) throw ShapeError("JointModel: need at least one agent");
  online.config = cfg;
  for (int i = 0; i < num_agents; ++i) online.agents.push_back(AgentNetwork::random(cfg, rng));
  target = online;
  if (with_channels) enable_channels(rng);
}

void JointModel::enable_channels(Rng& rng) {
  if (has_channels()) return;
  const auto& cfg = online.config;
  for (int i = 0; i < online.num_agents(); ++i) {
    for (int j = 0; j < online.num_agents(); ++j) {
      if (j == i) continue;
      VirtualChannel ch;
      ch.sender = j;
      ch.receiver = i;
      add_trunk(ch.params, cfg, nullptr);
      copy_trunk(online.agents[static_cast<std::size_t>(j)].params, ch.params);
      ch.params.add(names::kMessage, AffineLayer<double>::glorot(cfg.hidden, kNumActions, rng));
      online.channels.push_back(std::move(ch));
    }
  }
  online.touch();
  sync_target();
}

void JointModel::copy_shared(int agent) {
  const auto& src = online.agents.at(static_cast<std::size_t>(agent)).params;
  for (auto& ch : online.channels)
    if (ch.sender == agent) copy_trunk(src, ch.params);
  online.touch();
}

void JointModel::copy_to_actual(int channel) {
  const auto& ch = online.channels.at(static_cast<std::size_t>(channel));
  copy_trunk(ch.params, online.agents.at(static_cast<std::size_t>(ch.sender)).params);
  copy_shared(ch.sender);
}

void JointModel::sync_target() {
  const auto gen = target.generation;
  target = online;
  target.generation = gen + 1;
}

void JointModel::sgd_agent(int agent, double learning_rate) {
  sgd_step(online.agents.at(static_cast<std::size_t>(agent)).params, learning_rate);
  online.touch();
}

void JointModel::sgd_channel(int channel, double learning_rate) {
  sgd_step(online.channels.at(static_cast<std::size_t>(channel)).params, learning_rate);
  online.touch();
}

void JointModel::zero_grad() {
  for (auto& a : online.agents) a.params.zero_grad();
  for (auto& c : online.channels) c.params.zero_grad();
}

void copy_shared(JointModel& model, int agent) { model.copy_shared(agent); }
void sync_target(JointModel& model) { model.sync_target(); }

}  // namespace jointq
