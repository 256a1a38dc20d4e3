#include "jointq/harness.hpp"

namespace jointq {

namespace {

std::string agent_key(int i, const std::string& name) { return "agent" + std::to_string(i) + "/" + name; }
std::string channel_key(const VirtualChannel& ch, const std::string& name) {
  return "channel" + ch.label() + "/" + name;
}

ParameterSet<double> flatten(const QNetParams& p) {
  ParameterSet<double> out;
  for (int i = 0; i < p.num_agents(); ++i)
    for (const auto& [name, v] : p.agents[static_cast<std::size_t>(i)].params.values()) out.add(agent_key(i, name), v);
  for (const auto& ch : p.channels)
    for (const auto& [name, v] : ch.params.values()) out.add(channel_key(ch, name), v);
  return out;
}

void unflatten(const ParameterSet<double>& flat, QNetParams& p) {
  for (int i = 0; i < p.num_agents(); ++i)
    for (auto& [name, v] : p.agents[static_cast<std::size_t>(i)].params.values()) v = flat.value(agent_key(i, name));
  for (auto& ch : p.channels)
    for (auto& [name, v] : ch.params.values()) v = flat.value(channel_key(ch, name));
  p.touch();
}

std::map<std::string, MatrixXd> flat_grads(const QNetParams& p) {
  std::map<std::string, MatrixXd> out;
  for (int i = 0; i < p.num_agents(); ++i)
    for (const auto& [name, g] : p.agents[static_cast<std::size_t>(i)].params.grads()) out[agent_key(i, name)] = g;
  for (const auto& ch : p.channels)
    for (const auto& [name, g] : ch.params.grads()) out[channel_key(ch, name)] = g;
  return out;
}

struct Problem {
  std::vector<StateBatch> batches;  // per receiver
  std::vector<std::vector<int>> actions;
  std::vector<Eigen::RowVectorXd> targets;
};

double joint_loss(const QNetParams& p, const Problem& prob) {
  double loss = 0.0;
  for (int i = 0; i < p.num_agents(); ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto f = q_forward(p, i, prob.batches[ui]);
    const auto bsz = static_cast<double>(f.q.cols());
    for (Eigen::Index b = 0; b < f.q.cols(); ++b) {
      const double td = f.q(prob.actions[ui][static_cast<std::size_t>(b)], b) - prob.targets[ui](b);
      loss += 0.5 * td * td / bsz;
    }
  }
  return loss;
}

// Sign pattern of every ReLU pre-activation touched by the loss.
std::vector<bool> relu_pattern(const QNetParams& p, const Problem& prob) {
  std::vector<bool> out;
  auto add = [&out](const TrunkCache& t) {
    for (const MatrixXd* z : {&t.z0, &t.z1})
      for (Eigen::Index k = 0; k < z->size(); ++k) out.push_back(z->data()[k] > 0.0);
  };
  for (int i = 0; i < p.num_agents(); ++i) {
    const auto f = q_forward(p, i, prob.batches[static_cast<std::size_t>(i)]);
    add(f.own);
    for (const auto& sc : f.senders) add(sc.trunk);
  }
  return out;
}

}  // namespace

GradCheckCase gradcheck_joint_loss(std::uint64_t seed, double epsilon) {
  Rng rng(seed);
  std::uniform_int_distribution<int> dim(3, 12), hid(2, 8), bat(1, 5), agents(2, 3);
  GradCheckCase c;
  c.seed = seed;
  c.state_dim = dim(rng);
  c.hidden = hid(rng);
  c.batch = bat(rng);
  c.mode = seed % 2 ? HeadMode::kFaithful : HeadMode::kLinear;
  const int n = agents(rng);

  NetworkConfig cfg{c.state_dim, c.hidden, c.mode};
  JointModel model(cfg, n, true, rng);
  // Independent target weights so y is not a function of the online weights.
  JointModel target_src(cfg, n, true, rng);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> act(0, kNumActions - 1);
  // Zero-initialised biases put dead-trunk columns exactly on a ReLU kink.
  auto randomize_biases = [&](ParameterSet<double>& ps) {
    for (auto& [name, v] : ps.values())
      if (name.ends_with(".bias"))
        for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = 0.1 * normal(rng);
  };
  for (auto& a : model.online.agents) randomize_biases(a.params);
  for (auto& ch : model.online.channels) randomize_biases(ch.params);
  model.online.touch();
  auto random_states = [&](Eigen::Index rows, Eigen::Index cols) {
    MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = normal(rng);
    return m;
  };

  Problem prob;
  for (int i = 0; i < n; ++i) {
    StateBatch sb;
    sb.own = random_states(c.state_dim, c.batch);
    for (int j : model.online.senders_into(i)) {
      Eigen::RowVectorXd mask = Eigen::RowVectorXd::Ones(c.batch);
      // With three agents, drop one sender from some columns to exercise the
      // partial mean.
      if (n > 2 && j == model.online.senders_into(i).back())
        for (int b = 0; b < c.batch; b += 2) mask(b) = 0.0;
      sb.senders.push_back({j, random_states(c.state_dim, c.batch), mask});
    }
    std::vector<int> a(static_cast<std::size_t>(c.batch));
    for (auto& x : a) x = act(rng);
    const auto next = q_forward(target_src.online, i, sb);
    Eigen::RowVectorXd y(c.batch);
    for (int b = 0; b < c.batch; ++b) y(b) = normal(rng) + 0.9 * next.q.col(b).maxCoeff();
    prob.batches.push_back(std::move(sb));
    prob.actions.push_back(std::move(a));
    prob.targets.push_back(std::move(y));
  }

  model.zero_grad();
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto f = q_forward(model.online, i, prob.batches[ui]);
    Eigen::RowVectorXd td(c.batch);
    for (int b = 0; b < c.batch; ++b) td(b) = f.q(prob.actions[ui][static_cast<std::size_t>(b)], b) - prob.targets[ui](b);
    q_backward(model.online, f, prob.actions[ui], td / static_cast<double>(c.batch));
  }
  const auto analytic = flat_grads(model.online);

  ParameterSet<double> flat = flatten(model.online);
  QNetParams scratch = model.online;
  const std::function<double(const ParameterSet<double>&)> loss_fn = [&](const ParameterSet<double>& p) {
    unflatten(p, scratch);
    return joint_loss(scratch, prob);
  };
  const auto estimate = finite_difference_gradient(loss_fn, flat, epsilon);

  // Central differences are meaningless for entries whose +-epsilon probe
  // flips a ReLU; those entries are left out of the comparison.
  auto checked = analytic;
  const auto base = relu_pattern(model.online, prob);
  for (auto& [name, grad] : checked) {
    MatrixXd& value = flat.value(name);
    for (Eigen::Index k = 0; k < value.size(); ++k) {
      const double saved = value.data()[k];
      bool kink = false;
      for (double sign : {1.0, -1.0}) {
        value.data()[k] = saved + sign * epsilon;
        unflatten(flat, scratch);
        kink = kink || relu_pattern(scratch, prob) != base;
      }
      value.data()[k] = saved;
      if (kink) {
        grad.data()[k] = 0.0;
        ++c.kink_entries;
      }
    }
  }
  c.result = compare_gradients(checked, estimate);
  return c;
}

}  // namespace jointq
