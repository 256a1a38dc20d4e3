// Gated cross-connected Q-networks in virtual-agent form.
//
// Every actual agent i owns a trunk (theta_share: two affine+ReLU layers
// producing the penultimate features x^(i)), an own head producing xbar^(i)
// and a scalar gate g^(i) computed from xbar^(i) (together theta_self). Every
// ordered pair j != i has a virtual channel holding a copy of sender j's trunk
// plus the message layer m^(j->i). The joint value for agent i is
//
//   Q^(i) = g^(i) * xbar^(i) + (1 - g^(i)) * mean_j m^(j->i)
//         = Q_a^(i) + sum_j Q_v^(j->i).
//
// Senders whose state is unavailable drop out of the mean; with no sender at
// all the message mean is replaced by the head-mode neutral value.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "jointq/environment.hpp"
#include "jointq/numerics.hpp"

namespace jointq {

enum class HeadMode { kLinear, kFaithful };

std::string to_string(HeadMode mode);
HeadMode head_mode_from_string(const std::string& s);

struct NetworkConfig {
  int state_dim = 158;
  int hidden = 64;
  HeadMode head_mode = HeadMode::kLinear;

  void validate() const;
};

// Parameter names inside an AgentNetwork / VirtualChannel ParameterSet.
namespace names {
inline const std::string kTrunk0 = "trunk.0";
inline const std::string kTrunk1 = "trunk.1";
inline const std::string kHead = "head";
inline const std::string kGate = "gate";
inline const std::string kMessage = "message";
}  // namespace names

struct AgentNetwork {
  ParameterSet<double> params;  // trunk.{0,1}, head, gate

  static AgentNetwork random(const NetworkConfig& cfg, Rng& rng);
  static AgentNetwork zeros(const NetworkConfig& cfg);
};

struct VirtualChannel {
  int sender = 0;
  int receiver = 0;
  ParameterSet<double> params;  // trunk.{0,1} (copy of the sender's), message

  std::string label() const { return std::to_string(sender) + "to" + std::to_string(receiver); }
};

// One full set of weights (online or target).
struct QNetParams {
  NetworkConfig config;
  std::vector<AgentNetwork> agents;
  std::vector<VirtualChannel> channels;
  std::uint64_t generation = 0;  // bumped on every mutation

  int num_agents() const { return static_cast<int>(agents.size()); }
  // Index into channels, or -1.
  int channel_index(int sender, int receiver) const;
  std::vector<int> senders_into(int receiver) const;
  void touch() { ++generation; }
};

struct TrunkCache {
  MatrixXd input;
  MatrixXd z0, a0, z1, features;
};

// Batched trunk over the columns of states. Works for both agent and channel
// parameter sets, which share the trunk naming.
TrunkCache trunk_forward(const ParameterSet<double>& params, const MatrixXd& states);
// Accumulates trunk gradients; returns d loss / d input.
MatrixXd trunk_backward(ParameterSet<double>& params, const TrunkCache& cache, const MatrixXd& d_features);

struct HeadOutput {
  MatrixXd xbar_pre, xbar;      // 9 x B
  Eigen::RowVectorXd gate_pre;  // 1 x B
  Eigen::RowVectorXd gate;
};

HeadOutput own_head(const AgentNetwork& agent, const MatrixXd& features, HeadMode mode);
MatrixXd message(const VirtualChannel& channel, const MatrixXd& sender_features, HeadMode mode);

double neutral_message(HeadMode mode);

// Inputs for a batched joint forward of receiver i. Columns are samples.
// A sender column with mask 0 is treated as absent.
struct SenderBatch {
  int sender = 0;
  MatrixXd states;
  Eigen::RowVectorXd mask;
};

struct StateBatch {
  MatrixXd own;
  std::vector<SenderBatch> senders;

  Eigen::Index batch_size() const { return own.cols(); }
};

struct SenderCache {
  int sender = 0;
  int channel = 0;
  TrunkCache trunk;
  MatrixXd message_pre, message;
  Eigen::RowVectorXd mask;
};

struct JointForward {
  int agent = 0;
  std::uint64_t generation = 0;
  HeadMode mode = HeadMode::kLinear;
  TrunkCache own;
  HeadOutput head;
  std::vector<SenderCache> senders;
  Eigen::RowVectorXd sender_count;
  MatrixXd message_mean;  // 9 x B, neutral where sender_count == 0
  MatrixXd q;             // 9 x B

  // Decomposition used by action selection.
  MatrixXd q_actual() const;                          // g * xbar
  std::vector<MatrixXd> q_virtual() const;            // one per sender cache
};

// Senders without a channel into i are ignored.
JointForward q_forward(const QNetParams& params, int agent, const StateBatch& batch);

// Per-state convenience wrappers. q_joint needs a state for every sender with
// a channel into agent i; q_single evaluates agent i alone.
VectorXd q_joint(const QNetParams& params, int agent, const std::vector<std::optional<AgentState>>& states);
VectorXd q_single(const QNetParams& params, int agent, const AgentState& state);

// Gradient of sum_b 0.5 * td_b^2 with td_b = Q(s_b, a_b) - y_b, accumulated
// into the agent's own parameters and into every sender channel that took
// part in the forward. Throws if params changed since the forward.
void q_backward(QNetParams& params, const JointForward& forward, const std::vector<int>& actions,
                const Eigen::RowVectorXd& td_errors);

// Online weights plus target copies.
class JointModel {
 public:
  JointModel() = default;
  // with_channels = false builds independent single agents.
  JointModel(const NetworkConfig& cfg, int num_agents, bool with_channels, Rng& rng);

  QNetParams online;
  QNetParams target;

  bool has_channels() const { return !online.channels.empty(); }

  // Channel trunks with sender i := agent i's trunk.
  void copy_shared(int agent);
  // Sender trunk := channel trunk, then propagated to the sender's other channels.
  void copy_to_actual(int channel);
  void sync_target();
  void sgd_agent(int agent, double learning_rate);
  void sgd_channel(int channel, double learning_rate);
  void zero_grad();

  // Adds channels (random message layers, trunks copied from the senders) to
  // a model built without them. Used when joint training starts from
  // pre-trained single agents.
  void enable_channels(Rng& rng);
};

void copy_shared(JointModel& model, int agent);
void sync_target(JointModel& model);

}  // namespace jointq
