// Transitions and bounded FIFO replay pools.
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "jointq/environment.hpp"

namespace jointq {

using StatePtr = std::shared_ptr<const AgentState>;

struct Transition {
  StatePtr s;
  int action = 0;
  double reward = 0.0;
  StatePtr s_next;
  bool terminal = false;
  // Sender snapshots at t and t+1, keyed by agent index. Only senders whose
  // class is in the scene appear.
  std::map<int, StatePtr> peer_states;
  std::map<int, StatePtr> peer_next_states;
  // Provenance: the scene contained every class.
  bool both_class = false;
  std::int64_t episode = 0;
};

using TransitionPtr = std::shared_ptr<const Transition>;

class ReplayMemory {
 public:
  explicit ReplayMemory(std::size_t capacity = 20000);

  void push(TransitionPtr t);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return buffer_.size(); }
  bool empty() const { return size_ == 0; }
  // i = 0 is the oldest stored transition.
  const Transition& at(std::size_t i) const;
  // Uniform with replacement.
  std::vector<TransitionPtr> sample(std::size_t n, Rng& rng) const;

 private:
  std::vector<TransitionPtr> buffer_;
  std::size_t next_ = 0;  // slot for the next push
  std::size_t size_ = 0;
};

}  // namespace jointq
