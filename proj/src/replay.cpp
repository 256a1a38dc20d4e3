#include "jointq/replay.hpp"

#include "jointq/numerics.hpp"

namespace jointq {

ReplayMemory::ReplayMemory(std::size_t capacity) : buffer_(capacity) {
  if (capacity == 0) throw ShapeError("ReplayMemory: capacity must be positive");
}

void ReplayMemory::push(TransitionPtr t) {
  buffer_[next_] = std::move(t);
  next_ = (next_ + 1) % buffer_.size();
  if (size_ < buffer_.size()) ++size_;
}

const Transition& ReplayMemory::at(std::size_t i) const {
  if (i >= size_) throw ShapeError("ReplayMemory::at: index out of range");
  const std::size_t oldest = (next_ + buffer_.size() - size_) % buffer_.size();
  return *buffer_[(oldest + i) % buffer_.size()];
}

std::vector<TransitionPtr> ReplayMemory::sample(std::size_t n, Rng& rng) const {
  std::vector<TransitionPtr> out;
  if (size_ == 0) return out;
  out.reserve(n);
  const std::size_t oldest = (next_ + buffer_.size() - size_) % buffer_.size();
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  for (std::size_t k = 0; k < n; ++k) out.push_back(buffer_[(oldest + pick(rng)) % buffer_.size()]);
  return out;
}

}  // namespace jointq
