// Binary checkpoints of a JointModel.
//
// Layout: a text header
//   jointq-checkpoint 1
//   head_mode <linear|faithful>
//   state_dim <int>
//   hidden <int>
//   agents <int>
//   channels <0|1>
//   config <single-line JSON of the run configuration>
//   tensors <count>
//   <name> <rows> <cols>      (one line per tensor, lexicographic by name)
//   end
// followed by the tensor values in header order, column-major, as raw
// little-endian IEEE-754 doubles.
#pragma once

#include <stdexcept>
#include <string>

#include "jointq/qnet.hpp"

namespace jointq {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LoadedCheckpoint {
  JointModel model;
  std::string config_json;
};

void save_checkpoint(const JointModel& model, const std::string& path, const std::string& config_json);

// Rebuilds the model described by the header.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Loads into an existing model; every tensor name and shape must match.
void load_checkpoint_into(JointModel& model, const std::string& path);

}  // namespace jointq
