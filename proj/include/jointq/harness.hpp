// Run configuration, evaluation metrics, CSV artifacts and the experiment
// driver behind the command-line tool.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "jointq/checkpoint.hpp"
#include "jointq/environment.hpp"
#include "jointq/learner.hpp"
#include "jointq/qnet.hpp"

namespace jointq {

// Configuration problem; the message starts with the offending field name.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem problem; the message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RunMode { kSingle, kJoint };

std::string to_string(RunMode mode);

struct EvalConfig {
  int episodes = 500;
  double iou_threshold = 0.5;
  std::uint64_t seed = 7;
  int trajectory_episodes = 5;  // episodes dumped to trajectories.csv
};

struct RunConfig {
  SceneSpec scene;
  EnvConfig env;  // includes the observation config
  NetworkConfig network;  // state_dim is derived from the observation config
  TrainConfig train;
  EvalConfig eval;
  RunMode mode = RunMode::kJoint;
  std::uint64_t rng_seed = 1;
  std::string output_dir = "runs/default";

  RunContext context() const;
};

// Parses a JSON document with sections scene, observation, environment,
// network, train, eval and the scalars mode, rng_seed, output_dir. Missing
// fields take defaults; unknown keys, wrong types and constraint violations
// raise ConfigError naming the field.
RunConfig config_from_json_text(const std::string& text);
RunConfig load_config(const std::string& path);
// Fully resolved configuration as pretty JSON (compact = single line).
std::string config_to_json(const RunConfig& cfg, bool compact = false);
void validate(RunConfig& cfg);

struct EvalReport {
  int episodes = 0;
  int max_steps = 0;
  double iou_threshold = 0.5;
  std::vector<int> class_episodes;                 // episodes in which the class was present
  std::vector<double> accuracy;                    // trigger at IoU >= threshold
  std::vector<std::vector<double>> recall_at_k;    // [class][k-1], k = 1..max_steps
  std::vector<std::vector<int>> steps_histogram;   // [class][steps-1] for successful triggers
  std::vector<std::vector<double>> gate_trace;     // [class][t] mean receiver gate, NaN if unused
  std::vector<double> median_steps;                // of successful triggers, NaN if none
};

// Greedy rollouts of a frozen model. Trajectory records for the first
// trajectory_episodes episodes are appended to trajectories when non-null.
EvalReport evaluate(const JointModel& model, const SceneSpec& spec, const EnvConfig& env, int n_episodes,
                    double iou_threshold, std::uint64_t seed, std::vector<TrajectoryRecord>* trajectories = nullptr,
                    int trajectory_episodes = 0);

// Probability that the initial full-scene box already reaches the IoU
// threshold for a target of the given size range, by numerical integration
// over independent uniform width and height.
double full_scene_hit_probability(const Range& size_range, double iou_threshold);

// ---------------------------------------------------------------------------
// CSV artifacts

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
  double number(std::size_t row, const std::string& name) const;
};

std::string format_number(double v);
CsvTable read_csv(const std::filesystem::path& path);
CsvTable parse_csv(const std::string& text);
std::string to_csv(const CsvTable& table);
void write_csv(const std::filesystem::path& path, const CsvTable& table);

CsvTable training_log_table(const TrainingLog& log, int num_agents);
CsvTable trajectory_table(const std::vector<TrajectoryRecord>& records);
CsvTable eval_report_table(const EvalReport& report);
EvalReport eval_report_from_table(const CsvTable& table);

struct ComparisonRow {
  int class_id = 0;
  double single_accuracy = 0.0;
  double joint_accuracy = 0.0;
  double delta() const { return joint_accuracy - single_accuracy; }
};

std::vector<ComparisonRow> compare_reports(const EvalReport& single, const EvalReport& joint);
CsvTable comparison_table(const std::vector<ComparisonRow>& rows);
// k, class, single, joint recall columns.
CsvTable recall_comparison_table(const EvalReport& single, const EvalReport& joint);

// ---------------------------------------------------------------------------
// Experiment driver

struct ExperimentResult {
  std::filesystem::path output_dir;
  TrainingLog log;
  EvalReport report;
};

// Trains per the config and writes checkpoint.bin, train_log.csv,
// trajectories.csv, eval_report.csv, resolved_config.json and manifest.txt.
ExperimentResult run_experiment(const RunConfig& cfg);

// Builds a fresh model for the config (no channels; train adds them in
// joint mode).
JointModel make_model(const RunConfig& cfg);

std::string version_string();

// Keeps freed buffers in the heap instead of returning them to the kernel;
// the training loop allocates and frees the same batch-sized matrices every
// step. No-op outside glibc.
void configure_allocator();

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckCase {
  std::uint64_t seed = 0;
  int state_dim = 0;
  int hidden = 0;
  int batch = 0;
  HeadMode mode = HeadMode::kLinear;
  std::size_t kink_entries = 0;  // skipped: the probe crosses a ReLU kink
  GradCheckResult result;
};

// Full joint TD loss (sum over receivers of 0.5 * mean td^2, through trunk,
// own head, gate and every message path) on a random small model; analytic
// gradients against central differences. Entries whose probe flips a ReLU
// are excluded and counted.
GradCheckCase gradcheck_joint_loss(std::uint64_t seed, double epsilon = 1e-4);

}  // namespace jointq
