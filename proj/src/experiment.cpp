#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "jointq/harness.hpp"

#ifndef JOINTQ_VERSION
#define JOINTQ_VERSION "dev"
#endif

namespace jointq {

namespace fs = std::filesystem;

std::string version_string() { return std::string("jointq ") + JOINTQ_VERSION; }

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 4 << 20);
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
}

namespace {

struct Seeds {
  std::uint64_t model;
  std::uint64_t train;
};

Seeds derive_seeds(std::uint64_t rng_seed) {
  Rng master(rng_seed);
  const auto model = master();
  return {model, master()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << text;
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

JointModel make_model(const RunConfig& cfg) {
  Rng rng(derive_seeds(cfg.rng_seed).model);
  NetworkConfig net = cfg.network;
  net.state_dim = cfg.env.observation.state_size();
  return JointModel(net, cfg.scene.num_classes, false, rng);
}

ExperimentResult run_experiment(const RunConfig& cfg_in) {
  RunConfig cfg = cfg_in;
  validate(cfg);
  ExperimentResult result;
  result.output_dir = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(result.output_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + cfg.output_dir + "': " + ec.message());

  const std::string config_json = config_to_json(cfg);
  write_text(result.output_dir / "resolved_config.json", config_json + "\n");

  JointModel model = make_model(cfg);
  TrainHooks hooks;
  hooks.dump_on_failure = (result.output_dir / "failure_checkpoint.bin").string();
  result.log = train(model, cfg.context(), cfg.mode == RunMode::kJoint, derive_seeds(cfg.rng_seed).train, hooks);

  save_checkpoint(model, (result.output_dir / "checkpoint.bin").string(), config_to_json(cfg, true));
  write_csv(result.output_dir / "train_log.csv", training_log_table(result.log, model.online.num_agents()));

  std::vector<TrajectoryRecord> trajectories;
  result.report = evaluate(model, cfg.scene, cfg.env, cfg.eval.episodes, cfg.eval.iou_threshold, cfg.eval.seed,
                           &trajectories, cfg.eval.trajectory_episodes);
  write_csv(result.output_dir / "eval_report.csv", eval_report_table(result.report));
  write_csv(result.output_dir / "trajectories.csv", trajectory_table(trajectories));

  std::ostringstream manifest;
  manifest << "timestamp " << utc_timestamp() << '\n'
           << "version " << version_string() << '\n'
           << "mode " << to_string(cfg.mode) << '\n'
           << "rng_seed " << cfg.rng_seed << '\n'
           << "gradient_steps " << result.log.gradient_steps << '\n'
           << "config " << config_to_json(cfg, true) << '\n';
  write_text(result.output_dir / "manifest.txt", manifest.str());
  return result;
}

}  // namespace jointq
