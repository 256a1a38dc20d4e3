// Command-line entry point: train, evaluate, compare, gradcheck,
// dump-trajectory.
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "jointq/harness.hpp"

namespace fs = std::filesystem;
using namespace jointq;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> episodes;
  std::optional<std::string> mode;
  std::optional<double> iou_threshold;
  std::string checkpoint;
  std::string single_checkpoint;
  std::string joint_checkpoint;
  int gradcheck_seeds = 20;
};

RunConfig resolve(const Options& o) {
  RunConfig cfg = o.config_path.empty() ? config_from_json_text("") : load_config(o.config_path);
  if (o.seed) cfg.rng_seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.episodes) cfg.train.episodes = *o.episodes;
  if (o.iou_threshold) cfg.eval.iou_threshold = *o.iou_threshold;
  if (o.mode) {
    if (*o.mode == "single") cfg.mode = RunMode::kSingle;
    else if (*o.mode == "joint") cfg.mode = RunMode::kJoint;
    else throw ConfigError("mode: expected 'single' or 'joint', got '" + *o.mode + "'");
  }
  validate(cfg);
  return cfg;
}

// Evaluation overrides --episodes as the number of evaluation episodes.
EvalReport evaluate_checkpoint(const RunConfig& cfg, const std::string& path, std::vector<TrajectoryRecord>* traj,
                               int traj_episodes, int episodes) {
  const auto loaded = load_checkpoint(path);
  return evaluate(loaded.model, cfg.scene, cfg.env, episodes, cfg.eval.iou_threshold, cfg.eval.seed, traj,
                  traj_episodes);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

int fail(const std::string& category, const std::string& message) {
  std::cerr << "error: " << category << ": " << message << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Joint Q-learning for multi-class active object localization"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "master RNG seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--mode", o.mode, "single or joint");
    sub->add_option("--iou-threshold", o.iou_threshold, "evaluation IoU threshold");
  };

  auto* train_cmd = app.add_subcommand("train", "train a model and write run artifacts");
  add_common(train_cmd);
  train_cmd->add_option("--episodes", o.episodes, "training episodes");

  auto* eval_cmd = app.add_subcommand("evaluate", "greedy evaluation of a checkpoint");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--episodes", o.episodes, "evaluation episodes");

  auto* cmp_cmd = app.add_subcommand("compare", "compare single and joint checkpoints per class");
  add_common(cmp_cmd);
  cmp_cmd->add_option("--single", o.single_checkpoint, "single-mode checkpoint")->required();
  cmp_cmd->add_option("--joint", o.joint_checkpoint, "joint-mode checkpoint")->required();
  cmp_cmd->add_option("--episodes", o.episodes, "evaluation episodes");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of the joint loss gradient");
  grad_cmd->add_option("--seeds", o.gradcheck_seeds, "number of random cases")->check(CLI::PositiveNumber);
  grad_cmd->add_option("--seed", o.seed, "first seed");

  auto* dump_cmd = app.add_subcommand("dump-trajectory", "write greedy trajectories of a checkpoint as CSV");
  add_common(dump_cmd);
  dump_cmd->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
  dump_cmd->add_option("--episodes", o.episodes, "episodes to dump");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*train_cmd) {
      const auto cfg = resolve(o);
      const auto result = run_experiment(cfg);
      for (std::size_t c = 0; c < result.report.accuracy.size(); ++c)
        std::cout << "class " << c << " accuracy " << format_number(result.report.accuracy[c]) << '\n';
      std::cout << "artifacts written to " << result.output_dir.string() << '\n';
    } else if (*eval_cmd) {
      const auto cfg = resolve(o);
      const int n = o.episodes.value_or(cfg.eval.episodes);
      const auto report = evaluate_checkpoint(cfg, o.checkpoint, nullptr, 0, n);
      const auto table = eval_report_table(report);
      if (o.out) {
        ensure_dir(cfg.output_dir);
        write_csv(fs::path(cfg.output_dir) / "eval_report.csv", table);
      }
      std::cout << to_csv(table);
    } else if (*cmp_cmd) {
      const auto cfg = resolve(o);
      const int n = o.episodes.value_or(cfg.eval.episodes);
      const auto single = evaluate_checkpoint(cfg, o.single_checkpoint, nullptr, 0, n);
      const auto joint = evaluate_checkpoint(cfg, o.joint_checkpoint, nullptr, 0, n);
      const auto table = comparison_table(compare_reports(single, joint));
      if (o.out) {
        ensure_dir(cfg.output_dir);
        write_csv(fs::path(cfg.output_dir) / "comparison.csv", table);
        write_csv(fs::path(cfg.output_dir) / "recall_comparison.csv", recall_comparison_table(single, joint));
      }
      std::cout << to_csv(table);
    } else if (*grad_cmd) {
      const std::uint64_t first = o.seed.value_or(1);
      double worst = 0.0;
      for (int k = 0; k < o.gradcheck_seeds; ++k) {
        const auto c = gradcheck_joint_loss(first + static_cast<std::uint64_t>(k));
        worst = std::max(worst, c.result.max_relative_error);
        std::cout << "seed " << c.seed << " mode " << to_string(c.mode) << " state_dim " << c.state_dim
                  << " hidden " << c.hidden << " batch " << c.batch << " checked " << c.result.checked
                  << " max_rel " << format_number(c.result.max_relative_error) << " worst "
                  << c.result.worst_parameter << '\n';
      }
      std::cout << "max relative error " << format_number(worst) << '\n';
      return worst < 1e-4 ? 0 : fail("numeric", "gradient check exceeded 1e-4");
    } else if (*dump_cmd) {
      const auto cfg = resolve(o);
      const int n = o.episodes.value_or(cfg.eval.trajectory_episodes);
      std::vector<TrajectoryRecord> traj;
      evaluate_checkpoint(cfg, o.checkpoint, &traj, n, n);
      const auto table = trajectory_table(traj);
      if (o.out) {
        ensure_dir(cfg.output_dir);
        write_csv(fs::path(cfg.output_dir) / "trajectories.csv", table);
      }
      std::cout << to_csv(table);
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what());
  } catch (const CheckpointError& e) {
    return fail("checkpoint", e.what());
  } catch (const IoError& e) {
    return fail("io", e.what());
  } catch (const NumericError& e) {
    return fail("numeric", e.what());
  } catch (const ShapeError& e) {
    return fail("shape", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
