// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails. Artifacts go under --out (default
// acceptance_runs).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "jointq/environment.hpp"
#include "jointq/harness.hpp"
#include "jointq/learner.hpp"
#include "jointq/qnet.hpp"

namespace fs = std::filesystem;
using namespace jointq;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), format, a, b, c, d);
  return buf;
}

// Settings shared by the comparison runs. The learning rate is raised from
// the library default: at 1e-3 neither model learns to trigger on the hard
// class within the episode budget.
constexpr int kCompareEpisodes = 5000;
constexpr double kCompareLearningRate = 0.01;
constexpr int kSeeds[] = {1, 2, 3};

RunConfig comparison_config(const fs::path& dir, RunMode mode, int seed) {
  RunConfig cfg;
  cfg.mode = mode;
  cfg.rng_seed = static_cast<std::uint64_t>(seed);
  cfg.train.episodes = kCompareEpisodes;
  cfg.train.learning_rate = kCompareLearningRate;
  cfg.eval.episodes = 500;
  cfg.output_dir = (dir / (to_string(mode) + "_seed" + std::to_string(seed))).string();
  return cfg;
}

// Mean accuracy and recall over several reports of the same protocol.
EvalReport average(const std::vector<EvalReport>& reports) {
  EvalReport out = reports.front();
  for (std::size_t c = 0; c < out.accuracy.size(); ++c) {
    out.accuracy[c] = 0.0;
    std::fill(out.recall_at_k[c].begin(), out.recall_at_k[c].end(), 0.0);
    for (const auto& r : reports) {
      out.accuracy[c] += r.accuracy[c] / static_cast<double>(reports.size());
      for (std::size_t k = 0; k < out.recall_at_k[c].size(); ++k)
        out.recall_at_k[c][k] += r.recall_at_k[c][k] / static_cast<double>(reports.size());
    }
  }
  return out;
}

struct Comparison {
  std::vector<EvalReport> single, joint;
  double seconds = 0.0;
};

Comparison run_comparison(const fs::path& dir, const std::function<void(RunConfig&)>& adjust) {
  Comparison cmp;
  const auto start = Clock::now();
  for (int seed : kSeeds) {
    for (RunMode mode : {RunMode::kSingle, RunMode::kJoint}) {
      RunConfig cfg = comparison_config(dir, mode, seed);
      adjust(cfg);
      const auto res = run_experiment(cfg);
      (mode == RunMode::kSingle ? cmp.single : cmp.joint).push_back(res.report);
      std::printf("  %s seed %d: accuracy", to_string(mode).c_str(), seed);
      for (double a : res.report.accuracy) std::printf(" %.3f", a);
      std::printf("\n");
      std::fflush(stdout);
    }
  }
  cmp.seconds = seconds_since(start);
  const EvalReport s = average(cmp.single), j = average(cmp.joint);
  write_csv(dir / "comparison.csv", comparison_table(compare_reports(s, j)));
  write_csv(dir / "recall_comparison.csv", recall_comparison_table(s, j));
  return cmp;
}

// --- criteria ---------------------------------------------------------------

Outcome gradient_check() {
  const auto start = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto c = gradcheck_joint_loss(seed);
    worst = std::max(worst, c.result.max_relative_error);
    checked += c.result.checked;
  }
  const double t = seconds_since(start);
  return {worst < 1e-4 && t < 60.0 && checked > 0,
          fmt("20 seeds, max relative error %.2e over %.0f entries, %.1f s", worst, static_cast<double>(checked), t)};
}

// Rendered states from random walks in default scenes.
std::vector<std::vector<AgentState>> sample_states(int n, Rng& rng) {
  RunConfig cfg;
  std::vector<std::vector<AgentState>> out(2);
  std::uniform_int_distribution<int> pick(0, kNumActions - 2);
  while (static_cast<int>(out[0].size()) < n) {
    EpisodeState ep(generate_scene(cfg.scene, rng), cfg.env, cfg.scene.pixel_noise_std, Rng(rng()));
    const int steps = pick(rng) * 2;
    for (int t = 0; t <= steps && !ep.all_done(); ++t)
      ep.step({static_cast<Action>(pick(rng)), static_cast<Action>(pick(rng))});
    for (int i = 0; i < 2; ++i) out[static_cast<std::size_t>(i)].push_back(*ep.agent(i).state);
  }
  return out;
}

MatrixXd stack(const std::vector<AgentState>& states) {
  MatrixXd m(states.front().vector().size(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t k = 0; k < states.size(); ++k) m.col(static_cast<Eigen::Index>(k)) = states[k].vector();
  return m;
}

Outcome gate_reductions() {
  Rng rng(2024);
  RunConfig cfg;
  JointModel model = make_model(cfg);
  model.enable_channels(rng);
  const auto states = sample_states(1000, rng);
  StateBatch b;
  b.own = stack(states[0]);
  b.senders = {{1, stack(states[1]), Eigen::RowVectorXd::Ones(b.own.cols())}};
  auto& gate = model.online.agents[0].params;
  double err_one = 0.0, err_zero = 0.0;
  for (double bias : {1e3, -1e3}) {
    gate.value(names::kGate + ".weight").setZero();
    gate.value(names::kGate + ".bias").setConstant(bias);
    model.online.touch();
    const auto f = q_forward(model.online, 0, b);
    if (bias > 0) {
      err_one = (f.q - f.head.xbar).cwiseAbs().maxCoeff();
    } else {
      const auto& ch = model.online.channels[static_cast<std::size_t>(model.online.channel_index(1, 0))];
      const MatrixXd m = message(ch, trunk_forward(ch.params, b.senders[0].states).features, HeadMode::kLinear);
      err_zero = (f.q - m).cwiseAbs().maxCoeff();
    }
  }
  return {err_one <= 1e-12 && err_zero <= 1e-12,
          fmt("1000 states, |Q - own head| %.1e at g=1, |Q - message| %.1e at g=0", err_one, err_zero)};
}

Outcome routing_and_sharing() {
  RunConfig cfg;
  cfg.scene.p_both = 0.5;
  cfg.train.episodes = 200;
  cfg.rng_seed = 5;
  validate(cfg);
  JointModel model = make_model(cfg);
  std::size_t transitions = 0, bad_transitions = 0, copies = 0, bad_copies = 0;
  std::size_t last_size = 0;
  TrainHooks hooks;
  hooks.on_store = [&](const ReplayPools& pools) {
    std::size_t total = 0;
    for (int c = 0; c < pools.num_channels(); ++c) {
      const auto& pool = pools.channel(c);
      total += pool.size();
      if (pool.size() > 0 && !pool.at(pool.size() - 1).both_class) ++bad_transitions;
    }
    if (total != last_size) transitions += total - last_size;
    last_size = total;
  };
  hooks.on_copy = [&](const JointModel& m) {
    ++copies;
    for (const auto& ch : m.online.channels)
      for (const auto& name : {names::kTrunk0, names::kTrunk1})
        for (const char* part : {".weight", ".bias"})
          if (!(ch.params.value(name + part) == m.online.agents[static_cast<std::size_t>(ch.sender)].params.value(name + part)))
            ++bad_copies;
  };
  train(model, cfg.context(), true, 11, hooks);
  return {bad_transitions == 0 && bad_copies == 0 && transitions > 0 && copies > 0,
          fmt("%.0f channel transitions (%.0f not both-class), %.0f copies (%.0f trunk mismatches)",
              static_cast<double>(transitions), static_cast<double>(bad_transitions), static_cast<double>(copies),
              static_cast<double>(bad_copies))};
}

Outcome single_agent_convergence(const fs::path& dir, std::string& loss_note) {
  RunConfig cfg;
  cfg.mode = RunMode::kSingle;
  cfg.scene.num_classes = 1;
  cfg.scene.size_range = {{0.22, 0.34}};
  cfg.scene.class_intensities = {0.9};
  cfg.scene.num_distractors = 0;
  cfg.scene.pixel_noise_std = 0.0;
  cfg.train.episodes = 5000;
  cfg.eval.episodes = 500;
  cfg.output_dir = (dir / "easy_single").string();
  const auto start = Clock::now();
  const auto res = run_experiment(cfg);
  const double t = seconds_since(start);

  // Smoothed TD loss over the last window against the first window with
  // gradient steps.
  std::vector<double> loss;
  for (const auto& e : res.log.episodes)
    if (e.mean_loss > 0.0) loss.push_back(e.mean_loss);
  if (loss.size() >= 400) {
    const double first = std::accumulate(loss.begin(), loss.begin() + 200, 0.0) / 200.0;
    const double last = std::accumulate(loss.end() - 200, loss.end(), 0.0) / 200.0;
    loss_note = fmt("final/initial smoothed TD loss %.3f (%.4f / %.4f), bound 0.25", last / first, last, first);
    loss_note += last < 0.25 * first ? " met" : " not met";
  }
  const double acc = res.report.accuracy[0];
  const double median = res.report.median_steps[0];
  return {acc >= 0.9 && median <= 25 && t <= 600.0,
          fmt("accuracy %.3f, median steps %.0f, %.0f s", acc, median, t)};
}

Outcome hard_class_gain(const Comparison& cmp) {
  const double s = average(cmp.single).accuracy[1], j = average(cmp.joint).accuracy[1];
  return {j - s >= 0.05 && cmp.seconds <= 1800.0,
          fmt("class-1 accuracy single %.3f, joint %.3f (mean of 3 seeds), %.0f s", s, j, cmp.seconds)};
}

Outcome recall_dominance(const Comparison& cmp, const fs::path& csv) {
  const EvalReport s = average(cmp.single), j = average(cmp.joint);
  int worst_k = 1;
  double worst = 1.0;
  for (int k = 1; k <= 30; ++k) {
    const double d = j.recall_at_k[1][static_cast<std::size_t>(k - 1)] - s.recall_at_k[1][static_cast<std::size_t>(k - 1)];
    if (d < worst) {
      worst = d;
      worst_k = k;
    }
  }
  return {worst >= 0.0,
          fmt("min over k<=30 of joint - single class-1 recall %.3f at k=%.0f (mean of 3 seeds); ", worst, worst_k) +
              csv.string()};
}

Outcome no_harm(const Comparison& cmp) {
  const EvalReport s = average(cmp.single), j = average(cmp.joint);
  double worst = 0.0;
  std::string detail;
  for (std::size_t c = 0; c < s.accuracy.size(); ++c) {
    worst = std::max(worst, std::abs(j.accuracy[c] - s.accuracy[c]));
    detail += fmt("class %.0f single %.3f joint %.3f; ", static_cast<double>(c), s.accuracy[c], j.accuracy[c]);
  }
  return {worst <= 0.03, detail + fmt("max gap %.3f", worst)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome reproducibility(const fs::path& dir) {
  std::vector<fs::path> runs;
  for (int rep = 0; rep < 2; ++rep) {
    RunConfig cfg;
    cfg.train.episodes = 60;
    cfg.eval.episodes = 50;
    cfg.rng_seed = 99;
    cfg.output_dir = (dir / ("repeat" + std::to_string(rep))).string();
    run_experiment(cfg);
    runs.emplace_back(cfg.output_dir);
  }
  int differing = 0;
  // The config and checkpoint embed the output directory, so only the CSVs
  // are compared.
  const char* files[] = {"train_log.csv", "eval_report.csv", "trajectories.csv"};
  std::string names;
  for (const char* f : files) {
    const std::string a = slurp(runs[0] / f);
    if (a.empty() || a != slurp(runs[1] / f)) {
      ++differing;
      names += std::string(" ") + f;
    }
  }
  return {differing == 0, differing == 0 ? "two runs, train_log, eval_report and trajectories CSVs byte-identical" : "differ:" + names};
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  fs::path out = "acceptance_runs";
  std::string only;  // comma-separated criterion numbers; empty runs all
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--out" && i + 1 < argc) out = argv[++i];
    if (arg == "--only" && i + 1 < argc) only = "," + std::string(argv[++i]) + ",";
  }
  auto wanted = [&](int n) { return only.empty() || only.find("," + std::to_string(n) + ",") != std::string::npos; };
  fs::create_directories(out);

  int failures = 0;
  auto report = [&](int n, const Outcome& o) {
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", n, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  };
  auto guarded = [&](int n, const std::function<Outcome()>& f) {
    if (!wanted(n)) return;
    try {
      report(n, f());
    } catch (const std::exception& e) {
      report(n, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, gradient_check);
  guarded(2, gate_reductions);
  guarded(3, routing_and_sharing);
  std::string loss_note;
  guarded(4, [&] { return single_agent_convergence(out, loss_note); });
  if (!loss_note.empty()) std::printf("INFO easy-scene %s\n", loss_note.c_str());

  if (wanted(5) || wanted(6)) {
    try {
      std::printf("ambiguous correlated scenes:\n");
      const auto cmp = run_comparison(out / "ambiguous", [](RunConfig&) {});
      report(5, hard_class_gain(cmp));
      report(6, recall_dominance(cmp, out / "ambiguous" / "recall_comparison.csv"));
    } catch (const std::exception& e) {
      report(5, {false, std::string("exception: ") + e.what()});
      report(6, {false, "no comparison runs"});
    }
  }

  guarded(7, [&] {
    std::printf("uncorrelated scenes:\n");
    const auto cmp = run_comparison(out / "uncorrelated", [](RunConfig& cfg) {
      cfg.scene.pair_offset_mean = Eigen::Vector2d::Zero();
      cfg.scene.pair_offset_std = 0.5;
    });
    return no_harm(cmp);
  });
  guarded(8, [&] { return reproducibility(out / "repeat"); });

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
