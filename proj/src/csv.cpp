#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "jointq/harness.hpp"

namespace jointq {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return c;
  throw IoError("csv: no column '" + name + "'");
}

double CsvTable::number(std::size_t row, const std::string& name) const {
  const auto& cell = rows.at(row).at(column(name));
  if (cell == "nan") return std::nan("");
  if (cell == "inf") return HUGE_VAL;
  if (cell == "-inf") return -HUGE_VAL;
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
    throw IoError("csv: not a number in column '" + name + "': '" + cell + "'");
  return v;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw IoError("csv: ragged row '" + line + "'");
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

std::string to_csv(const CsvTable& table) {
  std::ostringstream os;
  auto emit = [&os](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) os << (c ? "," : "") << cells[c];
    os << '\n';
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
  return os.str();
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("csv: cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_csv(buffer.str());
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("csv: cannot open '" + path.string() + "' for writing");
  os << to_csv(table);
  if (!os) throw IoError("csv: write failed for '" + path.string() + "'");
}

CsvTable training_log_table(const TrainingLog& log, int num_agents) {
  CsvTable t;
  t.header = {"episode", "phase", "epsilon", "mean_loss"};
  for (int i = 0; i < num_agents; ++i) t.header.push_back("total_reward_" + std::to_string(i));
  for (int i = 0; i < num_agents; ++i) t.header.push_back("success_" + std::to_string(i));
  t.header.push_back("steps_used");
  for (int i = 0; i < num_agents; ++i) t.header.push_back("mean_gate_" + std::to_string(i));
  for (const auto& e : log.episodes) {
    std::vector<std::string> row = {std::to_string(e.episode), e.joint ? "joint" : "single", format_number(e.epsilon),
                                    format_number(e.mean_loss)};
    for (double r : e.total_reward) row.push_back(format_number(r));
    for (int s : e.success) row.push_back(std::to_string(s));
    row.push_back(std::to_string(e.steps_used));
    for (double g : e.mean_gate) row.push_back(format_number(g));
    t.rows.push_back(std::move(row));
  }
  return t;
}

CsvTable trajectory_table(const std::vector<TrajectoryRecord>& records) {
  CsvTable t;
  t.header = {"episode_id", "t", "agent_id", "action_code", "x", "y", "w", "h", "reward", "iou"};
  for (const auto& r : records)
    t.rows.push_back({std::to_string(r.episode_id), std::to_string(r.t), std::to_string(r.agent_id),
                      std::to_string(r.action_code), format_number(r.box.x), format_number(r.box.y),
                      format_number(r.box.w), format_number(r.box.h), format_number(r.reward), format_number(r.iou)});
  return t;
}

// Long format: metric, class, k, value.
CsvTable eval_report_table(const EvalReport& report) {
  CsvTable t;
  t.header = {"metric", "class", "k", "value"};
  auto add = [&t](const std::string& metric, int c, long k, const std::string& value) {
    t.rows.push_back({metric, std::to_string(c), std::to_string(k), value});
  };
  add("episodes", -1, 0, std::to_string(report.episodes));
  add("max_steps", -1, 0, std::to_string(report.max_steps));
  add("iou_threshold", -1, 0, format_number(report.iou_threshold));
  for (std::size_t c = 0; c < report.accuracy.size(); ++c) {
    const int ci = static_cast<int>(c);
    add("class_episodes", ci, 0, std::to_string(report.class_episodes[c]));
    add("accuracy", ci, 0, format_number(report.accuracy[c]));
    add("median_steps", ci, 0, format_number(report.median_steps[c]));
    for (std::size_t k = 0; k < report.recall_at_k[c].size(); ++k)
      add("recall_at_k", ci, static_cast<long>(k + 1), format_number(report.recall_at_k[c][k]));
    for (std::size_t s = 0; s < report.steps_histogram[c].size(); ++s)
      add("steps_histogram", ci, static_cast<long>(s + 1), std::to_string(report.steps_histogram[c][s]));
    for (std::size_t s = 0; s < report.gate_trace[c].size(); ++s)
      add("gate_trace", ci, static_cast<long>(s + 1), format_number(report.gate_trace[c][s]));
  }
  return t;
}

EvalReport eval_report_from_table(const CsvTable& table) {
  EvalReport r;
  const auto mc = table.column("metric");
  const auto cc = table.column("class");
  const auto kc = table.column("k");
  auto ensure = [&r](int c) {
    const auto need = static_cast<std::size_t>(c + 1);
    if (r.accuracy.size() < need) {
      r.class_episodes.resize(need, 0);
      r.accuracy.resize(need, 0.0);
      r.median_steps.resize(need, std::nan(""));
      r.recall_at_k.resize(need);
      r.steps_histogram.resize(need);
      r.gate_trace.resize(need);
    }
  };
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string& metric = row[mc];
    const int c = std::stoi(row[cc]);
    const long k = std::stol(row[kc]);
    const double v = table.number(i, "value");
    if (metric == "episodes") { r.episodes = static_cast<int>(v); continue; }
    if (metric == "max_steps") { r.max_steps = static_cast<int>(v); continue; }
    if (metric == "iou_threshold") { r.iou_threshold = v; continue; }
    if (c < 0) throw IoError("eval report: class index missing for metric '" + metric + "'");
    ensure(c);
    const auto uc = static_cast<std::size_t>(c);
    auto put = [k](auto& vec, auto value) {
      const auto idx = static_cast<std::size_t>(k - 1);
      if (vec.size() <= idx) vec.resize(idx + 1);
      vec[idx] = value;
    };
    if (metric == "class_episodes") r.class_episodes[uc] = static_cast<int>(v);
    else if (metric == "accuracy") r.accuracy[uc] = v;
    else if (metric == "median_steps") r.median_steps[uc] = v;
    else if (metric == "recall_at_k") put(r.recall_at_k[uc], v);
    else if (metric == "steps_histogram") put(r.steps_histogram[uc], static_cast<int>(v));
    else if (metric == "gate_trace") put(r.gate_trace[uc], v);
    else throw IoError("eval report: unknown metric '" + metric + "'");
  }
  return r;
}

std::vector<ComparisonRow> compare_reports(const EvalReport& single, const EvalReport& joint) {
  if (single.accuracy.size() != joint.accuracy.size())
    throw ConfigError("compare: reports cover different class counts");
  std::vector<ComparisonRow> rows;
  for (std::size_t c = 0; c < single.accuracy.size(); ++c)
    rows.push_back({static_cast<int>(c), single.accuracy[c], joint.accuracy[c]});
  return rows;
}

CsvTable comparison_table(const std::vector<ComparisonRow>& rows) {
  CsvTable t;
  t.header = {"class", "single_accuracy", "joint_accuracy", "delta"};
  for (const auto& r : rows)
    t.rows.push_back({std::to_string(r.class_id), format_number(r.single_accuracy), format_number(r.joint_accuracy),
                      format_number(r.delta())});
  return t;
}

CsvTable recall_comparison_table(const EvalReport& single, const EvalReport& joint) {
  CsvTable t;
  t.header = {"class", "k", "single_recall", "joint_recall"};
  for (std::size_t c = 0; c < single.recall_at_k.size() && c < joint.recall_at_k.size(); ++c) {
    const auto n = std::min(single.recall_at_k[c].size(), joint.recall_at_k[c].size());
    for (std::size_t k = 0; k < n; ++k)
      t.rows.push_back({std::to_string(c), std::to_string(k + 1), format_number(single.recall_at_k[c][k]),
                        format_number(joint.recall_at_k[c][k])});
  }
  return t;
}

}  // namespace jointq
