#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "jointq/harness.hpp"

namespace jointq {

using nlohmann::json;

std::string to_string(RunMode mode) { return mode == RunMode::kSingle ? "single" : "joint"; }

RunContext RunConfig::context() const { return {scene, env, train, eval.iou_threshold}; }

namespace {

// Reads fields out of one JSON object, tracking which keys were consumed so
// leftovers can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (v.is_number_integer() && !v.is_number_unsigned()) throw std::invalid_argument("expected >= 0");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      out = v.get<T>();
    } catch (const std::exception& e) {
      throw ConfigError(name(key) + ": " + e.what());
    }
  }

  void get_range(const std::string& key, Range& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = parse_range(j_.at(key), name(key));
  }

  void get_ranges(const std::string& key, std::vector<Range>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(name(key) + ": expected a list of [min, max] pairs");
    out.clear();
    for (const auto& r : v) out.push_back(parse_range(r, name(key)));
  }

  void get_numbers(const std::string& key, std::vector<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(name(key) + ": expected a list of numbers");
    out.clear();
    for (const auto& x : v) {
      if (!x.is_number()) throw ConfigError(name(key) + ": expected a list of numbers");
      out.push_back(x.get<double>());
    }
  }

  std::optional<Section> child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), name(key));
  }

  void reject_unknown() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(name(key) + ": unknown key");
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  static Range parse_range(const json& v, const std::string& field) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ConfigError(field + ": expected [min, max]");
    return {v[0].get<double>(), v[1].get<double>()};
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json range_json(const Range& r) { return json::array({r.first, r.second}); }

void wrap_validation(const std::string& section, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + "." + e.what());
  }
}

}  // namespace

void validate(RunConfig& cfg) {
  wrap_validation("scene", [&] { cfg.scene.validate(); });
  wrap_validation("observation", [&] { cfg.env.observation.validate(); });
  wrap_validation("environment", [&] { cfg.env.validate(); });
  cfg.network.state_dim = cfg.env.observation.state_size();
  wrap_validation("network", [&] { cfg.network.validate(); });
  wrap_validation("train", [&] { cfg.train.validate(); });
  if (cfg.eval.episodes < 0) throw ConfigError("eval.episodes: must be >= 0");
  if (!(cfg.eval.iou_threshold > 0.0 && cfg.eval.iou_threshold <= 1.0))
    throw ConfigError("eval.iou_threshold: must lie in (0, 1]");
  if (cfg.eval.trajectory_episodes < 0) throw ConfigError("eval.trajectory_episodes: must be >= 0");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

RunConfig config_from_json_text(const std::string& text) {
  json root;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    root = json::object();
  } else {
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config: parse error: ") + e.what());
    }
  }

  RunConfig cfg;
  Section top(root, "");
  if (auto s = top.child("scene")) {
    s->get("num_classes", cfg.scene.num_classes);
    s->get_ranges("size_range", cfg.scene.size_range);
    std::vector<double> offset = {cfg.scene.pair_offset_mean.x(), cfg.scene.pair_offset_mean.y()};
    s->get_numbers("pair_offset_mean", offset);
    if (offset.size() != 2) throw ConfigError("scene.pair_offset_mean: expected [dx, dy]");
    cfg.scene.pair_offset_mean = {offset[0], offset[1]};
    s->get("pair_offset_std", cfg.scene.pair_offset_std);
    s->get("num_distractors", cfg.scene.num_distractors);
    s->get_range("distractor_size_range", cfg.scene.distractor_size_range);
    s->get_numbers("class_intensities", cfg.scene.class_intensities);
    s->get("intensity_jitter_std", cfg.scene.intensity_jitter_std);
    s->get_range("distractor_intensity_range", cfg.scene.distractor_intensity_range);
    s->get("pixel_noise_std", cfg.scene.pixel_noise_std);
    s->get("p_both", cfg.scene.p_both);
    s->get("rng_seed", cfg.scene.rng_seed);
    s->reject_unknown();
  }
  if (auto s = top.child("observation")) {
    s->get("grid_size", cfg.env.observation.grid_size);
    s->get("context_margin", cfg.env.observation.context_margin);
    s->reject_unknown();
  }
  if (auto s = top.child("environment")) {
    s->get("max_steps", cfg.env.max_steps);
    s->get("alpha", cfg.env.alpha);
    s->get("trigger_threshold", cfg.env.trigger_threshold);
    s->get("trigger_reward", cfg.env.trigger_reward);
    s->reject_unknown();
  }
  if (auto s = top.child("network")) {
    s->get("hidden", cfg.network.hidden);
    std::string mode = to_string(cfg.network.head_mode);
    s->get("head_mode", mode);
    try {
      cfg.network.head_mode = head_mode_from_string(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("network.") + e.what());
    }
    s->reject_unknown();
  }
  if (auto s = top.child("train")) {
    s->get("gamma", cfg.train.gamma);
    s->get("epsilon_start", cfg.train.epsilon_start);
    s->get("epsilon_end", cfg.train.epsilon_end);
    s->get("epsilon_decay_fraction", cfg.train.epsilon_decay_fraction);
    s->get("learning_rate", cfg.train.learning_rate);
    s->get("batch_size", cfg.train.batch_size);
    s->get("replay_capacity", cfg.train.replay_capacity);
    s->get("target_sync_period", cfg.train.target_sync_period);
    s->get("episodes", cfg.train.episodes);
    s->get("pretrain_episodes", cfg.train.pretrain_episodes);
    s->reject_unknown();
  }
  if (auto s = top.child("eval")) {
    s->get("episodes", cfg.eval.episodes);
    s->get("iou_threshold", cfg.eval.iou_threshold);
    s->get("seed", cfg.eval.seed);
    s->get("trajectory_episodes", cfg.eval.trajectory_episodes);
    s->reject_unknown();
  }
  std::string mode = to_string(cfg.mode);
  top.get("mode", mode);
  if (mode == "single")
    cfg.mode = RunMode::kSingle;
  else if (mode == "joint")
    cfg.mode = RunMode::kJoint;
  else
    throw ConfigError("mode: expected 'single' or 'joint', got '" + mode + "'");
  top.get("rng_seed", cfg.rng_seed);
  top.get("output_dir", cfg.output_dir);
  top.reject_unknown();

  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << is.rdbuf();
  return config_from_json_text(buffer.str());
}

std::string config_to_json(const RunConfig& cfg, bool compact) {
  json j;
  json ranges = json::array();
  for (const auto& r : cfg.scene.size_range) ranges.push_back(range_json(r));
  j["scene"] = {
      {"num_classes", cfg.scene.num_classes},
      {"size_range", ranges},
      {"pair_offset_mean", json::array({cfg.scene.pair_offset_mean.x(), cfg.scene.pair_offset_mean.y()})},
      {"pair_offset_std", cfg.scene.pair_offset_std},
      {"num_distractors", cfg.scene.num_distractors},
      {"distractor_size_range", range_json(cfg.scene.distractor_size_range)},
      {"class_intensities", cfg.scene.class_intensities},
      {"intensity_jitter_std", cfg.scene.intensity_jitter_std},
      {"distractor_intensity_range", range_json(cfg.scene.distractor_intensity_range)},
      {"pixel_noise_std", cfg.scene.pixel_noise_std},
      {"p_both", cfg.scene.p_both},
      {"rng_seed", cfg.scene.rng_seed},
  };
  j["observation"] = {{"grid_size", cfg.env.observation.grid_size},
                      {"context_margin", cfg.env.observation.context_margin}};
  j["environment"] = {{"max_steps", cfg.env.max_steps},
                      {"alpha", cfg.env.alpha},
                      {"trigger_threshold", cfg.env.trigger_threshold},
                      {"trigger_reward", cfg.env.trigger_reward}};
  j["network"] = {{"hidden", cfg.network.hidden}, {"head_mode", to_string(cfg.network.head_mode)}};
  j["train"] = {{"gamma", cfg.train.gamma},
                {"epsilon_start", cfg.train.epsilon_start},
                {"epsilon_end", cfg.train.epsilon_end},
                {"epsilon_decay_fraction", cfg.train.epsilon_decay_fraction},
                {"learning_rate", cfg.train.learning_rate},
                {"batch_size", cfg.train.batch_size},
                {"replay_capacity", cfg.train.replay_capacity},
                {"target_sync_period", cfg.train.target_sync_period},
                {"episodes", cfg.train.episodes},
                {"pretrain_episodes", cfg.train.pretrain_episodes}};
  j["eval"] = {{"episodes", cfg.eval.episodes},
               {"iou_threshold", cfg.eval.iou_threshold},
               {"seed", cfg.eval.seed},
               {"trajectory_episodes", cfg.eval.trajectory_episodes}};
  j["mode"] = to_string(cfg.mode);
  j["rng_seed"] = cfg.rng_seed;
  j["output_dir"] = cfg.output_dir;
  return compact ? j.dump() : j.dump(2);
}

}  // namespace jointq
