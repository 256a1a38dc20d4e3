#include "jointq/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace jointq {

namespace {

constexpr const char* kMagic = "jointq-checkpoint";
constexpr int kVersion = 1;

template <typename T>
using RefMap = std::map<std::string, T*>;
using TensorRefs = RefMap<Tensor<double>>;
using ConstTensorRefs = RefMap<const Tensor<double>>;

// Params may be const or mutable; Refs must match.
template <typename Params, typename Refs>
void collect(Params& p, const std::string& prefix, Refs& out) {
  for (int i = 0; i < p.num_agents(); ++i)
    for (auto& [name, v] : p.agents[static_cast<std::size_t>(i)].params.values())
      out[prefix + "agent" + std::to_string(i) + "/" + name] = &v;
  for (auto& ch : p.channels)
    for (auto& [name, v] : ch.params.values()) out[prefix + "channel" + ch.label() + "/" + name] = &v;
}

template <typename Refs, typename Model>
Refs all_tensors(Model& model) {
  Refs refs;
  collect(model.online, "online/", refs);
  collect(model.target, "target/", refs);
  return refs;
}

void write_double(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>(bits >> (8 * k));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_double(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  if (!is) throw CheckpointError("checkpoint: truncated tensor data");
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

struct Header {
  HeadMode mode = HeadMode::kLinear;
  int state_dim = 0;
  int hidden = 0;
  int agents = 0;
  bool channels = false;
  std::string config_json;
  std::vector<std::tuple<std::string, long, long>> tensors;
};

std::string expect_key(std::istream& is, const std::string& key) {
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError("checkpoint: missing header line '" + key + "'");
  if (line.rfind(key + " ", 0) != 0) throw CheckpointError("checkpoint: expected '" + key + "', got '" + line + "'");
  return line.substr(key.size() + 1);
}

int to_int(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint: bad integer for '" + key + "': " + s);
  }
}

Header read_header(std::istream& is) {
  Header h;
  if (to_int(expect_key(is, kMagic), "version") != kVersion) throw CheckpointError("checkpoint: unsupported version");
  try {
    h.mode = head_mode_from_string(expect_key(is, "head_mode"));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  h.state_dim = to_int(expect_key(is, "state_dim"), "state_dim");
  h.hidden = to_int(expect_key(is, "hidden"), "hidden");
  h.agents = to_int(expect_key(is, "agents"), "agents");
  h.channels = to_int(expect_key(is, "channels"), "channels") != 0;
  h.config_json = expect_key(is, "config");
  const int n = to_int(expect_key(is, "tensors"), "tensors");
  for (int k = 0; k < n; ++k) {
    std::string line;
    if (!std::getline(is, line)) throw CheckpointError("checkpoint: truncated tensor table");
    std::istringstream ls(line);
    std::string name;
    long rows = -1, cols = -1;
    if (!(ls >> name >> rows >> cols) || rows < 0 || cols < 0)
      throw CheckpointError("checkpoint: malformed tensor entry '" + line + "'");
    h.tensors.emplace_back(name, rows, cols);
  }
  std::string end;
  if (!std::getline(is, end) || end != "end") throw CheckpointError("checkpoint: missing 'end' marker");
  return h;
}

void read_payload(std::istream& is, const Header& h, JointModel& model) {
  auto refs = all_tensors<TensorRefs>(model);
  if (refs.size() != h.tensors.size())
    throw CheckpointError("checkpoint: tensor count " + std::to_string(h.tensors.size()) + " does not match model (" +
                          std::to_string(refs.size()) + ")");
  for (const auto& [name, rows, cols] : h.tensors) {
    auto it = refs.find(name);
    if (it == refs.end()) throw CheckpointError("checkpoint: unexpected tensor '" + name + "'");
    auto& t = *it->second;
    if (t.rows() != rows || t.cols() != cols)
      throw CheckpointError("checkpoint: shape mismatch for '" + name + "': file " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", model " + std::to_string(t.rows()) + "x" +
                            std::to_string(t.cols()));
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = read_double(is);
  }
  model.online.touch();
  model.target.touch();
}

}  // namespace

void save_checkpoint(const JointModel& model, const std::string& path, const std::string& config_json) {
  if (config_json.find('\n') != std::string::npos) throw CheckpointError("checkpoint: config must be a single line");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot open '" + path + "' for writing");
  const auto refs = all_tensors<ConstTensorRefs>(model);
  const auto& cfg = model.online.config;
  os << kMagic << ' ' << kVersion << '\n'
     << "head_mode " << to_string(cfg.head_mode) << '\n'
     << "state_dim " << cfg.state_dim << '\n'
     << "hidden " << cfg.hidden << '\n'
     << "agents " << model.online.num_agents() << '\n'
     << "channels " << (model.has_channels() ? 1 : 0) << '\n'
     << "config " << config_json << '\n'
     << "tensors " << refs.size() << '\n';
  for (const auto& [name, t] : refs) os << name << ' ' << t->rows() << ' ' << t->cols() << '\n';
  os << "end\n";
  for (const auto& [name, t] : refs)
    for (Eigen::Index k = 0; k < t->size(); ++k) write_double(os, t->data()[k]);
  if (!os) throw CheckpointError("checkpoint: write failed for '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  const Header h = read_header(is);
  NetworkConfig cfg;
  cfg.state_dim = h.state_dim;
  cfg.hidden = h.hidden;
  cfg.head_mode = h.mode;
  Rng rng(0);
  LoadedCheckpoint out;
  try {
    out.model = JointModel(cfg, h.agents, h.channels, rng);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: invalid header: ") + e.what());
  }
  read_payload(is, h, out.model);
  out.config_json = h.config_json;
  return out;
}

void load_checkpoint_into(JointModel& model, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open '" + path + "'");
  const Header h = read_header(is);
  const auto& cfg = model.online.config;
  if (h.mode != cfg.head_mode) throw CheckpointError("checkpoint: head_mode mismatch");
  if (h.agents != model.online.num_agents()) throw CheckpointError("checkpoint: agent count mismatch");
  read_payload(is, h, model);
}

}  // namespace jointq
