#include "gparam/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gparam {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": not an integer: '" + v + "'");
  }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": not an unsigned integer: '" + v + "'");
  }
}

double to_f64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config key " + key + ": not a number: '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  return static_cast<int>(to_i64(key, v));
}

}  // namespace

void apply_override(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "run.regime") c.regime = value;
  else if (key == "run.variant") c.variant = value;
  else if (key == "run.seed") c.seed = to_u64(key, value);
  else if (key == "run.out") c.out = value;
  else if (key == "model.dim") c.dim = to_i64(key, value);
  else if (key == "model.patch") c.patch = to_i64(key, value);
  else if (key == "model.heads") c.heads = to_i64(key, value);
  else if (key == "model.views") c.views = to_int(key, value);
  else if (key == "model.height") c.height = to_int(key, value);
  else if (key == "model.width") c.width = to_int(key, value);
  else if (key == "model.zoom") c.zoom = to_f64(key, value);
  else if (key == "model.sigma") c.sigma = to_f64(key, value);
  else if (key == "model.chunk") c.chunk = to_i64(key, value);
  else if (key == "model.k_exec") c.k_exec = to_i64(key, value);
  else if (key == "data.dataset") c.dataset = value;
  else if (key == "data.task") c.task = value;
  else if (key == "data.demos") c.demos = to_int(key, value);
  else if (key == "data.demo_seed0") c.demo_seed0 = to_u64(key, value);
  else if (key == "data.hz") c.hz = to_int(key, value);
  else if (key == "opt.lr_max") c.lr_max = to_f64(key, value);
  else if (key == "opt.lr_min") c.lr_min = to_f64(key, value);
  else if (key == "opt.epochs") c.epochs = to_int(key, value);
  else if (key == "opt.batch") c.batch = to_int(key, value);
  else if (key == "opt.pretrain_epochs") c.pretrain_epochs = to_int(key, value);
  else if (key == "eval.episodes") c.episodes = to_int(key, value);
  else if (key == "eval.seed0") c.eval_seed0 = to_u64(key, value);
  else if (key == "eval.max_steps") c.max_steps = to_int(key, value);
  else if (key == "eval.horizon") c.horizon = to_int(key, value);
  else if (key == "eval.per_epoch") c.per_epoch = to_int(key, value);
  else throw std::invalid_argument("unknown config key: " + key);
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) +
                                                 ": empty key");
    apply_override(c, key, value);
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

RamConfig RunConfig::ram_config(int n_arms, bool use_language) const {
  RamConfig r;
  r.dim = dim;
  r.patch = patch;
  r.heads = heads;
  r.n_views = views;
  r.height = height;
  r.width = width;
  r.n_arms = n_arms;
  r.zoom = zoom;
  r.sigma = sigma;
  r.use_language = use_language;
  r.mamba = mamba();
  r.dt = Dtype::f32;
  return r;
}

void RunConfig::validate() const {
  static const std::array<const char*, 3> kRegimes = {"pretrain-grasp", "train-discrete",
                                                      "train-continuous"};
  static const std::array<const char*, 4> kVariants = {"gpa-ram", "ram", "gpa-attn", "attn"};
  auto in = [](const auto& set, const std::string& v) {
    return std::any_of(set.begin(), set.end(), [&](const char* s) { return v == s; });
  };
  if (!in(kRegimes, regime))
    throw std::invalid_argument("run.regime must be one of pretrain-grasp|train-discrete|"
                                "train-continuous, got '" + regime + "'");
  if (!in(kVariants, variant))
    throw std::invalid_argument("run.variant must be one of gpa-ram|ram|gpa-attn|attn, got '" +
                                variant + "'");
  if (hz != 50 && hz != 100)
    throw std::invalid_argument("data.hz must be 50 or 100, got " + std::to_string(hz));
  // Perception geometry (dims, patch, view count) via the shared validator.
  ram_config(1, false).validate();
  if (chunk < 1) throw std::invalid_argument("model.chunk must be >= 1");
  if (k_exec < 1 || k_exec > chunk)
    throw std::invalid_argument("model.k_exec must be in [1, model.chunk]");
  if (demos < 1) throw std::invalid_argument("data.demos must be >= 1");
  if (!(lr_max > 0) || !(lr_min > 0) || lr_min > lr_max)
    throw std::invalid_argument("opt.lr_max >= opt.lr_min > 0 required");
  if (epochs < 1) throw std::invalid_argument("opt.epochs must be >= 1");
  if (batch < 1) throw std::invalid_argument("opt.batch must be >= 1");
  if (pretrain_epochs < 1) throw std::invalid_argument("opt.pretrain_epochs must be >= 1");
  if (episodes < 0) throw std::invalid_argument("eval.episodes must be >= 0");
  if (max_steps < 0) throw std::invalid_argument("eval.max_steps must be >= 0");
  if (horizon < 0) throw std::invalid_argument("eval.horizon must be >= 0");
  if (per_epoch < 0) throw std::invalid_argument("eval.per_epoch must be >= 0");
  // Held-out evaluation: the eval seed window may not touch the demo seeds.
  if (episodes > 0) {
    uint64_t d_lo = demo_seed0, d_hi = demo_seed0 + static_cast<uint64_t>(demos);
    uint64_t e_lo = eval_seed0, e_hi = eval_seed0 + static_cast<uint64_t>(episodes);
    if (d_lo < e_hi && e_lo < d_hi)
      throw std::invalid_argument(
          "eval seeds [" + std::to_string(e_lo) + ", " + std::to_string(e_hi) +
          ") overlap training demo seeds [" + std::to_string(d_lo) + ", " +
          std::to_string(d_hi) + ")");
  }
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o.precision(17);
  o << "run.regime=" << regime << "\n";
  o << "run.variant=" << variant << "\n";
  o << "run.seed=" << seed << "\n";
  o << "run.out=" << out << "\n";
  o << "model.dim=" << dim << "\n";
  o << "model.patch=" << patch << "\n";
  o << "model.heads=" << heads << "\n";
  o << "model.views=" << views << "\n";
  o << "model.height=" << height << "\n";
  o << "model.width=" << width << "\n";
  o << "model.zoom=" << zoom << "\n";
  o << "model.sigma=" << sigma << "\n";
  o << "model.chunk=" << chunk << "\n";
  o << "model.k_exec=" << k_exec << "\n";
  o << "data.dataset=" << dataset << "\n";
  o << "data.task=" << task << "\n";
  o << "data.demos=" << demos << "\n";
  o << "data.demo_seed0=" << demo_seed0 << "\n";
  o << "data.hz=" << hz << "\n";
  o << "opt.lr_max=" << lr_max << "\n";
  o << "opt.lr_min=" << lr_min << "\n";
  o << "opt.epochs=" << epochs << "\n";
  o << "opt.batch=" << batch << "\n";
  o << "opt.pretrain_epochs=" << pretrain_epochs << "\n";
  o << "eval.episodes=" << episodes << "\n";
  o << "eval.seed0=" << eval_seed0 << "\n";
  o << "eval.max_steps=" << max_steps << "\n";
  o << "eval.horizon=" << horizon << "\n";
  o << "eval.per_epoch=" << per_epoch << "\n";
  return o.str();
}

}  // namespace gparam
