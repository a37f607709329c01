#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "shiftdiff/common.hpp"

namespace shiftdiff {

// Flat `section.key = value` document, UTF-8, '#' comments. Unknown keys are
// rejected at parse time; every key has a default except data.* and output.*.
class Config {
 public:
  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "schedule.T", "schedule.beta_start", "schedule.beta_end",
        "shift.mode", "shift.predictor",
        "model.width", "model.time_embed", "model.conditional",
        "train.steps", "train.batch", "train.lr", "train.ema", "train.beta1",
        "train.beta2", "train.seed", "train.threads", "train.checkpoint_every",
        "data.kind", "data.dim", "data.classes", "data.means", "data.variances",
        "data.weights", "data.class_priors", "data.size",
        "data.mnist_images", "data.mnist_labels",
        "output.checkpoint", "output.metrics",
        // written into checkpoint metadata by the trainer
        "ckpt.step_count", "ckpt.rng_algorithm", "ckpt.format",
    };
    return keys;
  }

  static bool is_known(const std::string& key) {
    for (const auto& k : known_keys())
      if (k == key) return true;
    return false;
  }

  static Config parse_string(const std::string& text, const std::string& origin = "<string>") {
    Config c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw parse_error(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
      std::string key = strip(s.substr(0, eq));
      std::string value = strip(s.substr(eq + 1));
      if (!is_known(key))
        throw config_error(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      c.kv_[key] = value;
    }
    c.apply_env_overrides();
    return c;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
  }

  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
    return out.str();
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) {
    require(is_known(key), "config: unknown key '" + key + "'");
    kv_[key] = value;
  }
  void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
  void set_double(const std::string& key, double v) {
    char buf[40];
    snprintf(buf, sizeof buf, "%.17g", v);
    set(key, buf);
  }

  std::string get_string(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? dflt : it->second;
  }

  std::string get_required(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw config_error("config: missing required key '" + key + "'");
    return it->second;
  }

  long long get_int(const std::string& key, long long dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t pos = 0;
      long long v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw config_error("config: key '" + key + "' is not an integer: " + it->second);
    }
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw config_error("config: key '" + key + "' is not a number: " + it->second);
    }
  }

  uint64_t get_seed() const {
    return static_cast<uint64_t>(get_int("train.seed", 0));
  }

  // -1 (auto) / 0 / 1 for tri-state flags.
  int get_tristate(const std::string& key) const {
    std::string v = get_string(key, "auto");
    if (v == "auto") return -1;
    if (v == "true" || v == "1" || v == "on") return 1;
    if (v == "false" || v == "0" || v == "off") return 0;
    throw config_error("config: key '" + key + "' must be auto/true/false, got " + v);
  }

 private:
  static std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  void apply_env_overrides() {
    if (const char* env = std::getenv("SHIFTDIFF_SEED")) {
      kv_["train.seed"] = env;
    }
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace shiftdiff
