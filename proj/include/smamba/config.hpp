// Flat key-value experiment configuration: `key = value` per line with
// `#` comments. Unknown keys are an error so typos cannot silently fall
// back to defaults. Command-line overrides apply after the file; on a
// duplicate key the last value wins and a warning is emitted.
#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "smamba/errors.hpp"

namespace smamba {

enum class CoreTag { DenseHippo, Ccf, Ocf, Diag, DiagStable };

inline CoreTag core_tag_from_string(const std::string& s) {
  if (s == "dense_hippo" || s == "vanilla") return CoreTag::DenseHippo;
  if (s == "ccf") return CoreTag::Ccf;
  if (s == "ocf") return CoreTag::Ocf;
  if (s == "diag") return CoreTag::Diag;
  if (s == "diag_stable") return CoreTag::DiagStable;
  throw ConfigError("unknown core tag: " + s);
}

inline std::string to_string(CoreTag t) {
  switch (t) {
    case CoreTag::DenseHippo: return "dense_hippo";
    case CoreTag::Ccf: return "ccf";
    case CoreTag::Ocf: return "ocf";
    case CoreTag::Diag: return "diag";
    case CoreTag::DiagStable: return "diag_stable";
  }
  return "?";
}

struct Config {
  // Model
  std::string core = "diag";
  std::int64_t d_model = 64;
  std::int64_t d_inner = 0;  // 0 -> 2 * d_model
  std::int64_t n_state = 8;
  std::int64_t layers = 2;
  std::int64_t share_group = 16;
  std::int64_t conv_width = 0;
  bool euler_b = false;

  // Training
  std::int64_t batch = 16;
  std::int64_t seq_len = 256;
  double lr = 3e-4;
  std::int64_t warmup_steps = 100;
  std::int64_t epochs = 7;
  std::int64_t steps_per_epoch = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double split_frac = 0.9;
  std::uint64_t seed = 1;
  double stop_at_val_ppl = 0.0;  // 0 disables early stop
  bool log_timing = true;

  std::int64_t d_inner_resolved() const {
    return d_inner > 0 ? d_inner : 2 * d_model;
  }
  CoreTag core_tag() const { return core_tag_from_string(core); }

  void set(const std::string& key, const std::string& value);
  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  std::int64_t out;
  try {
    out = std::stoll(v, &pos);
  } catch (...) {
    throw ConfigError("config key `" + key + "`: expected integer, got `" + v + "`");
  }
  if (pos != v.size())
    throw ConfigError("config key `" + key + "`: expected integer, got `" + v + "`");
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (...) {
    throw ConfigError("config key `" + key + "`: expected number, got `" + v + "`");
  }
  if (pos != v.size())
    throw ConfigError("config key `" + key + "`: expected number, got `" + v + "`");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key `" + key + "`: expected true/false, got `" + v + "`");
}

}  // namespace detail

inline void Config::set(const std::string& key, const std::string& value) {
  using namespace detail;
  if (key == "core") {
    core_tag_from_string(value);  // validates
    core = value;
  } else if (key == "d_model") d_model = parse_int(key, value);
  else if (key == "d_inner") d_inner = parse_int(key, value);
  else if (key == "n_state") n_state = parse_int(key, value);
  else if (key == "layers") layers = parse_int(key, value);
  else if (key == "share_group") share_group = parse_int(key, value);
  else if (key == "conv_width") conv_width = parse_int(key, value);
  else if (key == "euler_b") euler_b = parse_bool(key, value);
  else if (key == "batch") batch = parse_int(key, value);
  else if (key == "seq_len") seq_len = parse_int(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "warmup_steps") warmup_steps = parse_int(key, value);
  else if (key == "epochs") epochs = parse_int(key, value);
  else if (key == "steps_per_epoch") steps_per_epoch = parse_int(key, value);
  else if (key == "beta1") beta1 = parse_double(key, value);
  else if (key == "beta2") beta2 = parse_double(key, value);
  else if (key == "adam_eps") adam_eps = parse_double(key, value);
  else if (key == "split_frac") split_frac = parse_double(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "stop_at_val_ppl") stop_at_val_ppl = parse_double(key, value);
  else if (key == "log_timing") log_timing = parse_bool(key, value);
  else throw ConfigError("unknown config key: " + key);
}

inline void Config::validate() const {
  core_tag_from_string(core);
  if (d_model < 1) throw ConfigError("d_model must be >= 1");
  if (d_inner_resolved() < d_model)
    throw ConfigError("d_inner must be >= d_model");
  if (n_state < 1) throw ConfigError("n_state must be >= 1");
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (share_group < 1) throw ConfigError("share_group must be >= 1");
  if (d_inner_resolved() % share_group != 0)
    throw ConfigError("d_inner must be divisible by share_group");
  if (conv_width == 1 || conv_width < 0)
    throw ConfigError("conv_width must be 0 (disabled) or >= 2");
  if (batch < 1 || seq_len < 1) throw ConfigError("batch and seq_len must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (epochs < 1 || steps_per_epoch < 1)
    throw ConfigError("epochs and steps_per_epoch must be >= 1");
  if (!(split_frac > 0.0 && split_frac < 1.0))
    throw ConfigError("split_frac must be in (0, 1)");
}

/// Parses a config file. Keys may repeat; the last occurrence wins with a
/// warning on stderr.
inline Config load_config(std::istream& in, Config base = Config{}) {
  std::string line;
  int line_no = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected `key = value`");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (seen.count(key))
      std::cerr << "warning: config key `" << key << "` repeated on line "
                << line_no << "; last value wins\n";
    seen[key] = line_no;
    base.set(key, value);
  }
  return base;
}

inline Config load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path);
  return load_config(in);
}

/// Applies `key=value` overrides after the file; duplicates warn, last wins.
inline void apply_overrides(Config& cfg, const std::vector<std::string>& kvs) {
  std::map<std::string, std::string> seen;
  for (const auto& kv : kvs) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override must look like key=value: " + kv);
    const std::string key = detail::trim(kv.substr(0, eq));
    const std::string value = detail::trim(kv.substr(eq + 1));
    if (seen.count(key))
      std::cerr << "warning: override `" << key << "` given twice; last wins\n";
    seen[key] = value;
    cfg.set(key, value);
  }
}

}  // namespace smamba
