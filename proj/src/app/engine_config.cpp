#include "hmla/app/engine_config.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace hmla::app {

namespace {

std::string lower(std::string s) {
  std::ranges::transform(s, s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || v.front() == '-') {
    throw ArgumentError("config: '" + key + "' expects a count, got '" + v + "'");
  }
  return static_cast<std::size_t>(n);
}

double to_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ArgumentError("config: '" + key + "' expects a number, got '" + v + "'");
  return d;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace

OutputFormat parse_format(const std::string& text) {
  if (text == "csv") return OutputFormat::Csv;
  if (text == "jsonl") return OutputFormat::Jsonl;
  throw ArgumentError("unknown output format '" + text + "' (csv | jsonl)");
}

std::string to_string(OutputFormat f) { return f == OutputFormat::Csv ? "csv" : "jsonl"; }

Settings read_config_file(const std::string& path) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ArgumentError("config file: " + std::string(e.what()));
  }
  Settings out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ArgumentError("config file: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) out[section + "." + key] = value.get_value<std::string>();
  }
  return out;
}

Settings env_settings(char** envp) {
  Settings out;
  if (!envp) return out;
  const std::string prefix = "HMLA_";
  for (char** e = envp; *e; ++e) {
    const std::string entry(*e);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = lower(entry.substr(prefix.size(), eq - prefix.size()));
    const auto us = name.find('_');
    if (us == std::string::npos) continue;
    out[name.substr(0, us) + "." + name.substr(us + 1)] = entry.substr(eq + 1);
  }
  return out;
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  const auto dot = text.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ArgumentError("expected section.key=value, got '" + text + "'");
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

FallbackPolicy EngineConfig::policy() const {
  if (threshold) return {*threshold, policy_mode};
  return FallbackPolicy::for_hardware(model, hardware, policy_mode);
}

Settings EngineConfig::snapshot() const {
  Settings s;
  s["model.name"] = model.name;
  s["model.model_dim"] = std::to_string(model.model_dim);
  s["model.num_heads"] = std::to_string(model.num_heads);
  s["model.nope_head_dim"] = std::to_string(model.nope_head_dim);
  s["model.rope_dim"] = std::to_string(model.rope_dim);
  s["model.v_head_dim"] = std::to_string(model.v_head_dim);
  s["model.kv_lora_rank"] = std::to_string(model.kv_lora_rank);
  s["model.q_lora_rank"] = std::to_string(model.q_lora_rank);
  s["hardware.name"] = hardware.name;
  s["hardware.peak_flops"] = fmt(hardware.peak_flops);
  s["hardware.hbm_bandwidth"] = fmt(hardware.hbm_bandwidth);
  s["hardware.dtype_bytes"] = fmt(hardware.dtype_bytes);
  s["cache.blocks"] = std::to_string(cache_blocks);
  s["cache.block_size"] = std::to_string(block_size);
  s["policy.mode"] = std::string(to_string(policy_mode));
  s["policy.threshold"] = threshold ? std::to_string(*threshold) : "auto:" + std::to_string(policy().threshold_batch);
  s["output.format"] = to_string(format);
  s["parallelism.devices"] = std::to_string(parallelism.devices);
  s["parallelism.dp"] = std::to_string(parallelism.dp);
  s["parallelism.tp"] = std::to_string(parallelism.tp);
  s["parallelism.sp"] = std::to_string(parallelism.sp);
  s["parallelism.layers"] = std::to_string(parallelism.layers);
  s["parallelism.weight_params"] = fmt(parallelism.weight_params);
  s["parallelism.weight_dtype_bytes"] = fmt(parallelism.weight_dtype_bytes);
  s["parallelism.cache_dtype_bytes"] = fmt(parallelism.cache_dtype_bytes);
  s["parallelism.tp_cache_share"] = std::to_string(parallelism.tp_cache_share);
  for (const auto& [k, v] : extra) s[k] = v;
  return s;
}

EngineConfig resolve_config(const Settings& file, const Settings& env, const Settings& flags) {
  Settings merged = file;
  for (const auto& [k, v] : env) merged[k] = v;
  for (const auto& [k, v] : flags) merged[k] = v;

  EngineConfig cfg;
  std::map<std::string, std::string> model_kv;
  std::optional<cost::HardwareProfile> hw;
  Settings hw_overrides;

  for (const auto& [key, value] : merged) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw ArgumentError("config: key '" + key + "' has no section");
    const std::string section = key.substr(0, dot);
    const std::string name = key.substr(dot + 1);
    if (section == "model") {
      model_kv[name] = value;
    } else if (section == "hardware") {
      if (name == "preset") hw = cost::hardware_preset(value);
      else if (name == "peak_flops" || name == "hbm_bandwidth" || name == "dtype_bytes" || name == "name")
        hw_overrides[name] = value;
      else throw ArgumentError("config: unknown key '" + key + "'");
    } else if (section == "cache") {
      if (name == "blocks") cfg.cache_blocks = to_count(key, value);
      else if (name == "block_size") cfg.block_size = to_count(key, value);
      else throw ArgumentError("config: unknown key '" + key + "'");
    } else if (section == "policy") {
      if (name == "mode") cfg.policy_mode = parse_policy_mode(value);
      else if (name == "threshold") {
        if (value == "auto") cfg.threshold.reset();
        else cfg.threshold = to_count(key, value);
      } else throw ArgumentError("config: unknown key '" + key + "'");
    } else if (section == "output") {
      if (name == "format") cfg.format = parse_format(value);
      else throw ArgumentError("config: unknown key '" + key + "'");
    } else if (section == "parallelism") {
      auto& p = cfg.parallelism;
      if (name == "devices") p.devices = to_count(key, value);
      else if (name == "dp") p.dp = to_count(key, value);
      else if (name == "tp") p.tp = to_count(key, value);
      else if (name == "sp") p.sp = to_count(key, value);
      else if (name == "layers") p.layers = to_count(key, value);
      else if (name == "weight_params") p.weight_params = to_real(key, value);
      else if (name == "weight_dtype_bytes") p.weight_dtype_bytes = to_real(key, value);
      else if (name == "cache_dtype_bytes") p.cache_dtype_bytes = to_real(key, value);
      else if (name == "tp_cache_share") p.tp_cache_share = to_count(key, value);
      else throw ArgumentError("config: unknown key '" + key + "'");
    } else if (section == "sweep") {
      static const std::set<std::string> names{"batches", "methods", "shared_len", "nonshared_len", "query_len",
                                               "hardware"};
      if (!names.contains(name)) throw ArgumentError("config: unknown key '" + key + "'");
      cfg.extra[key] = value;
    } else if (section == "workload") {
      static const std::set<std::string> names{"batch_size", "prefix_length", "tail",   "generation",
                                               "requests",   "method",        "math", "sweep"};
      if (!names.contains(name)) throw ArgumentError("config: unknown key '" + key + "'");
      cfg.extra[key] = value;
    } else {
      throw ArgumentError("config: unknown section '" + section + "'");
    }
  }

  if (model_kv.empty()) model_kv["preset"] = "deepseek-v3";
  cfg.model = model_config_from(model_kv);

  cfg.hardware = hw.value_or(cost::ascend_910_class());
  if (!hw_overrides.empty()) {
    if (!hw) cfg.hardware.name = "custom";
    for (const auto& [k, v] : hw_overrides) {
      if (k == "name") cfg.hardware.name = v;
      else if (k == "peak_flops") cfg.hardware.peak_flops = to_real("hardware." + k, v);
      else if (k == "hbm_bandwidth") cfg.hardware.hbm_bandwidth = to_real("hardware." + k, v);
      else cfg.hardware.dtype_bytes = to_real("hardware." + k, v);
    }
  }
  cfg.hardware.validate();
  cfg.parallelism.validate();
  if (cfg.block_size == 0) throw ArgumentError("config: cache.block_size must be >= 1");
  if (cfg.threshold && *cfg.threshold == 0) throw ArgumentError("config: policy.threshold must be >= 1");
  return cfg;
}

}  // namespace hmla::app
