#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>

#include "hmla/costmodel.hpp"
#include "hmla/hybrid.hpp"
#include "hmla/mla_core.hpp"

namespace hmla::app {

enum class OutputFormat { Csv, Jsonl };

OutputFormat parse_format(const std::string& text);
std::string to_string(OutputFormat f);

// Flat "section.key" -> value settings.
using Settings = std::map<std::string, std::string>;

// INI-style file: [model], [hardware], [cache], [policy], [output], [parallelism],
// [sweep], [workload].
Settings read_config_file(const std::string& path);

// HMLA_<SECTION>_<KEY>=value entries of `envp` (e.g. HMLA_MODEL_PRESET=kimi-k2).
Settings env_settings(char** envp);

// Parses "section.key=value".
std::pair<std::string, std::string> parse_assignment(const std::string& text);

struct EngineConfig {
  MlaConfig model = deepseek_v3();
  cost::HardwareProfile hardware = cost::ascend_910_class();
  std::size_t cache_blocks = 0;
  std::size_t block_size = kDefaultBlockSize;
  PolicyMode policy_mode = PolicyMode::Auto;
  std::optional<std::size_t> threshold;  // unset: derived from the hardware crossover
  OutputFormat format = OutputFormat::Csv;
  cost::ParallelismConfig parallelism = cost::deepseek_v3_cluster();
  // [sweep] and [workload] keys, interpreted by the commands that use them.
  Settings extra;

  // Threshold resolved against the hardware profile when not set explicitly.
  FallbackPolicy policy() const;
  // Every resolved field as "section.key" -> value, for run manifests.
  Settings snapshot() const;
};

/// Layers file < environment < flags and resolves presets. Unknown keys and
/// malformed values throw ArgumentError; unknown presets throw NotFoundError.
EngineConfig resolve_config(const Settings& file, const Settings& env, const Settings& flags);

}  // namespace hmla::app
