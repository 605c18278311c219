#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hmla/app/engine_config.hpp"
#include "hmla/app/report.hpp"

namespace hmla::app {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitViolation = 3,
  kExitCapacity = 4,
};

struct CommandContext {
  EngineConfig config;
  std::uint64_t seed = 0;
  OutputSink sink;
  std::ostream* err = nullptr;
};

// "1,2,4" or a doubling range "1:1024"; empty input is an error.
std::vector<std::uint64_t> parse_count_list(const std::string& text);
std::vector<std::string> split_list(const std::string& text);

struct EquivalenceArgs {
  std::size_t trials = 100;
  std::string precision = "both";  // "32", "64" or "both"
  std::optional<double> tolerance;
  bool inject_fault = false;
};

struct RooflineArgs {
  std::optional<std::string> batches;     // default 1:1024
  std::optional<std::string> methods;     // default naive,absorb,typhoon
  std::optional<std::string> shared_len;  // default 4096
  std::optional<std::string> nonshared_len;  // default 0
  std::optional<std::string> query_len;   // default 1
  std::optional<std::string> hardware;    // default: the configured profile
};

struct ThresholdArgs {
  bool all_hardware = false;
  std::uint64_t max_batch = std::uint64_t{1} << 20;
};

struct FootprintArgs {
  std::string batches = "4096:32768";
  std::string max_seqs = "32768:262144";
  std::uint64_t shared_len = 26472;
  bool no_typhoon = false;
};

struct SimulateArgs {
  std::optional<std::size_t> batch;
  std::optional<std::size_t> prefix_len;
  std::optional<std::string> tail;
  std::optional<std::string> generation;
  std::optional<std::size_t> requests;
  std::optional<std::string> method;  // naive | absorb | typhoon | all
  std::optional<std::string> math;    // off | full
  bool parity = false;
  bool no_trace = false;
  std::optional<std::string> sweep;
};

int cmd_equivalence(const CommandContext& ctx, const EquivalenceArgs& args);
int cmd_roofline(const CommandContext& ctx, const RooflineArgs& args);
int cmd_threshold(const CommandContext& ctx, const ThresholdArgs& args);
int cmd_footprint(const CommandContext& ctx, const FootprintArgs& args);
int cmd_simulate(const CommandContext& ctx, const SimulateArgs& args);

}  // namespace hmla::app
