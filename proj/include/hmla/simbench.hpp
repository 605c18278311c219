#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hmla/costmodel.hpp"
#include "hmla/hybrid.hpp"
#include "hmla/mla_core.hpp"

namespace hmla::sim {

/// Token-length distribution: fixed(n), uniform[a, b] (inclusive integers) or
/// lognormal(mu, sigma) rounded to the nearest integer.
struct LengthDist {
  enum class Kind { Fixed, Uniform, LogNormal };

  Kind kind = Kind::Fixed;
  double a = 1;
  double b = 1;

  static LengthDist fixed(std::size_t n) { return {Kind::Fixed, static_cast<double>(n), 0}; }
  static LengthDist uniform(std::size_t lo, std::size_t hi) {
    return {Kind::Uniform, static_cast<double>(lo), static_cast<double>(hi)};
  }
  static LengthDist lognormal(double mu, double sigma) { return {Kind::LogNormal, mu, sigma}; }

  // "fixed:N", "uniform:A:B" or "lognormal:MU:SIGMA".
  static LengthDist parse(const std::string& text);
  std::string to_string() const;

  double mean() const;  // of the continuous distribution
  // Throws ArgumentError when the parameters cannot produce lengths >= min_len.
  void validate(std::size_t min_len) const;
};

struct WorkloadSpec {
  std::size_t batch_size = 8;
  std::size_t prefix_length = 0;              // modeled L_s
  LengthDist tail = LengthDist::fixed(0);     // per-request non-shared prefill tokens
  LengthDist generation = LengthDist::fixed(4);
  std::size_t request_count = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Request {
  std::size_t id = 0;
  std::size_t tail_len = 0;
  std::size_t gen_len = 1;

  bool operator==(const Request&) const = default;
};

std::vector<Request> generate_workload(const WorkloadSpec& spec);

enum class MathMode { Off, Full };

struct SimOptions {
  MathMode math = MathMode::Off;
  MlaConfig math_config = desk_scale();  // dims used for real-math steps
  std::size_t math_prefix_cap = 64;      // executed prefix = min(L_s, cap)
  double weight_amplitude = 0.2;
  std::size_t cache_blocks = 0;  // 0 = enough for a full batch of the longest request
  std::size_t block_size = kDefaultBlockSize;
  bool check_parity = false;  // rerun each real-math step on the other decode path
  bool keep_trace = true;
};

struct ComponentTimes {
  double stage1_attn = 0;  // naive-form attention
  double stage2_attn = 0;  // absorb-form attention
  double wkvb1_proj = 0;   // query absorption through W_kb
  double wkvb2_proj = 0;   // latent output up-projection through W_vb
  double combine_lse = 0;

  double total() const { return stage1_attn + stage2_attn + wkvb1_proj + wkvb2_proj + combine_lse; }
};

struct StepTrace {
  std::size_t step = 0;
  std::size_t batch = 0;
  std::string path;  // "naive", "absorb" or "hybrid"
  std::uint64_t nonshared_tokens = 0;
  std::uint64_t macs_shared = 0;
  std::uint64_t macs_nonshared = 0;
  double hbm_bytes = 0;
  double time_s = 0;
};

struct SimReport {
  std::string method;
  std::string cost_model;
  std::string math_model;  // "off" when real math is disabled
  std::string hardware;
  std::size_t batch_size = 0;
  std::size_t threshold_batch = 0;
  std::size_t shared_len_modeled = 0;
  std::size_t shared_len_executed = 0;

  std::size_t requests_completed = 0;
  std::uint64_t total_tokens = 0;
  std::size_t steps = 0;
  std::size_t hybrid_steps = 0;
  std::size_t admission_stalls = 0;
  std::size_t peak_blocks_used = 0;
  std::size_t prefixes_built = 0;

  ComponentTimes times;
  double shared_attn_time = 0;
  double nonshared_attn_time = 0;
  double modeled_time = 0;
  double throughput = 0;  // generated tokens per modeled second
  double wall_time_s = 0;

  std::size_t parity_checks = 0;
  double max_parity_error = 0;

  std::vector<StepTrace> trace;
};

/// Continuous-batching decode loop. Requests are admitted FIFO at step
/// boundaries while their full page budget fits in the pool; finished
/// sequences are released before refilling. Time is charged per step from
/// the cost model with `cost_cfg` dims; real math, when enabled, runs with
/// `opts.math_config`. Throws CapacityError if a single request can never fit.
SimReport run_simulation(const WorkloadSpec& spec, cost::Method method, const MlaConfig& cost_cfg,
                         const cost::HardwareProfile& hw, const FallbackPolicy& policy,
                         const SimOptions& opts = {});

struct SpeedupRow {
  std::size_t batch = 0;
  double naive = 0;
  double absorb = 0;
  double typhoon = 0;
  double speedup_vs_absorb = 0;
  double speedup_vs_best = 0;
  std::size_t hybrid_steps = 0;
};

/// Modeled throughput of every method over a batch-size sweep, each point a
/// full cost-only simulation of `spec` with the batch size replaced.
std::vector<SpeedupRow> speedup_report(const WorkloadSpec& spec, const std::vector<std::size_t>& batches,
                                       const MlaConfig& cost_cfg, const cost::HardwareProfile& hw,
                                       const FallbackPolicy& policy);

}  // namespace hmla::sim
