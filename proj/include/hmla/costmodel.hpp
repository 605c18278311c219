#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "hmla/mla_core.hpp"

namespace hmla::cost {

enum class Method { Naive, Absorb, Typhoon };

std::string_view to_string(Method m);
// "naive", "absorb" or "typhoon"; throws ArgumentError otherwise.
Method parse_method(std::string_view text);

struct WorkloadShape {
  std::uint64_t batch = 1;
  std::uint64_t query_len = 1;
  std::uint64_t shared_len = 0;
  std::uint64_t nonshared_len = 0;  // per sequence
};

struct HardwareProfile {
  std::string name = "custom";
  double peak_flops = 0;     // FLOP/s, 1 MAC = 2 FLOPs
  double hbm_bandwidth = 0;  // bytes/s
  double dtype_bytes = 2;

  void validate() const;
};

HardwareProfile ascend_910_class();  // 376 TFLOPS FP16, 1.8 TB/s
HardwareProfile fig2_npu();          // 400 TFLOPS FP16, 1.8 TB/s
HardwareProfile gpu_h_class();       // 1 PFLOPS FP16, 3.3 TB/s
HardwareProfile hardware_preset(std::string_view name);
std::vector<std::string> hardware_preset_names();

// Per-context-token coefficients.
std::uint64_t expanded_coefficient(const MlaConfig& cfg);  // H·(D_qk + D_v)
std::uint64_t absorb_mac_coefficient(const MlaConfig& cfg);  // H·(2·D_l + D_r)
std::uint64_t latent_coefficient(const MlaConfig& cfg);  // D_l + D_r

struct PartCounts {
  std::uint64_t shared = 0;
  std::uint64_t nonshared = 0;

  std::uint64_t total() const { return shared + nonshared; }
  bool operator==(const PartCounts&) const = default;
};

struct CostBreakdown {
  Method method = Method::Absorb;
  PartCounts macs;
  PartCounts hbm_elems;

  bool operator==(const CostBreakdown&) const = default;
};

// Attention-only counts for one decode step. Multiplications are checked and
// throw std::overflow_error rather than wrap.
PartCounts macs(Method method, const WorkloadShape& shape, const MlaConfig& cfg);
PartCounts hbm_elems(Method method, const WorkloadShape& shape, const MlaConfig& cfg);
CostBreakdown cost(Method method, const WorkloadShape& shape, const MlaConfig& cfg);

// Same counts for a ragged batch: `nonshared_tokens` is the sum of L_n over
// the batch, replacing B·L_n.
CostBreakdown ragged_cost(Method method, std::uint64_t batch, std::uint64_t query_len,
                          std::uint64_t shared_len, std::uint64_t nonshared_tokens, const MlaConfig& cfg);

// Roofline time of one part: max(flops / peak, bytes / bandwidth).
double part_time(double flops, double bytes, const HardwareProfile& hw);

struct PartTimes {
  double shared = 0;
  double nonshared = 0;

  double total() const { return shared + nonshared; }
};

PartTimes attention_time(const CostBreakdown& c, const HardwareProfile& hw);

// Query tokens per second: B·S_q / (t_shared + t_nonshared).
double roofline_throughput(Method method, const WorkloadShape& shape, const MlaConfig& cfg,
                           const HardwareProfile& hw);

struct Crossover {
  double analytic = 0;       // batch at which naive memory time equals absorb compute time
  std::uint64_t batch = 1;   // smallest B where the naive shared part is strictly faster
  std::uint64_t rounded = 1; // `batch` rounded up to a power of two
  bool capped = false;       // no crossover found up to the search cap
};

Crossover crossover_batch(const MlaConfig& cfg, const HardwareProfile& hw,
                          std::uint64_t max_batch = std::uint64_t{1} << 20);

struct ParallelismConfig {
  std::uint64_t devices = 384;
  std::uint64_t dp = 24;
  std::uint64_t tp = 4;
  std::uint64_t sp = 4;
  std::uint64_t layers = 61;
  double weight_params = 671e9;
  double weight_dtype_bytes = 1;
  double cache_dtype_bytes = 1;
  // Ways the single-head compressed cache is split across a TP group. The
  // latent has no head dimension, so the default keeps it replicated.
  std::uint64_t tp_cache_share = 1;

  void validate() const;
};

// 384-device DeepSeek-v3 deployment in FP8 (dp 24, tp 4, sp 4, 61 layers,
// 671e9 parameters spread evenly).
ParallelismConfig deepseek_v3_cluster();

struct FootprintReport {
  double weights = 0;
  double compressed_cache = 0;
  double expanded_shared = 0;
  double total = 0;
  double overhead_ratio = 0;  // expanded_shared / (weights + compressed_cache)
  std::string assumptions;
};

// Per-device HBM bytes.
FootprintReport hbm_footprint(const MlaConfig& cfg, const ParallelismConfig& par, std::uint64_t batch,
                              std::uint64_t max_seq, std::uint64_t shared_len, bool use_typhoon);

}  // namespace hmla::cost
