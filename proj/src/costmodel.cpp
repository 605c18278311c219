#include "hmla/costmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hmla::cost {

namespace {

std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r = 0;
  if (__builtin_mul_overflow(a, b, &r)) throw std::overflow_error("cost model: 64-bit overflow");
  return r;
}

std::uint64_t mul(std::initializer_list<std::uint64_t> xs) {
  std::uint64_t r = 1;
  for (auto x : xs) r = mul(r, x);
  return r;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Naive: return "naive";
    case Method::Absorb: return "absorb";
    case Method::Typhoon: return "typhoon";
  }
  return "unknown";
}

Method parse_method(std::string_view text) {
  if (text == "naive") return Method::Naive;
  if (text == "absorb") return Method::Absorb;
  if (text == "typhoon") return Method::Typhoon;
  throw ArgumentError("unknown method '" + std::string(text) + "'");
}

void HardwareProfile::validate() const {
  if (!(peak_flops > 0) || !(hbm_bandwidth > 0) || !(dtype_bytes > 0)) {
    throw ArgumentError("hardware profile '" + name + "': peak, bandwidth and dtype width must be > 0");
  }
}

HardwareProfile ascend_910_class() { return {"ascend-910-class", 376e12, 1.8e12, 2}; }
HardwareProfile fig2_npu() { return {"fig2-npu", 400e12, 1.8e12, 2}; }
HardwareProfile gpu_h_class() { return {"gpu-h-class", 1e15, 3.3e12, 2}; }

HardwareProfile hardware_preset(std::string_view name) {
  if (name == "ascend-910-class") return ascend_910_class();
  if (name == "fig2-npu") return fig2_npu();
  if (name == "gpu-h-class") return gpu_h_class();
  throw NotFoundError("unknown hardware preset '" + std::string(name) + "'");
}

std::vector<std::string> hardware_preset_names() {
  return {"ascend-910-class", "fig2-npu", "gpu-h-class"};
}

std::uint64_t expanded_coefficient(const MlaConfig& cfg) {
  return mul(cfg.num_heads, cfg.qk_head_dim() + cfg.v_head_dim);
}

std::uint64_t absorb_mac_coefficient(const MlaConfig& cfg) {
  return mul(cfg.num_heads, 2 * cfg.kv_lora_rank + cfg.rope_dim);
}

std::uint64_t latent_coefficient(const MlaConfig& cfg) { return cfg.kv_lora_rank + cfg.rope_dim; }

CostBreakdown ragged_cost(Method method, std::uint64_t batch, std::uint64_t query_len,
                          std::uint64_t shared_len, std::uint64_t nonshared_tokens, const MlaConfig& cfg) {
  const std::uint64_t expanded = expanded_coefficient(cfg);
  const std::uint64_t absorbed = absorb_mac_coefficient(cfg);
  const std::uint64_t latent = latent_coefficient(cfg);

  // Shared part: every query reads the same L_s tokens once.
  const bool shared_naive = method != Method::Absorb;
  // Non-shared part: typhoon runs it in absorb form.
  const bool nonshared_naive = method == Method::Naive;

  CostBreakdown c;
  c.method = method;
  c.macs.shared = mul({batch, query_len, shared_len, shared_naive ? expanded : absorbed});
  c.macs.nonshared = mul({query_len, nonshared_tokens, nonshared_naive ? expanded : absorbed});
  c.hbm_elems.shared = mul(shared_len, shared_naive ? expanded : latent);
  c.hbm_elems.nonshared = mul(nonshared_tokens, nonshared_naive ? expanded : latent);
  return c;
}

CostBreakdown cost(Method method, const WorkloadShape& s, const MlaConfig& cfg) {
  return ragged_cost(method, s.batch, s.query_len, s.shared_len, mul(s.batch, s.nonshared_len), cfg);
}

PartCounts macs(Method method, const WorkloadShape& shape, const MlaConfig& cfg) {
  return cost(method, shape, cfg).macs;
}

PartCounts hbm_elems(Method method, const WorkloadShape& shape, const MlaConfig& cfg) {
  return cost(method, shape, cfg).hbm_elems;
}

double part_time(double flops, double bytes, const HardwareProfile& hw) {
  return std::max(flops / hw.peak_flops, bytes / hw.hbm_bandwidth);
}

PartTimes attention_time(const CostBreakdown& c, const HardwareProfile& hw) {
  auto t = [&](std::uint64_t m, std::uint64_t e) {
    return part_time(2.0 * static_cast<double>(m), static_cast<double>(e) * hw.dtype_bytes, hw);
  };
  return {t(c.macs.shared, c.hbm_elems.shared), t(c.macs.nonshared, c.hbm_elems.nonshared)};
}

double roofline_throughput(Method method, const WorkloadShape& shape, const MlaConfig& cfg,
                           const HardwareProfile& hw) {
  hw.validate();
  const std::uint64_t tokens = mul(shape.batch, shape.query_len);
  if (tokens == 0) throw ArgumentError("roofline_throughput: B·S_q must be >= 1");
  const double t = attention_time(cost(method, shape, cfg), hw).total();
  return t > 0 ? static_cast<double>(tokens) / t : std::numeric_limits<double>::infinity();
}

Crossover crossover_batch(const MlaConfig& cfg, const HardwareProfile& hw, std::uint64_t max_batch) {
  hw.validate();
  if (max_batch == 0) throw ArgumentError("crossover_batch: max_batch must be >= 1");
  const double expanded = static_cast<double>(expanded_coefficient(cfg));
  const double absorbed = static_cast<double>(absorb_mac_coefficient(cfg));

  Crossover out;
  out.analytic = (expanded * hw.dtype_bytes / hw.hbm_bandwidth) / (2.0 * absorbed / hw.peak_flops);

  // The shared part is independent of L_s up to a common factor; evaluate at L_s = 1.
  auto faster = [&](std::uint64_t b) {
    const WorkloadShape shape{b, 1, 1, 0};
    const double naive = attention_time(cost(Method::Naive, shape, cfg), hw).shared;
    const double absorb = attention_time(cost(Method::Absorb, shape, cfg), hw).shared;
    return naive < absorb;
  };
  // Naive shared time grows slower in B than absorb, so the winning set is a
  // suffix of [1, max_batch]; binary search its start.
  if (!faster(max_batch)) {
    out.batch = max_batch;
    out.rounded = max_batch;
    out.capped = true;
    return out;
  }
  std::uint64_t lo = 1, hi = max_batch;
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (faster(mid)) hi = mid;
    else lo = mid + 1;
  }
  out.batch = lo;
  out.rounded = std::bit_ceil(lo);
  return out;
}

void ParallelismConfig::validate() const {
  if (devices == 0 || dp == 0 || tp == 0 || sp == 0 || layers == 0 || tp_cache_share == 0) {
    throw ArgumentError("parallelism: counts must be >= 1");
  }
  if (devices % (dp * tp * sp) != 0) {
    throw ArgumentError("parallelism: dp·tp·sp must divide the device count");
  }
  if (tp % tp_cache_share != 0) throw ArgumentError("parallelism: tp_cache_share must divide tp");
  if (!(weight_params >= 0) || !(weight_dtype_bytes > 0) || !(cache_dtype_bytes > 0)) {
    throw ArgumentError("parallelism: weight size and dtype widths must be positive");
  }
}

ParallelismConfig deepseek_v3_cluster() { return {}; }

FootprintReport hbm_footprint(const MlaConfig& cfg, const ParallelismConfig& par, std::uint64_t batch,
                              std::uint64_t max_seq, std::uint64_t shared_len, bool use_typhoon) {
  par.validate();
  const double layers = static_cast<double>(par.layers);
  const double per_replica_batch = static_cast<double>(batch / par.dp);

  FootprintReport r;
  r.weights = par.weight_params * par.weight_dtype_bytes / static_cast<double>(par.devices);
  r.compressed_cache = layers * per_replica_batch * static_cast<double>(max_seq) *
                       static_cast<double>(latent_coefficient(cfg)) * par.cache_dtype_bytes /
                       static_cast<double>(par.sp * par.tp_cache_share);
  if (use_typhoon) {
    r.expanded_shared = layers * static_cast<double>(shared_len) *
                        static_cast<double>(expanded_coefficient(cfg)) * par.cache_dtype_bytes /
                        static_cast<double>(par.tp * par.sp);
  }
  const double baseline = r.weights + r.compressed_cache;
  r.total = baseline + r.expanded_shared;
  r.overhead_ratio = baseline > 0 ? r.expanded_shared / baseline : 0.0;

  std::ostringstream a;
  a << "weights spread evenly over " << par.devices << " devices; compressed cache split by sp=" << par.sp
    << " x tp_cache_share=" << par.tp_cache_share << ", per-replica batch floor(B/" << par.dp
    << "); expanded shared prefix split evenly by tp*sp=" << par.tp * par.sp
    << "; every sequence holds max_seq compressed tokens including the prefix";
  r.assumptions = a.str();
  return r;
}

}  // namespace hmla::cost
