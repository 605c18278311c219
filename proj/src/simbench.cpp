#include "hmla/simbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <memory>
#include <random>
#include <sstream>

namespace hmla::sim {

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

double parse_number(const std::string& text, const std::string& whole) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ArgumentError("bad length distribution '" + whole + "'");
  return v;
}

}  // namespace

LengthDist LengthDist::parse(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.size() == 2 && parts[0] == "fixed") return {Kind::Fixed, parse_number(parts[1], text), 0};
  if (parts.size() == 3 && parts[0] == "uniform") {
    return {Kind::Uniform, parse_number(parts[1], text), parse_number(parts[2], text)};
  }
  if (parts.size() == 3 && parts[0] == "lognormal") {
    return {Kind::LogNormal, parse_number(parts[1], text), parse_number(parts[2], text)};
  }
  throw ArgumentError("bad length distribution '" + text + "' (fixed:N | uniform:A:B | lognormal:MU:SIGMA)");
}

std::string LengthDist::to_string() const {
  std::ostringstream s;
  switch (kind) {
    case Kind::Fixed: s << "fixed:" << a; break;
    case Kind::Uniform: s << "uniform:" << a << ":" << b; break;
    case Kind::LogNormal: s << "lognormal:" << a << ":" << b; break;
  }
  return s.str();
}

double LengthDist::mean() const {
  switch (kind) {
    case Kind::Fixed: return a;
    case Kind::Uniform: return 0.5 * (a + b);
    case Kind::LogNormal: return std::exp(a + 0.5 * b * b);
  }
  return 0;
}

void LengthDist::validate(std::size_t min_len) const {
  const double lo = static_cast<double>(min_len);
  auto integral = [](double v) { return v >= 0 && std::floor(v) == v; };
  switch (kind) {
    case Kind::Fixed:
      if (!integral(a) || a < lo) throw ArgumentError("fixed length must be an integer >= " + std::to_string(min_len));
      break;
    case Kind::Uniform:
      if (!integral(a) || !integral(b) || a < lo || b < a) {
        throw ArgumentError("uniform lengths need integers " + std::to_string(min_len) + " <= a <= b");
      }
      break;
    case Kind::LogNormal:
      if (!std::isfinite(a) || !(b > 0) || !std::isfinite(b)) {
        throw ArgumentError("lognormal needs finite mu and sigma > 0");
      }
      break;
  }
}

void WorkloadSpec::validate() const {
  if (batch_size == 0) throw ArgumentError("workload: batch_size must be >= 1");
  tail.validate(0);
  generation.validate(1);
}

std::vector<Request> generate_workload(const WorkloadSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto draw = [&rng](const LengthDist& d, std::size_t min_len) -> std::size_t {
    switch (d.kind) {
      case LengthDist::Kind::Fixed: return static_cast<std::size_t>(d.a);
      case LengthDist::Kind::Uniform: {
        std::uniform_int_distribution<std::size_t> u(static_cast<std::size_t>(d.a), static_cast<std::size_t>(d.b));
        return u(rng);
      }
      case LengthDist::Kind::LogNormal: {
        std::lognormal_distribution<double> ln(d.a, d.b);
        return std::max(min_len, static_cast<std::size_t>(std::llround(ln(rng))));
      }
    }
    return min_len;
  };
  std::vector<Request> out;
  out.reserve(spec.request_count);
  for (std::size_t i = 0; i < spec.request_count; ++i) {
    const std::size_t tail = draw(spec.tail, 0);
    const std::size_t gen = draw(spec.generation, 1);
    out.push_back({i, tail, gen});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

enum class EffectivePath { Naive, Absorb, Hybrid };

const char* path_name(EffectivePath p) {
  switch (p) {
    case EffectivePath::Naive: return "naive";
    case EffectivePath::Absorb: return "absorb";
    case EffectivePath::Hybrid: return "hybrid";
  }
  return "?";
}

struct StepModel {
  ComponentTimes times;
  cost::PartTimes attention;
  cost::CostBreakdown counts;
  double hbm_bytes = 0;
};

StepModel model_step(EffectivePath path, std::uint64_t batch, std::uint64_t shared_len,
                     std::uint64_t nonshared_tokens, const MlaConfig& cfg, const cost::HardwareProfile& hw) {
  using cost::Method;
  const Method m = path == EffectivePath::Naive    ? Method::Naive
                   : path == EffectivePath::Hybrid ? Method::Typhoon
                                                   : Method::Absorb;
  StepModel s;
  s.counts = cost::ragged_cost(m, batch, 1, shared_len, nonshared_tokens, cfg);
  s.attention = cost::attention_time(s.counts, hw);
  s.hbm_bytes = static_cast<double>(s.counts.hbm_elems.total()) * hw.dtype_bytes;
  switch (path) {
    case EffectivePath::Naive: s.times.stage1_attn = s.attention.total(); break;
    case EffectivePath::Absorb: s.times.stage2_attn = s.attention.total(); break;
    case EffectivePath::Hybrid:
      s.times.stage1_attn = s.attention.shared;
      s.times.stage2_attn = s.attention.nonshared;
      break;
  }
  if (path != EffectivePath::Naive) {
    const double b = static_cast<double>(batch);
    const double kb = static_cast<double>(cfg.num_heads * cfg.kv_lora_rank * cfg.nope_head_dim);
    const double vb = static_cast<double>(cfg.num_heads * cfg.kv_lora_rank * cfg.v_head_dim);
    s.times.wkvb1_proj = cost::part_time(2.0 * b * kb, kb * hw.dtype_bytes, hw);
    s.times.wkvb2_proj = cost::part_time(2.0 * b * vb, vb * hw.dtype_bytes, hw);
    s.hbm_bytes += (kb + vb) * hw.dtype_bytes;
  }
  if (path == EffectivePath::Hybrid) {
    const double elems = 2.0 * static_cast<double>(batch * cfg.num_heads * (cfg.v_head_dim + 1));
    s.times.combine_lse = cost::part_time(0.0, elems * hw.dtype_bytes, hw);
    s.hbm_bytes += elems * hw.dtype_bytes;
  }
  return s;
}

struct Active {
  Request req;
  SequenceId seq = 0;
  std::size_t generated = 0;
  std::size_t context = 0;  // non-shared tokens held in pages
  std::size_t reserved_blocks = 0;
};

// Real-math side of the simulation: weights, store and hidden-state source.
struct MathEngine {
  MlaWeights<float> weights;
  KvStore<float> store;
  std::size_t prefix_len;
  Matrix<float> prefix_rows;
  std::mt19937_64 rng;
  std::normal_distribution<float> normal{0.0f, 1.0f};
  float scale;

  MathEngine(const MlaConfig& cfg, std::size_t blocks, std::size_t block_size, std::size_t prefix,
             std::uint64_t seed, double amplitude)
      : weights(MlaWeights<float>::random(cfg, seed, amplitude)),
        store(cfg, blocks, block_size),
        prefix_len(prefix),
        prefix_rows(prefix, cfg.model_dim),
        rng(seed ^ 0x9e3779b97f4a7c15ULL),
        scale(static_cast<float>(default_softmax_scale(cfg))) {
    for (float& v : prefix_rows.values()) v = normal(rng);
  }

  std::vector<float> hidden() {
    std::vector<float> h(weights.config.model_dim);
    for (float& v : h) v = normal(rng);
    return h;
  }

  SequenceId admit(std::size_t tail_len) {
    const std::size_t rows = prefix_len + tail_len;
    if (rows == 0) return store.paged().register_sequence().id;
    Matrix<float> m(rows, weights.config.model_dim);
    for (std::size_t r = 0; r < prefix_len; ++r) std::ranges::copy(prefix_rows.row(r), m.row(r).begin());
    for (std::size_t r = prefix_len; r < rows; ++r) {
      for (float& v : m.row(r)) v = normal(rng);
    }
    const Matrix<float> batch[] = {std::move(m)};
    return prefill<float>(1, prefix_len, batch, weights, store).front().handle.id;
  }
};

}  // namespace

SimReport run_simulation(const WorkloadSpec& spec, cost::Method method, const MlaConfig& cost_cfg,
                         const cost::HardwareProfile& hw, const FallbackPolicy& policy, const SimOptions& opts) {
  spec.validate();
  cost_cfg.validate();
  hw.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto requests = generate_workload(spec);

  std::size_t longest = 1;
  for (const auto& r : requests) longest = std::max(longest, r.tail_len + r.gen_len);
  const std::size_t block_size = opts.block_size;
  const std::size_t blocks =
      opts.cache_blocks > 0 ? opts.cache_blocks : spec.batch_size * blocks_for(longest, block_size);

  SimReport rep;
  rep.method = std::string(cost::to_string(method));
  rep.cost_model = cost_cfg.name;
  rep.hardware = hw.name;
  rep.batch_size = spec.batch_size;
  rep.threshold_batch = policy.threshold_batch;
  rep.shared_len_modeled = spec.prefix_length;

  std::unique_ptr<MathEngine> math;
  std::unique_ptr<BlockAllocator> own_alloc;
  if (opts.math == MathMode::Full) {
    const std::size_t exec_prefix = std::min(spec.prefix_length, opts.math_prefix_cap);
    math = std::make_unique<MathEngine>(opts.math_config, blocks, block_size, exec_prefix, spec.seed + 1,
                                        opts.weight_amplitude);
    rep.math_model = opts.math_config.name;
    rep.shared_len_executed = exec_prefix;
  } else {
    own_alloc = std::make_unique<BlockAllocator>(blocks, block_size);
    rep.math_model = "off";
  }
  const BlockAllocator& alloc = math ? math->store.paged().allocator() : *own_alloc;

  std::deque<Request> pending(requests.begin(), requests.end());
  std::vector<Active> active;
  std::size_t outstanding = 0;  // blocks reserved by active sequences but not yet taken

  auto take_slot = [&](Active& a, const LatentKv<float>* latent) {
    const std::size_t before = alloc.used_blocks();
    if (math) math->store.paged().append_token(a.seq, *latent);
    else own_alloc->append_slot(a.seq);
    const std::size_t taken = alloc.used_blocks() - before;
    a.reserved_blocks -= taken;
    outstanding -= taken;
    ++a.context;
  };

  while (!pending.empty() || !active.empty()) {
    // Admission, FIFO, gated on each request's full page budget.
    while (active.size() < spec.batch_size && !pending.empty()) {
      const Request& next = pending.front();
      const std::size_t need = blocks_for(next.tail_len + next.gen_len, block_size);
      if (need > alloc.total_blocks()) {
        throw CapacityError("request " + std::to_string(next.id) + " needs " + std::to_string(need) +
                            " blocks but the pool holds " + std::to_string(alloc.total_blocks()) +
                            " (admission stalls so far: " + std::to_string(rep.admission_stalls) + ")");
      }
      if (alloc.free_blocks() < outstanding + need) {
        ++rep.admission_stalls;
        break;
      }
      Active a{next, 0, 0, 0, need};
      outstanding += need;
      if (math) {
        const std::size_t before = alloc.used_blocks();
        a.seq = math->admit(next.tail_len);
        const std::size_t taken = alloc.used_blocks() - before;
        a.reserved_blocks -= taken;
        outstanding -= taken;
        a.context = next.tail_len;
      } else {
        a.seq = own_alloc->register_sequence(spec.prefix_length > 0 ? std::optional<PrefixId>(1) : std::nullopt).id;
        for (std::size_t t = 0; t < next.tail_len; ++t) take_slot(a, nullptr);
      }
      active.push_back(a);
      pending.pop_front();
    }
    if (active.empty()) throw CapacityError("simulation stalled with no admissible request");

    // One decode step: every active sequence appends and attends with one new token.
    const std::size_t B = active.size();
    std::vector<DecodeRequest<float>> decode;
    if (math) decode.reserve(B);
    for (Active& a : active) {
      if (math) {
        const auto h = math->hidden();
        const std::size_t pos = math->prefix_len + a.context;
        const auto latent = project_kv<float>(h, math->weights, pos);
        take_slot(a, &latent);
        decode.push_back({project_query<float>(h, math->weights, pos), a.seq, std::nullopt});
      } else {
        take_slot(a, nullptr);
      }
    }
    std::uint64_t nonshared = 0;
    for (const Active& a : active) nonshared += a.context;

    EffectivePath path = EffectivePath::Absorb;
    if (method == cost::Method::Naive) path = EffectivePath::Naive;
    else if (method == cost::Method::Typhoon && spec.prefix_length > 0 && policy.resolve(B) == DecodePath::Hybrid)
      path = EffectivePath::Hybrid;

    if (math) {
      const auto& w = math->weights;
      std::vector<std::vector<float>> outputs;
      if (path == EffectivePath::Naive) {
        const SharedPrefixCache<float>* shared = math->store.find_prefix(1).get();
        for (const auto& d : decode) {
          std::vector<ExpandedKv<float>> kv;
          if (shared) kv.assign(shared->expanded().begin(), shared->expanded().end());
          for (const auto& l : math->store.paged().gather_sequence(d.sequence)) kv.push_back(expand_kv(l, w));
          outputs.push_back(output_projection(attend_naive<float>(d.query, kv, math->scale).output, w));
        }
      } else {
        const PolicyMode mode = path == EffectivePath::Hybrid ? PolicyMode::ForceHybrid : PolicyMode::ForceAbsorb;
        outputs = batched_decode<float>(decode, math->store, w, {policy.threshold_batch, mode}, math->scale).outputs;
      }
      if (opts.check_parity) {
        const PolicyMode other = path == EffectivePath::Hybrid ? PolicyMode::ForceAbsorb : PolicyMode::ForceHybrid;
        const auto alt = batched_decode<float>(decode, math->store, w, {policy.threshold_batch, other}, math->scale);
        for (std::size_t i = 0; i < outputs.size(); ++i) {
          rep.max_parity_error =
              std::max(rep.max_parity_error, relative_error<float>(outputs[i], alt.outputs[i]));
          ++rep.parity_checks;
        }
      }
    }

    const StepModel sm = model_step(path, B, spec.prefix_length, nonshared, cost_cfg, hw);
    const double step_time = sm.times.total();
    rep.times.stage1_attn += sm.times.stage1_attn;
    rep.times.stage2_attn += sm.times.stage2_attn;
    rep.times.wkvb1_proj += sm.times.wkvb1_proj;
    rep.times.wkvb2_proj += sm.times.wkvb2_proj;
    rep.times.combine_lse += sm.times.combine_lse;
    rep.shared_attn_time += sm.attention.shared;
    rep.nonshared_attn_time += sm.attention.nonshared;
    rep.modeled_time += step_time;
    if (path == EffectivePath::Hybrid) ++rep.hybrid_steps;
    if (opts.keep_trace) {
      rep.trace.push_back({rep.steps, B, path_name(path), nonshared, sm.counts.macs.shared,
                           sm.counts.macs.nonshared, sm.hbm_bytes, step_time});
    }
    ++rep.steps;
    rep.total_tokens += B;
    rep.peak_blocks_used = std::max(rep.peak_blocks_used, alloc.used_blocks());

    // Release finished sequences before the next refill.
    std::vector<Active> still;
    still.reserve(active.size());
    for (Active& a : active) {
      if (++a.generated < a.req.gen_len) {
        still.push_back(a);
        continue;
      }
      outstanding -= a.reserved_blocks;
      if (math) math->store.paged().release_sequence(a.seq);
      else own_alloc->release(a.seq);
      ++rep.requests_completed;
    }
    active = std::move(still);
  }

  if (math) rep.prefixes_built = math->store.prefixes_built();
  rep.throughput = rep.modeled_time > 0 ? static_cast<double>(rep.total_tokens) / rep.modeled_time : 0.0;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

std::vector<SpeedupRow> speedup_report(const WorkloadSpec& spec, const std::vector<std::size_t>& batches,
                                       const MlaConfig& cost_cfg, const cost::HardwareProfile& hw,
                                       const FallbackPolicy& policy) {
  if (batches.empty()) throw ArgumentError("speedup_report: empty batch sweep");
  SimOptions opts;
  opts.keep_trace = false;
  std::vector<SpeedupRow> rows;
  for (std::size_t b : batches) {
    WorkloadSpec s = spec;
    s.batch_size = b;
    SpeedupRow row;
    row.batch = b;
    row.naive = run_simulation(s, cost::Method::Naive, cost_cfg, hw, policy, opts).throughput;
    row.absorb = run_simulation(s, cost::Method::Absorb, cost_cfg, hw, policy, opts).throughput;
    const SimReport t = run_simulation(s, cost::Method::Typhoon, cost_cfg, hw, policy, opts);
    row.typhoon = t.throughput;
    row.hybrid_steps = t.hybrid_steps;
    row.speedup_vs_absorb = row.typhoon / row.absorb;
    row.speedup_vs_best = row.typhoon / std::max(row.naive, row.absorb);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace hmla::sim
