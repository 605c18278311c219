#include "hmla/app/commands.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "hmla/costmodel.hpp"
#include "hmla/equivalence.hpp"
#include "hmla/errors.hpp"
#include "hmla/simbench.hpp"

namespace hmla::app {

using nlohmann::json;

namespace {

std::uint64_t parse_u64(const std::string& s) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size() || s.front() == '-') throw ArgumentError("expected a count, got '" + s + "'");
  return v;
}

RunManifest manifest_for(const CommandContext& ctx, const std::string& command, json params) {
  RunManifest m;
  m.command = command;
  m.config = ctx.config.snapshot();
  m.seed = ctx.seed;
  m.parameters = std::move(params);
  m.tool_version = tool_version();
  m.timestamp = utc_timestamp();
  return m;
}

// Value from a flag, else from the config section, else the fallback.
std::string pick(const std::optional<std::string>& flag, const Settings& extra, const std::string& key,
                 const std::string& fallback) {
  if (flag) return *flag;
  if (auto it = extra.find(key); it != extra.end()) return it->second;
  return fallback;
}

void check_keys(const Settings& extra, const std::string& section, const std::set<std::string>& known) {
  for (const auto& [k, v] : extra) {
    if (k.rfind(section + ".", 0) != 0) continue;
    if (!known.count(k.substr(section.size() + 1))) throw ArgumentError("config: unknown key '" + k + "'");
  }
}

}  // namespace

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ArgumentError("empty item in list '" + text + "'");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ArgumentError("empty list");
  return out;
}

std::vector<std::uint64_t> parse_count_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(text)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      out.push_back(parse_u64(item));
      continue;
    }
    const std::uint64_t lo = parse_u64(item.substr(0, colon));
    const std::uint64_t hi = parse_u64(item.substr(colon + 1));
    if (lo == 0 || lo > hi) throw ArgumentError("bad range '" + item + "'");
    for (std::uint64_t v = lo; v <= hi; v *= 2) {
      out.push_back(v);
      if (v > hi / 2) break;
    }
  }
  return out;
}

int cmd_equivalence(const CommandContext& ctx, const EquivalenceArgs& args) {
  if (args.trials == 0) throw ArgumentError("equivalence: --trials must be >= 1");
  std::vector<int> bits;
  if (args.precision == "32" || args.precision == "both") bits.push_back(32);
  if (args.precision == "64" || args.precision == "both") bits.push_back(64);
  if (bits.empty()) throw ArgumentError("equivalence: --precision must be 32, 64 or both");

  Table t{{"precision", "trials", "naive_vs_absorb", "naive_vs_typhoon", "absorb_vs_typhoon", "lse", "tolerance",
           "pass"},
          {}};
  bool ok = true;
  for (int b : bits) {
    const EquivalenceStats s = b == 32 ? run_equivalence<float>(args.trials, ctx.seed, args.inject_fault)
                                       : run_equivalence<double>(args.trials, ctx.seed, args.inject_fault);
    const double tol = args.tolerance.value_or(b == 32 ? 1e-5 : 1e-10);
    const bool pass = s.worst() <= tol;
    ok = ok && pass;
    t.add({b, s.trials, s.naive_vs_absorb, s.naive_vs_typhoon, s.absorb_vs_typhoon, s.lse, tol, pass});
  }
  json params{{"trials", args.trials}, {"precision", args.precision}, {"inject_fault", args.inject_fault}};
  if (args.tolerance) params["tolerance"] = *args.tolerance;
  ctx.sink.emit("equivalence", t, manifest_for(ctx, "equivalence", params));
  if (!ok && ctx.err) *ctx.err << "equivalence: relative error above tolerance\n";
  return ok ? kExitOk : kExitViolation;
}

int cmd_roofline(const CommandContext& ctx, const RooflineArgs& args) {
  const Settings& extra = ctx.config.extra;
  check_keys(extra, "sweep", {"batches", "methods", "shared_len", "nonshared_len", "query_len", "hardware"});
  const auto batches = parse_count_list(pick(args.batches, extra, "sweep.batches", "1:1024"));
  const auto shared = parse_count_list(pick(args.shared_len, extra, "sweep.shared_len", "4096"));
  const auto nonshared = parse_count_list(pick(args.nonshared_len, extra, "sweep.nonshared_len", "0"));
  const auto qlens = parse_count_list(pick(args.query_len, extra, "sweep.query_len", "1"));
  std::vector<cost::Method> methods;
  for (const auto& m : split_list(pick(args.methods, extra, "sweep.methods", "naive,absorb,typhoon")))
    methods.push_back(cost::parse_method(m));
  std::vector<cost::HardwareProfile> hws;
  if (auto h = pick(args.hardware, extra, "sweep.hardware", ""); !h.empty()) {
    for (const auto& name : split_list(h)) hws.push_back(cost::hardware_preset(name));
  } else {
    hws.push_back(ctx.config.hardware);
  }
  for (auto b : batches)
    if (b == 0) throw ArgumentError("roofline: batch sizes must be >= 1");
  for (auto q : qlens)
    if (q == 0) throw ArgumentError("roofline: query length must be >= 1");

  const MlaConfig& cfg = ctx.config.model;
  Table t{{"method", "B", "S_q", "L_s", "L_n", "macs", "hbm_bytes", "time_s", "tokens_per_s", "hardware"}, {}};
  for (const auto& hw : hws) {
    for (auto ls : shared) {
      for (auto ln : nonshared) {
        for (auto sq : qlens) {
          for (auto m : methods) {
            for (auto b : batches) {
              const cost::WorkloadShape shape{b, sq, ls, ln};
              const auto c = cost::cost(m, shape, cfg);
              const double time = cost::attention_time(c, hw).total();
              const double bytes = static_cast<double>(c.hbm_elems.total()) * hw.dtype_bytes;
              t.add({std::string(cost::to_string(m)), b, sq, ls, ln, c.macs.total(), bytes, time,
                     cost::roofline_throughput(m, shape, cfg, hw), hw.name});
            }
          }
          // Crossover annotation: B is the rounded switch point, time_s its analytic value.
          const auto x = cost::crossover_batch(cfg, hw);
          t.add({"crossover", x.rounded, sq, ls, ln, nullptr, nullptr, x.analytic, nullptr, hw.name});
        }
      }
    }
  }
  json params{{"batches", batches}, {"shared_len", shared}, {"nonshared_len", nonshared}, {"query_len", qlens}};
  ctx.sink.emit("roofline", t, manifest_for(ctx, "roofline", params));
  return kExitOk;
}

int cmd_threshold(const CommandContext& ctx, const ThresholdArgs& args) {
  std::vector<cost::HardwareProfile> hws;
  if (args.all_hardware) {
    for (const auto& n : cost::hardware_preset_names()) hws.push_back(cost::hardware_preset(n));
  } else {
    hws.push_back(ctx.config.hardware);
  }
  Table t{{"model", "hardware", "peak_flops", "hbm_bandwidth", "dtype_bytes", "analytic", "batch", "rounded",
           "capped"},
          {}};
  for (const auto& hw : hws) {
    const auto x = cost::crossover_batch(ctx.config.model, hw, args.max_batch);
    t.add({ctx.config.model.name, hw.name, hw.peak_flops, hw.hbm_bandwidth, hw.dtype_bytes, x.analytic, x.batch,
           x.rounded, x.capped});
  }
  ctx.sink.emit("threshold", t,
                manifest_for(ctx, "threshold", {{"all_hardware", args.all_hardware}, {"max_batch", args.max_batch}}));
  return kExitOk;
}

int cmd_footprint(const CommandContext& ctx, const FootprintArgs& args) {
  const auto batches = parse_count_list(args.batches);
  const auto seqs = parse_count_list(args.max_seqs);
  Table t{{"B", "max_seq", "L_s", "typhoon", "weights_bytes", "compressed_cache_bytes", "expanded_shared_bytes",
           "total_bytes", "overhead_pct"},
          {}};
  std::string assumptions;
  for (auto b : batches) {
    for (auto s : seqs) {
      const auto r = cost::hbm_footprint(ctx.config.model, ctx.config.parallelism, b, s, args.shared_len,
                                         !args.no_typhoon);
      assumptions = r.assumptions;
      t.add({b, s, args.shared_len, !args.no_typhoon, r.weights, r.compressed_cache, r.expanded_shared, r.total,
             100.0 * r.overhead_ratio});
    }
  }
  json params{{"batches", batches},
              {"max_seqs", seqs},
              {"shared_len", args.shared_len},
              {"typhoon", !args.no_typhoon},
              {"assumptions", assumptions}};
  ctx.sink.emit("footprint", t, manifest_for(ctx, "footprint", params));
  return kExitOk;
}

namespace {

json report_json(const sim::SimReport& r) {
  json j;
  j["method"] = r.method;
  j["cost_model"] = r.cost_model;
  j["math_model"] = r.math_model;
  j["hardware"] = r.hardware;
  j["batch_size"] = r.batch_size;
  j["threshold_batch"] = r.threshold_batch;
  j["shared_len_modeled"] = r.shared_len_modeled;
  j["shared_len_executed"] = r.shared_len_executed;
  j["requests_completed"] = r.requests_completed;
  j["total_tokens"] = r.total_tokens;
  j["steps"] = r.steps;
  j["hybrid_steps"] = r.hybrid_steps;
  j["admission_stalls"] = r.admission_stalls;
  j["peak_blocks_used"] = r.peak_blocks_used;
  j["prefixes_built"] = r.prefixes_built;
  j["times"] = {{"stage1_attn", r.times.stage1_attn},
                {"stage2_attn", r.times.stage2_attn},
                {"wkvb1_proj", r.times.wkvb1_proj},
                {"wkvb2_proj", r.times.wkvb2_proj},
                {"combine_lse", r.times.combine_lse}};
  j["shared_attn_time"] = r.shared_attn_time;
  j["nonshared_attn_time"] = r.nonshared_attn_time;
  j["modeled_time"] = r.modeled_time;
  j["throughput"] = r.throughput;
  j["wall_time_s"] = r.wall_time_s;
  j["parity_checks"] = r.parity_checks;
  j["max_parity_error"] = r.max_parity_error;
  return j;
}

}  // namespace

int cmd_simulate(const CommandContext& ctx, const SimulateArgs& args) {
  const Settings& extra = ctx.config.extra;
  check_keys(extra, "workload",
             {"batch_size", "prefix_length", "tail", "generation", "requests", "method", "math", "sweep"});
  auto num = [&](const std::optional<std::size_t>& flag, const std::string& key, std::size_t fallback) {
    if (flag) return *flag;
    if (auto it = extra.find("workload." + key); it != extra.end()) return static_cast<std::size_t>(parse_u64(it->second));
    return fallback;
  };

  sim::WorkloadSpec spec;
  spec.batch_size = num(args.batch, "batch_size", 8);
  spec.prefix_length = num(args.prefix_len, "prefix_length", 0);
  spec.tail = sim::LengthDist::parse(pick(args.tail, extra, "workload.tail", "fixed:0"));
  spec.generation = sim::LengthDist::parse(pick(args.generation, extra, "workload.generation", "fixed:4"));
  spec.request_count = num(args.requests, "requests", spec.batch_size);
  spec.seed = ctx.seed;
  spec.validate();

  sim::SimOptions opts;
  const std::string math = pick(args.math, extra, "workload.math", "off");
  if (math == "full") opts.math = sim::MathMode::Full;
  else if (math != "off") throw ArgumentError("simulate: --math must be off or full");
  opts.cache_blocks = ctx.config.cache_blocks;
  opts.block_size = ctx.config.block_size;
  opts.check_parity = args.parity;
  opts.keep_trace = !args.no_trace;

  const auto policy = ctx.config.policy();
  const auto& cfg = ctx.config.model;
  const auto& hw = ctx.config.hardware;
  json params{{"batch_size", spec.batch_size},
              {"prefix_length", spec.prefix_length},
              {"tail", spec.tail.to_string()},
              {"generation", spec.generation.to_string()},
              {"requests", spec.request_count},
              {"math", math},
              {"parity", args.parity},
              {"threshold_batch", policy.threshold_batch}};

  const std::string sweep = pick(args.sweep, extra, "workload.sweep", "");
  if (!sweep.empty()) {
    std::vector<std::size_t> batches;
    for (auto b : parse_count_list(sweep)) batches.push_back(static_cast<std::size_t>(b));
    params["sweep"] = batches;
    const auto rows = sim::speedup_report(spec, batches, cfg, hw, policy);
    Table t{{"B", "naive_tokens_per_s", "absorb_tokens_per_s", "typhoon_tokens_per_s", "speedup_vs_absorb",
             "speedup_vs_best", "hybrid_steps"},
            {}};
    for (const auto& r : rows)
      t.add({r.batch, r.naive, r.absorb, r.typhoon, r.speedup_vs_absorb, r.speedup_vs_best, r.hybrid_steps});
    ctx.sink.emit("speedup", t, manifest_for(ctx, "simulate", params));
    return kExitOk;
  }

  std::vector<cost::Method> methods;
  const std::string method = pick(args.method, extra, "workload.method", "typhoon");
  if (method == "all") methods = {cost::Method::Naive, cost::Method::Absorb, cost::Method::Typhoon};
  else methods = {cost::parse_method(method)};
  params["method"] = method;
  const RunManifest m = manifest_for(ctx, "simulate", params);

  Table summary{{"method", "B", "L_s", "requests", "tokens", "steps", "hybrid_steps", "stage1_attn_s", "stage2_attn_s",
                 "wkvb1_proj_s", "wkvb2_proj_s", "combine_lse_s", "shared_attn_s", "nonshared_attn_s",
                 "modeled_time_s", "tokens_per_s", "wall_time_s", "max_parity_error"},
                {}};
  Table trace{{"method", "step", "batch", "path", "nonshared_tokens", "macs_shared", "macs_nonshared", "hbm_bytes",
               "time_s"},
              {}};
  json reports = json::array();
  for (auto me : methods) {
    const auto r = sim::run_simulation(spec, me, cfg, hw, policy, opts);
    summary.add({r.method, r.batch_size, r.shared_len_modeled, r.requests_completed, r.total_tokens, r.steps,
                 r.hybrid_steps, r.times.stage1_attn, r.times.stage2_attn, r.times.wkvb1_proj, r.times.wkvb2_proj,
                 r.times.combine_lse, r.shared_attn_time, r.nonshared_attn_time, r.modeled_time, r.throughput,
                 r.wall_time_s, r.max_parity_error});
    for (const auto& s : r.trace)
      trace.add({r.method, s.step, s.batch, s.path, s.nonshared_tokens, s.macs_shared, s.macs_nonshared, s.hbm_bytes,
                 s.time_s});
    reports.push_back(report_json(r));
  }
  ctx.sink.emit("simulate", summary, m);
  if (ctx.sink.dir) {
    if (!args.no_trace) ctx.sink.emit("simulate.trace", trace, m);
    ctx.sink.emit_document("simulate.report", json{{"reports", reports}}, m);
  }
  bool parity_ok = true;
  for (const auto& r : reports)
    if (r["max_parity_error"].get<double>() > 1e-5) parity_ok = false;
  if (!parity_ok) {
    if (ctx.err) *ctx.err << "simulate: decode-path parity above 1e-5\n";
    return kExitViolation;
  }
  return kExitOk;
}

}  // namespace hmla::app
