#include "hmla/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

namespace hmla {

template <typename T>
AttentionPartial<T> combine_lse(const AttentionPartial<T>& a, const AttentionPartial<T>& b) {
  if (a.output.rows() != b.output.rows() || a.output.cols() != b.output.cols() ||
      a.lse.size() != b.lse.size() || a.lse.size() != a.output.rows()) {
    throw ShapeError("combine_lse: partials have different shapes");
  }
  constexpr T neg_inf = -std::numeric_limits<T>::infinity();
  const std::size_t H = a.num_heads();
  const std::size_t dv = a.output.cols();
  AttentionPartial<T> out{Matrix<T>(H, dv), std::vector<T>(H, neg_inf)};
  for (std::size_t h = 0; h < H; ++h) {
    const T la = a.lse[h];
    const T lb = b.lse[h];
    if (la == neg_inf && lb == neg_inf) continue;
    const T m = std::max(la, lb);
    const T wa = std::exp(la - m);
    const T wb = std::exp(lb - m);
    const T denom = wa + wb;
    const auto oa = a.output.row(h);
    const auto ob = b.output.row(h);
    auto dst = out.output.row(h);
    for (std::size_t d = 0; d < dv; ++d) dst[d] = (wa * oa[d] + wb * ob[d]) / denom;
    out.lse[h] = m + std::log(denom);
  }
  return out;
}

template <typename T>
AttentionPartial<T> typhoon_decode_step(const QueryState<T>& q, const SharedPrefixCache<T>* shared,
                                        std::span<const LatentKv<T>> tail, const MlaWeights<T>& w, T scale,
                                        std::optional<std::size_t> tail_visible) {
  const MlaConfig& cfg = w.config;
  const std::size_t visible = std::min(tail_visible.value_or(tail.size()), tail.size());
  const bool has_shared = shared != nullptr && shared->length() > 0;
  if (!has_shared && visible == 0) {
    throw ArgumentError("typhoon_decode_step: both shared prefix and tail are empty");
  }
  auto stage1 = has_shared ? attend_naive<T>(q, shared->expanded(), scale)
                           : AttentionPartial<T>::empty(cfg.num_heads, cfg.v_head_dim);
  if (visible == 0) return stage1;
  auto stage2 = attend_absorb<T>(q, tail, w, scale, AttendOptions{visible, false});
  if (!has_shared) return stage2;
  return combine_lse(stage1, stage2);
}

std::string_view to_string(PolicyMode m) {
  switch (m) {
    case PolicyMode::Auto: return "auto";
    case PolicyMode::ForceHybrid: return "force-hybrid";
    case PolicyMode::ForceAbsorb: return "force-absorb";
  }
  return "unknown";
}

std::string_view to_string(DecodePath p) { return p == DecodePath::Hybrid ? "hybrid" : "absorb"; }

PolicyMode parse_policy_mode(std::string_view text) {
  if (text == "auto") return PolicyMode::Auto;
  if (text == "force-hybrid") return PolicyMode::ForceHybrid;
  if (text == "force-absorb") return PolicyMode::ForceAbsorb;
  throw ArgumentError("unknown policy mode '" + std::string(text) + "'");
}

DecodePath FallbackPolicy::resolve(std::size_t batch) const {
  if (threshold_batch == 0) throw ArgumentError("FallbackPolicy: threshold must be >= 1");
  switch (mode) {
    case PolicyMode::ForceHybrid: return DecodePath::Hybrid;
    case PolicyMode::ForceAbsorb: return DecodePath::Absorb;
    case PolicyMode::Auto: break;
  }
  return batch < threshold_batch ? DecodePath::Absorb : DecodePath::Hybrid;
}

FallbackPolicy FallbackPolicy::for_hardware(const MlaConfig& cfg, const cost::HardwareProfile& hw,
                                            PolicyMode mode) {
  const auto c = cost::crossover_batch(cfg, hw);
  return {static_cast<std::size_t>(c.rounded), mode};
}

template <typename T>
BatchDecodeResult<T> batched_decode(std::span<const DecodeRequest<T>> requests, const KvStore<T>& store,
                                    const MlaWeights<T>& w, const FallbackPolicy& policy, T scale) {
  const MlaConfig& cfg = w.config;
  const std::uint64_t expanded_coef = cost::expanded_coefficient(cfg);
  const std::uint64_t absorb_coef = cost::absorb_mac_coefficient(cfg);
  const std::uint64_t latent_coef = cost::latent_coefficient(cfg);

  // Resolve handles and group by prefix; requests without a prefix form their own group.
  constexpr PrefixId kNoPrefix = std::numeric_limits<PrefixId>::max();
  std::vector<SequenceHandle> handles;
  std::map<PrefixId, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    handles.push_back(store.paged().handle(requests[i].sequence));
    const auto& h = handles.back();
    if (h.prefix && !store.find_prefix(*h.prefix)) {
      throw NotFoundError("batched_decode: sequence " + std::to_string(h.id) + " refers to unknown prefix " +
                          std::to_string(*h.prefix));
    }
    groups[h.prefix.value_or(kNoPrefix)].push_back(i);
  }

  BatchDecodeResult<T> out;
  out.outputs.resize(requests.size());
  out.partials.resize(requests.size());
  out.paths.resize(requests.size());

  for (const auto& [prefix_id, members] : groups) {
    const SharedPrefixCache<T>* shared = prefix_id == kNoPrefix ? nullptr : &store.prefix(prefix_id);
    const std::uint64_t shared_len = shared ? shared->length() : 0;
    // Without a shared prefix both paths are the same absorb computation.
    const DecodePath path = shared_len == 0 ? DecodePath::Absorb : policy.resolve(members.size());
    if (path == DecodePath::Hybrid) out.cost.stage1_elems += shared_len * expanded_coef;
    else out.cost.stage2_elems += shared_len * latent_coef;

    for (std::size_t i : members) {
      const DecodeRequest<T>& req = requests[i];
      const auto tail = store.paged().gather_sequence(req.sequence);
      const std::size_t visible = std::min(req.tail_visible.value_or(tail.size()), tail.size());

      AttentionPartial<T> partial;
      if (path == DecodePath::Hybrid) {
        partial = typhoon_decode_step<T>(req.query, shared, tail, w, scale, visible);
        out.cost.stage1_macs += shared_len * expanded_coef;
        out.cost.combine_elems += 2 * cfg.num_heads * (cfg.v_head_dim + 1);
        ++out.cost.hybrid_queries;
      } else {
        std::vector<LatentKv<T>> context;
        if (shared) context.assign(shared->latents().begin(), shared->latents().end());
        context.insert(context.end(), tail.begin(), tail.end());
        partial = attend_absorb<T>(req.query, context, w, scale, AttendOptions{shared_len + visible, false});
        out.cost.stage2_macs += shared_len * absorb_coef;
        ++out.cost.absorb_queries;
      }
      out.cost.stage2_macs += visible * absorb_coef;
      out.cost.stage2_elems += visible * latent_coef;
      out.outputs[i] = output_projection(partial.output, w);
      out.partials[i] = std::move(partial);
      out.paths[i] = path;
    }
  }
  return out;
}

template <typename T>
std::vector<PrefillResult<T>> prefill(PrefixId prefix_id, std::size_t prefix_len,
                                      std::span<const Matrix<T>> requests, const MlaWeights<T>& w,
                                      KvStore<T>& store) {
  const MlaConfig& cfg = w.config;
  if (requests.empty()) throw ArgumentError("prefill: empty batch");
  for (const auto& r : requests) {
    if (r.cols() != cfg.model_dim) throw ShapeError("prefill: hidden width != model_dim");
    if (r.rows() < prefix_len || r.rows() == 0) {
      throw ArgumentError("prefill: request shorter than the declared prefix or empty");
    }
  }
  // The declaration is only valid if every request really starts with the prefix.
  const Matrix<T>& first = requests.front();
  for (const auto& r : requests) {
    for (std::size_t t = 0; t < prefix_len; ++t) {
      if (!std::ranges::equal(r.row(t), first.row(t))) {
        throw ArgumentError("prefill: request prefix differs from the declared shared prefix");
      }
    }
  }

  std::optional<PrefixId> prefix;
  if (prefix_len > 0) {
    prefix = prefix_id;
    if (auto existing = store.find_prefix(prefix_id)) {
      if (existing->length() != prefix_len) {
        throw ArgumentError("prefill: prefix " + std::to_string(prefix_id) + " already sealed with length " +
                            std::to_string(existing->length()));
      }
    } else {
      std::vector<LatentKv<T>> latents;
      latents.reserve(prefix_len);
      for (std::size_t t = 0; t < prefix_len; ++t) latents.push_back(project_kv<T>(first.row(t), w, t));
      store.add_prefix(seal_shared_prefix<T>(prefix_id, std::move(latents), w));
    }
  }

  std::vector<PrefillResult<T>> results;
  results.reserve(requests.size());
  for (const auto& r : requests) {
    SequenceHandle h = store.paged().register_sequence(prefix);
    for (std::size_t t = prefix_len; t < r.rows(); ++t) {
      h = store.paged().append_token(h.id, project_kv<T>(r.row(t), w, t));
    }
    const std::size_t last = r.rows() - 1;
    results.push_back({h, project_query<T>(r.row(last), w, last)});
  }
  return results;
}

#define HMLA_INSTANTIATE_HYBRID(T)                                                                       \
  template AttentionPartial<T> combine_lse(const AttentionPartial<T>&, const AttentionPartial<T>&);      \
  template AttentionPartial<T> typhoon_decode_step(const QueryState<T>&, const SharedPrefixCache<T>*,    \
                                                   std::span<const LatentKv<T>>, const MlaWeights<T>&, T, \
                                                   std::optional<std::size_t>);                          \
  template BatchDecodeResult<T> batched_decode(std::span<const DecodeRequest<T>>, const KvStore<T>&,     \
                                               const MlaWeights<T>&, const FallbackPolicy&, T);          \
  template std::vector<PrefillResult<T>> prefill(PrefixId, std::size_t, std::span<const Matrix<T>>,      \
                                                 const MlaWeights<T>&, KvStore<T>&);

HMLA_INSTANTIATE_HYBRID(float)
HMLA_INSTANTIATE_HYBRID(double)

#undef HMLA_INSTANTIATE_HYBRID

}  // namespace hmla
