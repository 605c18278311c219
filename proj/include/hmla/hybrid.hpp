#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "hmla/costmodel.hpp"
#include "hmla/kvcache.hpp"
#include "hmla/mla_core.hpp"

namespace hmla {

/// Merges attention over two disjoint context parts using their log-sum-exp
/// values. The empty partial is the identity; two empty parts give an empty
/// part. Throws ShapeError when head count or value width differ.
template <typename T>
AttentionPartial<T> combine_lse(const AttentionPartial<T>& a, const AttentionPartial<T>& b);

/// One decode query against a shared prefix and a compressed tail.
///
/// Stage 1 runs naive attention over the prefix's expanded K/V, stage 2 runs
/// absorb attention over the tail latents, and the two partials are merged
/// with combine_lse. A missing prefix or empty tail degrades to the other
/// stage alone. `tail_visible` limits how much of the tail the query sees
/// (causal boundary for multi-token queries).
template <typename T>
AttentionPartial<T> typhoon_decode_step(const QueryState<T>& q, const SharedPrefixCache<T>* shared,
                                        std::span<const LatentKv<T>> tail, const MlaWeights<T>& w, T scale,
                                        std::optional<std::size_t> tail_visible = std::nullopt);

enum class PolicyMode { Auto, ForceHybrid, ForceAbsorb };
enum class DecodePath { Hybrid, Absorb };

std::string_view to_string(PolicyMode m);
std::string_view to_string(DecodePath p);
PolicyMode parse_policy_mode(std::string_view text);

struct FallbackPolicy {
  std::size_t threshold_batch = 64;
  PolicyMode mode = PolicyMode::Auto;

  // Auto picks absorb when `batch` is below the threshold.
  DecodePath resolve(std::size_t batch) const;

  // Threshold taken from the power-of-two crossover for this hardware.
  static FallbackPolicy for_hardware(const MlaConfig& cfg, const cost::HardwareProfile& hw,
                                     PolicyMode mode = PolicyMode::Auto);
};

template <typename T>
struct DecodeRequest {
  QueryState<T> query;
  SequenceId sequence = 0;
  std::optional<std::size_t> tail_visible;
};

/// Work performed by one batched decode step, in the engine's own dims.
struct StepCost {
  std::uint64_t stage1_macs = 0;   // naive attention over shared prefixes
  std::uint64_t stage1_elems = 0;  // expanded prefix elements read (once per group)
  std::uint64_t stage2_macs = 0;   // absorb attention
  std::uint64_t stage2_elems = 0;  // latent elements read
  std::uint64_t combine_elems = 0;
  std::size_t hybrid_queries = 0;
  std::size_t absorb_queries = 0;
};

template <typename T>
struct BatchDecodeResult {
  std::vector<std::vector<T>> outputs;  // [B][model_dim], request order
  std::vector<AttentionPartial<T>> partials;
  std::vector<DecodePath> paths;
  StepCost cost;
};

/// Decodes a batch. Requests are grouped by prefix id and the fallback policy
/// is resolved per group size: the hybrid path runs typhoon_decode_step, the
/// absorb path attends over the prefix latents followed by the tail. Both
/// give the same outputs up to rounding; only the cost accounting differs.
template <typename T>
BatchDecodeResult<T> batched_decode(std::span<const DecodeRequest<T>> requests, const KvStore<T>& store,
                                    const MlaWeights<T>& w, const FallbackPolicy& policy, T scale);

template <typename T>
struct PrefillResult {
  SequenceHandle handle;
  QueryState<T> last_query;  // query of each request's final token
};

/// Prefills a batch of requests that share their first `prefix_len` tokens.
///
/// Each request is a [tokens × model_dim] matrix of hidden states. The
/// prefix rows must be identical across requests (ArgumentError otherwise).
/// The prefix is projected and sealed once under `prefix_id`, or reused if
/// the store already holds it; every request's remaining tokens are appended
/// to its own paged sequence at positions prefix_len, prefix_len+1, ...
template <typename T>
std::vector<PrefillResult<T>> prefill(PrefixId prefix_id, std::size_t prefix_len,
                                      std::span<const Matrix<T>> requests, const MlaWeights<T>& w,
                                      KvStore<T>& store);

}  // namespace hmla
