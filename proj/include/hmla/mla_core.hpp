#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hmla/numerics.hpp"

namespace hmla {

/// Shape of one MLA layer.
///
/// `qk_head_dim()` is the per-head query/key width (no-PE part plus the
/// rotary part). The compressed cache stores `latent_dim()` numbers per token:
/// the KV LoRA latent plus a single rotary key shared by all heads.
struct MlaConfig {
  std::string name = "custom";
  std::size_t model_dim = 0;
  std::size_t num_heads = 0;
  std::size_t nope_head_dim = 0;
  std::size_t rope_dim = 0;
  std::size_t v_head_dim = 0;
  std::size_t kv_lora_rank = 0;
  std::size_t q_lora_rank = 0;
  double rope_base = 10000.0;
  double norm_eps = 1e-6;

  std::size_t qk_head_dim() const { return nope_head_dim + rope_dim; }
  std::size_t latent_dim() const { return kv_lora_rank + rope_dim; }

  // Throws ArgumentError when a dimension is zero or the rotary width is odd.
  void validate() const;

  bool operator==(const MlaConfig&) const = default;
};

MlaConfig deepseek_v3();
MlaConfig kimi_k2();
// Reduced shape used for real-math simulation steps.
MlaConfig desk_scale();

// "deepseek-v3", "kimi-k2" or "desk". Throws NotFoundError otherwise.
MlaConfig model_preset(std::string_view name);
std::vector<std::string> model_preset_names();

// Builds a config from flat key/values: an optional `preset` key supplies the
// base, remaining keys (model_dim, num_heads, nope_head_dim, rope_dim,
// v_head_dim, kv_lora_rank, q_lora_rank, rope_base, norm_eps) override it.
MlaConfig model_config_from(const std::map<std::string, std::string>& kv);

// 1/sqrt(qk_head_dim); shared by every formulation.
double default_softmax_scale(const MlaConfig& cfg);

/// Projection weights of one layer. Vectors are treated as rows, so a
/// projection is `x · W` with W stored [in × out]. The KV up-projection is kept
/// per head as its two halves: `w_kb[h]` [kv_lora_rank × nope_head_dim] for
/// keys and `w_vb[h]` [kv_lora_rank × v_head_dim] for values.
template <typename T>
struct MlaWeights {
  MlaConfig config;
  Matrix<T> w_qa;   // [model_dim × q_lora_rank]
  Matrix<T> w_qb;   // [q_lora_rank × H·qk_head_dim]
  Matrix<T> w_kva;  // [model_dim × (kv_lora_rank + rope_dim)]
  std::vector<Matrix<T>> w_kb;
  std::vector<Matrix<T>> w_vb;
  Matrix<T> w_o;  // [H·v_head_dim × model_dim]
  std::vector<T> q_norm_gain;
  std::vector<T> kv_norm_gain;

  // Seeded uniform weights in [-amplitude, amplitude]; norm gains are ones.
  static MlaWeights random(const MlaConfig& cfg, std::uint64_t seed, double amplitude = 0.05);

  void validate() const;

  template <typename U>
  MlaWeights<U> cast() const {
    MlaWeights<U> out;
    out.config = config;
    out.w_qa = w_qa.template cast<U>();
    out.w_qb = w_qb.template cast<U>();
    out.w_kva = w_kva.template cast<U>();
    for (const auto& m : w_kb) out.w_kb.push_back(m.template cast<U>());
    for (const auto& m : w_vb) out.w_vb.push_back(m.template cast<U>());
    out.w_o = w_o.template cast<U>();
    out.q_norm_gain.assign(q_norm_gain.begin(), q_norm_gain.end());
    out.kv_norm_gain.assign(kv_norm_gain.begin(), kv_norm_gain.end());
    return out;
  }
};

// One compressed cache entry: the normalized latent (noPE) and the rotary key (PE).
template <typename T>
struct LatentKv {
  std::vector<T> nope;  // [kv_lora_rank]
  std::vector<T> pe;    // [rope_dim]

  bool operator==(const LatentKv&) const = default;

  template <typename U>
  LatentKv<U> cast() const {
    return {std::vector<U>(nope.begin(), nope.end()), std::vector<U>(pe.begin(), pe.end())};
  }
};

// Up-projected per-head key and value for one token.
template <typename T>
struct ExpandedKv {
  Matrix<T> k;  // [H × qk_head_dim], rotary part in the last rope_dim columns
  Matrix<T> v;  // [H × v_head_dim]

  bool operator==(const ExpandedKv&) const = default;
};

template <typename T>
struct QueryState {
  Matrix<T> q_nope;  // [H × nope_head_dim]
  Matrix<T> q_pe;    // [H × rope_dim], rotary already applied
  std::size_t position = 0;

  std::size_t num_heads() const { return q_nope.rows(); }
};

/// Attention over one part of the context, per head: the normalized output
/// and the log-sum-exp of that part's scores. A zero-length part is the
/// empty partial (zero output, lse = -inf), the identity of combine_lse.
template <typename T>
struct AttentionPartial {
  Matrix<T> output;  // [H × v_head_dim]
  std::vector<T> lse;

  static AttentionPartial empty(std::size_t num_heads, std::size_t v_head_dim);

  std::size_t num_heads() const { return output.rows(); }
  bool is_empty() const;
};

struct AttendOptions {
  // Number of leading keys that are visible; the rest are masked (causal boundary).
  std::optional<std::size_t> visible;
  // Return the empty partial instead of throwing when nothing is visible.
  bool allow_empty = false;
};

template <typename T>
QueryState<T> project_query(std::span<const T> hidden, const MlaWeights<T>& w, std::size_t position);

template <typename T>
LatentKv<T> project_kv(std::span<const T> hidden, const MlaWeights<T>& w, std::size_t position);

template <typename T>
ExpandedKv<T> expand_kv(const LatentKv<T>& latent, const MlaWeights<T>& w);

// scale · <concat(q_nope, q_pe), k_j> per head, [H × L].
template <typename T>
Matrix<T> naive_scores(const QueryState<T>& q, std::span<const ExpandedKv<T>> keys, T scale);

// Query with W_kb folded in: a_h = w_kb[h] · q_nope_h, [H × kv_lora_rank].
template <typename T>
Matrix<T> absorb_query(const QueryState<T>& q, const MlaWeights<T>& w);

// scale · (<a_h, nope_j> + <q_pe_h, pe_j>) per head, [H × L].
template <typename T>
Matrix<T> absorb_scores(const QueryState<T>& q, std::span<const LatentKv<T>> cache,
                        const MlaWeights<T>& w, T scale);

// Standard multi-head attention over expanded keys/values.
template <typename T>
AttentionPartial<T> attend_naive(const QueryState<T>& q, std::span<const ExpandedKv<T>> kv, T scale,
                                 const AttendOptions& opts = {});

// Attention directly over the compressed cache; the value up-projection is
// applied once to the latent-space output.
template <typename T>
AttentionPartial<T> attend_absorb(const QueryState<T>& q, std::span<const LatentKv<T>> cache,
                                  const MlaWeights<T>& w, T scale, const AttendOptions& opts = {});

template <typename T>
std::vector<T> output_projection(const Matrix<T>& head_outputs, const MlaWeights<T>& w);

}  // namespace hmla
