#include "hmla/mla_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace hmla {

void MlaConfig::validate() const {
  const std::pair<const char*, std::size_t> dims[] = {
      {"model_dim", model_dim},       {"num_heads", num_heads},   {"nope_head_dim", nope_head_dim},
      {"rope_dim", rope_dim},         {"v_head_dim", v_head_dim}, {"kv_lora_rank", kv_lora_rank},
      {"q_lora_rank", q_lora_rank}};
  for (const auto& [key, value] : dims) {
    if (value == 0) throw ArgumentError(std::string("MlaConfig: ") + key + " must be >= 1");
  }
  if (rope_dim % 2 != 0) throw ArgumentError("MlaConfig: rope_dim must be even");
  if (!(rope_base > 0.0)) throw ArgumentError("MlaConfig: rope_base must be positive");
  if (!(norm_eps >= 0.0)) throw ArgumentError("MlaConfig: norm_eps must be non-negative");
}

MlaConfig deepseek_v3() {
  MlaConfig c;
  c.name = "deepseek-v3";
  c.model_dim = 7168;
  c.num_heads = 128;
  c.nope_head_dim = 128;
  c.rope_dim = 64;
  c.v_head_dim = 128;
  c.kv_lora_rank = 512;
  c.q_lora_rank = 1536;
  return c;
}

MlaConfig kimi_k2() {
  MlaConfig c = deepseek_v3();
  c.name = "kimi-k2";
  c.num_heads = 64;
  return c;
}

MlaConfig desk_scale() {
  MlaConfig c;
  c.name = "desk";
  c.model_dim = 64;
  c.num_heads = 8;
  c.nope_head_dim = 16;
  c.rope_dim = 8;
  c.v_head_dim = 16;
  c.kv_lora_rank = 32;
  c.q_lora_rank = 32;
  return c;
}

MlaConfig model_preset(std::string_view name) {
  if (name == "deepseek-v3") return deepseek_v3();
  if (name == "kimi-k2") return kimi_k2();
  if (name == "desk") return desk_scale();
  throw NotFoundError("unknown model preset '" + std::string(name) + "'");
}

std::vector<std::string> model_preset_names() { return {"deepseek-v3", "kimi-k2", "desk"}; }

namespace {

std::size_t parse_count(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || text.front() == '-') {
    throw ArgumentError("model config: '" + key + "' expects a count, got '" + text + "'");
  }
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) {
    throw ArgumentError("model config: '" + key + "' expects a number, got '" + text + "'");
  }
  return v;
}

}  // namespace

MlaConfig model_config_from(const std::map<std::string, std::string>& kv) {
  MlaConfig cfg;
  if (auto it = kv.find("preset"); it != kv.end()) cfg = model_preset(it->second);
  bool overridden = false;
  for (const auto& [key, value] : kv) {
    if (key == "preset") continue;
    overridden = true;
    if (key == "model_dim") cfg.model_dim = parse_count(key, value);
    else if (key == "num_heads") cfg.num_heads = parse_count(key, value);
    else if (key == "nope_head_dim") cfg.nope_head_dim = parse_count(key, value);
    else if (key == "rope_dim") cfg.rope_dim = parse_count(key, value);
    else if (key == "v_head_dim") cfg.v_head_dim = parse_count(key, value);
    else if (key == "kv_lora_rank") cfg.kv_lora_rank = parse_count(key, value);
    else if (key == "q_lora_rank") cfg.q_lora_rank = parse_count(key, value);
    else if (key == "rope_base") cfg.rope_base = parse_real(key, value);
    else if (key == "norm_eps") cfg.norm_eps = parse_real(key, value);
    else if (key == "name") cfg.name = value;
    else throw ArgumentError("model config: unknown key '" + key + "'");
  }
  if (overridden && !kv.contains("name") && kv.contains("preset")) cfg.name += "+custom";
  cfg.validate();
  return cfg;
}

double default_softmax_scale(const MlaConfig& cfg) {
  return 1.0 / std::sqrt(static_cast<double>(cfg.qk_head_dim()));
}

// ---------------------------------------------------------------------------
// Weights

template <typename T>
MlaWeights<T> MlaWeights<T>::random(const MlaConfig& cfg, std::uint64_t seed, double amplitude) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-amplitude, amplitude);
  auto fill = [&](std::size_t rows, std::size_t cols) {
    Matrix<T> m(rows, cols);
    for (T& v : m.values()) v = static_cast<T>(dist(rng));
    return m;
  };
  const std::size_t H = cfg.num_heads;
  MlaWeights w;
  w.config = cfg;
  w.w_qa = fill(cfg.model_dim, cfg.q_lora_rank);
  w.w_qb = fill(cfg.q_lora_rank, H * cfg.qk_head_dim());
  w.w_kva = fill(cfg.model_dim, cfg.latent_dim());
  for (std::size_t h = 0; h < H; ++h) w.w_kb.push_back(fill(cfg.kv_lora_rank, cfg.nope_head_dim));
  for (std::size_t h = 0; h < H; ++h) w.w_vb.push_back(fill(cfg.kv_lora_rank, cfg.v_head_dim));
  w.w_o = fill(H * cfg.v_head_dim, cfg.model_dim);
  w.q_norm_gain.assign(cfg.q_lora_rank, T{1});
  w.kv_norm_gain.assign(cfg.kv_lora_rank, T{1});
  return w;
}

template <typename T>
void MlaWeights<T>::validate() const {
  config.validate();
  const auto& c = config;
  const std::size_t H = c.num_heads;
  auto expect = [](const Matrix<T>& m, std::size_t r, std::size_t cols, const char* what) {
    if (m.rows() != r || m.cols() != cols) {
      throw ShapeError(std::string("MlaWeights: ") + what + " is " + std::to_string(m.rows()) +
                       "x" + std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                       std::to_string(cols));
    }
  };
  expect(w_qa, c.model_dim, c.q_lora_rank, "w_qa");
  expect(w_qb, c.q_lora_rank, H * c.qk_head_dim(), "w_qb");
  expect(w_kva, c.model_dim, c.latent_dim(), "w_kva");
  expect(w_o, H * c.v_head_dim, c.model_dim, "w_o");
  if (w_kb.size() != H || w_vb.size() != H) throw ShapeError("MlaWeights: per-head count != H");
  for (std::size_t h = 0; h < H; ++h) {
    expect(w_kb[h], c.kv_lora_rank, c.nope_head_dim, "w_kb[h]");
    expect(w_vb[h], c.kv_lora_rank, c.v_head_dim, "w_vb[h]");
  }
  if (q_norm_gain.size() != c.q_lora_rank || kv_norm_gain.size() != c.kv_lora_rank) {
    throw ShapeError("MlaWeights: norm gain length mismatch");
  }
}

template <typename T>
AttentionPartial<T> AttentionPartial<T>::empty(std::size_t num_heads, std::size_t v_head_dim) {
  return {Matrix<T>(num_heads, v_head_dim),
          std::vector<T>(num_heads, -std::numeric_limits<T>::infinity())};
}

template <typename T>
bool AttentionPartial<T>::is_empty() const {
  for (T l : lse)
    if (l != -std::numeric_limits<T>::infinity()) return false;
  for (T v : output.values())
    if (v != T{0}) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Projections

namespace {

template <typename T>
void check_hidden(std::span<const T> hidden, const MlaConfig& cfg, const char* op) {
  if (hidden.size() != cfg.model_dim) {
    throw ShapeError(std::string(op) + ": hidden length " + std::to_string(hidden.size()) +
                     " != model_dim " + std::to_string(cfg.model_dim));
  }
}

template <typename T>
void check_query(const QueryState<T>& q, const MlaConfig& cfg, const char* op) {
  if (q.q_nope.rows() != cfg.num_heads || q.q_nope.cols() != cfg.nope_head_dim ||
      q.q_pe.rows() != cfg.num_heads || q.q_pe.cols() != cfg.rope_dim) {
    throw ShapeError(std::string(op) + ": query shape does not match the model config");
  }
}

template <typename T>
void check_latent(const LatentKv<T>& l, const MlaConfig& cfg, const char* op) {
  if (l.nope.size() != cfg.kv_lora_rank || l.pe.size() != cfg.rope_dim) {
    throw ShapeError(std::string(op) + ": latent entry does not match the model config");
  }
}

// Applies the visibility mask in place and returns the softmax, or nullopt
// when nothing is visible.
template <typename T>
std::optional<SoftmaxRow<T>> masked_softmax(std::span<T> scores, const AttendOptions& opts) {
  const std::size_t visible = std::min(opts.visible.value_or(scores.size()), scores.size());
  if (visible == 0) return std::nullopt;
  for (std::size_t j = visible; j < scores.size(); ++j) {
    scores[j] = -std::numeric_limits<T>::infinity();
  }
  return softmax_lse<T>(scores);
}

}  // namespace

template <typename T>
QueryState<T> project_query(std::span<const T> hidden, const MlaWeights<T>& w, std::size_t position) {
  const MlaConfig& cfg = w.config;
  check_hidden(hidden, cfg, "project_query");
  const auto latent = vecmat<T>(hidden, w.w_qa);
  const auto normed = rmsnorm<T>(latent, w.q_norm_gain, static_cast<T>(cfg.norm_eps));
  const auto q = vecmat<T>(normed, w.w_qb);

  const std::size_t dqk = cfg.qk_head_dim();
  QueryState<T> out{Matrix<T>(cfg.num_heads, cfg.nope_head_dim), Matrix<T>(cfg.num_heads, cfg.rope_dim),
                    position};
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    std::span<const T> head(q.data() + h * dqk, dqk);
    std::ranges::copy(head.first(cfg.nope_head_dim), out.q_nope.row(h).begin());
    const auto rotated = rope<T>(head.subspan(cfg.nope_head_dim), position, cfg.rope_base);
    std::ranges::copy(rotated, out.q_pe.row(h).begin());
  }
  return out;
}

template <typename T>
LatentKv<T> project_kv(std::span<const T> hidden, const MlaWeights<T>& w, std::size_t position) {
  const MlaConfig& cfg = w.config;
  check_hidden(hidden, cfg, "project_kv");
  const auto c = vecmat<T>(hidden, w.w_kva);
  std::span<const T> all(c);
  return {rmsnorm<T>(all.first(cfg.kv_lora_rank), w.kv_norm_gain, static_cast<T>(cfg.norm_eps)),
          rope<T>(all.subspan(cfg.kv_lora_rank), position, cfg.rope_base)};
}

template <typename T>
ExpandedKv<T> expand_kv(const LatentKv<T>& latent, const MlaWeights<T>& w) {
  const MlaConfig& cfg = w.config;
  check_latent(latent, cfg, "expand_kv");
  ExpandedKv<T> out{Matrix<T>(cfg.num_heads, cfg.qk_head_dim()), Matrix<T>(cfg.num_heads, cfg.v_head_dim)};
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const auto k_nope = vecmat<T>(latent.nope, w.w_kb[h]);
    auto krow = out.k.row(h);
    std::ranges::copy(k_nope, krow.begin());
    std::ranges::copy(latent.pe, krow.begin() + static_cast<std::ptrdiff_t>(cfg.nope_head_dim));
    const auto v = vecmat<T>(latent.nope, w.w_vb[h]);
    std::ranges::copy(v, out.v.row(h).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
Matrix<T> naive_scores(const QueryState<T>& q, std::span<const ExpandedKv<T>> keys, T scale) {
  const std::size_t H = q.num_heads();
  const std::size_t nope = q.q_nope.cols();
  Matrix<T> scores(H, keys.size());
  for (std::size_t j = 0; j < keys.size(); ++j) {
    const Matrix<T>& k = keys[j].k;
    if (k.rows() != H || k.cols() != nope + q.q_pe.cols()) {
      throw ShapeError("naive_scores: key shape does not match the query");
    }
    for (std::size_t h = 0; h < H; ++h) {
      const auto krow = k.row(h);
      const T s = dot(q.q_nope.row(h), krow.first(nope)) + dot(q.q_pe.row(h), krow.subspan(nope));
      scores(h, j) = scale * s;
    }
  }
  return scores;
}

template <typename T>
Matrix<T> absorb_query(const QueryState<T>& q, const MlaWeights<T>& w) {
  const MlaConfig& cfg = w.config;
  check_query(q, cfg, "absorb_query");
  Matrix<T> a(cfg.num_heads, cfg.kv_lora_rank);
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const auto row = matvec<T>(w.w_kb[h], q.q_nope.row(h));
    std::ranges::copy(row, a.row(h).begin());
  }
  return a;
}

template <typename T>
Matrix<T> absorb_scores(const QueryState<T>& q, std::span<const LatentKv<T>> cache,
                        const MlaWeights<T>& w, T scale) {
  const Matrix<T> a = absorb_query(q, w);
  Matrix<T> scores(q.num_heads(), cache.size());
  for (std::size_t j = 0; j < cache.size(); ++j) {
    check_latent(cache[j], w.config, "absorb_scores");
    for (std::size_t h = 0; h < q.num_heads(); ++h) {
      const T s = dot<T>(a.row(h), cache[j].nope) + dot<T>(q.q_pe.row(h), cache[j].pe);
      scores(h, j) = scale * s;
    }
  }
  return scores;
}

template <typename T>
AttentionPartial<T> attend_naive(const QueryState<T>& q, std::span<const ExpandedKv<T>> kv, T scale,
                                 const AttendOptions& opts) {
  if (!(scale > T{0})) throw ArgumentError("attend_naive: scale must be positive");
  const std::size_t H = q.num_heads();
  const std::size_t dv = kv.empty() ? 0 : kv.front().v.cols();
  Matrix<T> scores = naive_scores(q, kv, scale);

  AttentionPartial<T> out{Matrix<T>(H, dv), std::vector<T>(H)};
  for (std::size_t h = 0; h < H; ++h) {
    auto sm = masked_softmax<T>(scores.row(h), opts);
    if (!sm) {
      if (!opts.allow_empty) throw ArgumentError("attend_naive: no visible keys");
      // Value width is unknown without keys; callers needing it use AttentionPartial::empty.
      return AttentionPartial<T>::empty(H, dv);
    }
    auto dst = out.output.row(h);
    for (std::size_t j = 0; j < kv.size(); ++j) {
      const T p = sm->probs[j];
      if (p == T{0}) continue;
      const auto v = kv[j].v.row(h);
      for (std::size_t d = 0; d < dv; ++d) dst[d] += p * v[d];
    }
    out.lse[h] = sm->lse;
  }
  return out;
}

template <typename T>
AttentionPartial<T> attend_absorb(const QueryState<T>& q, std::span<const LatentKv<T>> cache,
                                  const MlaWeights<T>& w, T scale, const AttendOptions& opts) {
  if (!(scale > T{0})) throw ArgumentError("attend_absorb: scale must be positive");
  const MlaConfig& cfg = w.config;
  const std::size_t H = cfg.num_heads;
  Matrix<T> scores = absorb_scores(q, cache, w, scale);

  AttentionPartial<T> out{Matrix<T>(H, cfg.v_head_dim), std::vector<T>(H)};
  std::vector<T> latent_out(cfg.kv_lora_rank);
  for (std::size_t h = 0; h < H; ++h) {
    auto sm = masked_softmax<T>(scores.row(h), opts);
    if (!sm) {
      if (!opts.allow_empty) throw ArgumentError("attend_absorb: no visible cache entries");
      return AttentionPartial<T>::empty(H, cfg.v_head_dim);
    }
    std::ranges::fill(latent_out, T{0});
    for (std::size_t j = 0; j < cache.size(); ++j) {
      const T p = sm->probs[j];
      if (p == T{0}) continue;
      for (std::size_t d = 0; d < cfg.kv_lora_rank; ++d) latent_out[d] += p * cache[j].nope[d];
    }
    const auto o = vecmat<T>(latent_out, w.w_vb[h]);
    std::ranges::copy(o, out.output.row(h).begin());
    out.lse[h] = sm->lse;
  }
  return out;
}

template <typename T>
std::vector<T> output_projection(const Matrix<T>& head_outputs, const MlaWeights<T>& w) {
  const MlaConfig& cfg = w.config;
  if (head_outputs.rows() != cfg.num_heads || head_outputs.cols() != cfg.v_head_dim) {
    throw ShapeError("output_projection: expected " + std::to_string(cfg.num_heads) + "x" +
                     std::to_string(cfg.v_head_dim) + " head outputs");
  }
  // Row-major [H × D_v] is already the head concatenation.
  return vecmat<T>(head_outputs.values(), w.w_o);
}

#define HMLA_INSTANTIATE_CORE(T)                                                                  \
  template struct MlaWeights<T>;                                                                  \
  template struct AttentionPartial<T>;                                                            \
  template QueryState<T> project_query(std::span<const T>, const MlaWeights<T>&, std::size_t);    \
  template LatentKv<T> project_kv(std::span<const T>, const MlaWeights<T>&, std::size_t);         \
  template ExpandedKv<T> expand_kv(const LatentKv<T>&, const MlaWeights<T>&);                     \
  template Matrix<T> naive_scores(const QueryState<T>&, std::span<const ExpandedKv<T>>, T);       \
  template Matrix<T> absorb_query(const QueryState<T>&, const MlaWeights<T>&);                    \
  template Matrix<T> absorb_scores(const QueryState<T>&, std::span<const LatentKv<T>>,            \
                                   const MlaWeights<T>&, T);                                      \
  template AttentionPartial<T> attend_naive(const QueryState<T>&, std::span<const ExpandedKv<T>>, \
                                            T, const AttendOptions&);                             \
  template AttentionPartial<T> attend_absorb(const QueryState<T>&, std::span<const LatentKv<T>>,  \
                                             const MlaWeights<T>&, T, const AttendOptions&);      \
  template std::vector<T> output_projection(const Matrix<T>&, const MlaWeights<T>&);

HMLA_INSTANTIATE_CORE(float)
HMLA_INSTANTIATE_CORE(double)

#undef HMLA_INSTANTIATE_CORE

}  // namespace hmla
