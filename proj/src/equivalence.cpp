#include "hmla/equivalence.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "hmla/hybrid.hpp"
#include "hmla/kvcache.hpp"

namespace hmla {

double EquivalenceStats::worst() const {
  return std::max({naive_vs_absorb, naive_vs_typhoon, absorb_vs_typhoon, lse});
}

template <typename T>
EquivalenceStats run_equivalence(std::size_t trials, std::uint64_t seed, bool inject_fault) {
  if (trials == 0) throw ArgumentError("run_equivalence: trials must be >= 1");
  std::mt19937_64 rng(seed);
  auto pick = [&rng](auto const& options) {
    std::uniform_int_distribution<std::size_t> d(0, options.size() - 1);
    return options[d(rng)];
  };
  std::uniform_int_distribution<std::size_t> len(0, 32);
  std::normal_distribution<double> normal(0.0, 1.0);

  EquivalenceStats stats;
  for (std::size_t t = 0; t < trials; ++t) {
    MlaConfig cfg;
    cfg.name = "trial";
    cfg.num_heads = pick(std::array<std::size_t, 4>{1, 2, 4, 8});
    cfg.kv_lora_rank = pick(std::array<std::size_t, 3>{8, 16, 32});
    cfg.nope_head_dim = pick(std::array<std::size_t, 3>{4, 8, 16});
    cfg.rope_dim = pick(std::array<std::size_t, 3>{2, 4, 8});
    cfg.v_head_dim = pick(std::array<std::size_t, 3>{4, 8, 16});
    cfg.model_dim = pick(std::array<std::size_t, 2>{16, 32});
    cfg.q_lora_rank = pick(std::array<std::size_t, 2>{8, 16});
    std::size_t shared_len = len(rng);
    std::size_t tail_len = len(rng);
    if (shared_len + tail_len == 0) tail_len = 1;

    const auto w = MlaWeights<T>::random(cfg, rng(), 0.5);
    MlaWeights<T> w_absorb = w;
    if (inject_fault) w_absorb.w_kb[0](0, 0) += T(0.25);

    const std::size_t total = shared_len + tail_len;
    std::vector<LatentKv<T>> latents;
    for (std::size_t p = 0; p < total; ++p) {
      std::vector<T> h(cfg.model_dim);
      for (T& v : h) v = static_cast<T>(normal(rng));
      latents.push_back(project_kv<T>(h, w, p));
    }
    std::vector<T> hq(cfg.model_dim);
    for (T& v : hq) v = static_cast<T>(normal(rng));
    const auto q = project_query<T>(hq, w, total - 1);
    const T scale = static_cast<T>(default_softmax_scale(cfg));

    std::vector<ExpandedKv<T>> expanded;
    for (const auto& l : latents) expanded.push_back(expand_kv(l, w));
    const auto naive = attend_naive<T>(q, expanded, scale);
    const auto absorb = attend_absorb<T>(q, latents, w_absorb, scale);

    std::shared_ptr<const SharedPrefixCache<T>> shared;
    if (shared_len > 0) {
      shared = seal_shared_prefix<T>(1, {latents.begin(), latents.begin() + static_cast<std::ptrdiff_t>(shared_len)}, w);
    }
    std::span<const LatentKv<T>> tail(latents.data() + shared_len, tail_len);
    const auto typhoon = typhoon_decode_step<T>(q, shared.get(), tail, w, scale);

    const auto on = output_projection(naive.output, w);
    const auto oa = output_projection(absorb.output, w);
    const auto ot = output_projection(typhoon.output, w);
    stats.naive_vs_absorb = std::max(stats.naive_vs_absorb, relative_error<T>(oa, on));
    stats.naive_vs_typhoon = std::max(stats.naive_vs_typhoon, relative_error<T>(ot, on));
    stats.absorb_vs_typhoon = std::max(stats.absorb_vs_typhoon, relative_error<T>(ot, oa));
    stats.lse = std::max({stats.lse, relative_error<T>(absorb.lse, naive.lse),
                          relative_error<T>(typhoon.lse, naive.lse)});
    ++stats.trials;
  }
  return stats;
}

template EquivalenceStats run_equivalence<float>(std::size_t, std::uint64_t, bool);
template EquivalenceStats run_equivalence<double>(std::size_t, std::uint64_t, bool);

}  // namespace hmla
