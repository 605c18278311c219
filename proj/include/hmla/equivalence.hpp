#pragma once

#include <cstddef>
#include <cstdint>

#include "hmla/mla_core.hpp"

namespace hmla {

struct EquivalenceStats {
  std::size_t trials = 0;
  double naive_vs_absorb = 0;   // max relative error of projected outputs
  double naive_vs_typhoon = 0;
  double absorb_vs_typhoon = 0;
  double lse = 0;               // max relative lse disagreement across the three

  double worst() const;
};

/// Randomized cross-check of the three formulations at small shapes (H in
/// {1,2,4,8}, kv_lora_rank in {8,16,32}, L_s and L_n in [0,32] with at least
/// one context token). With `inject_fault` the absorb path reads a weight
/// copy with one perturbed W_kb entry, which must be detected.
template <typename T>
EquivalenceStats run_equivalence(std::size_t trials, std::uint64_t seed, bool inject_fault = false);

}  // namespace hmla
