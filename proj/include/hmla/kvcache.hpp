#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "hmla/mla_core.hpp"

namespace hmla {

inline constexpr std::size_t kDefaultBlockSize = 128;

using SequenceId = std::uint64_t;
using PrefixId = std::uint64_t;

struct SequenceHandle {
  SequenceId id = 0;
  std::optional<PrefixId> prefix;
  std::size_t length = 0;  // non-shared tokens held in pages

  bool operator==(const SequenceHandle&) const = default;
};

struct SlotRef {
  std::size_t block = 0;
  std::size_t offset = 0;
};

inline std::size_t blocks_for(std::size_t tokens, std::size_t block_size) {
  return (tokens + block_size - 1) / block_size;
}

/// Page-table bookkeeping for a fixed pool of blocks. Holds no token data, so
/// it also serves the simulator when real math is disabled. All methods lock
/// a single mutex; allocation is the only cross-sequence contention point.
class BlockAllocator {
 public:
  BlockAllocator(std::size_t num_blocks, std::size_t block_size = kDefaultBlockSize);

  SequenceHandle register_sequence(std::optional<PrefixId> prefix = std::nullopt);

  // Reserves the next slot of `seq`, taking a fresh block iff the current
  // length is a multiple of the block size. Throws CapacityError when the
  // pool is empty, NotFoundError for an unknown sequence.
  SlotRef append_slot(SequenceId seq);

  // Returns every block of `seq` to the pool and forgets the sequence.
  std::size_t release(SequenceId seq);

  SequenceHandle handle(SequenceId seq) const;
  std::vector<std::size_t> page_table(SequenceId seq) const;
  SlotRef locate(SequenceId seq, std::size_t index) const;
  bool contains(SequenceId seq) const;

  std::size_t block_size() const { return block_size_; }
  std::size_t total_blocks() const { return total_blocks_; }
  std::size_t free_blocks() const;
  std::size_t used_blocks() const;
  std::size_t num_sequences() const;
  std::size_t total_tokens() const;

 private:
  struct Entry {
    SequenceHandle handle;
    std::vector<std::size_t> pages;
  };

  const Entry& entry(SequenceId seq) const;

  std::size_t block_size_;
  std::size_t total_blocks_;
  std::vector<std::size_t> free_list_;
  std::map<SequenceId, Entry> sequences_;
  SequenceId next_id_ = 1;
  mutable std::mutex mu_;
};

/// Compressed (PE/noPE) cache for the non-shared part of each sequence,
/// stored in fixed-size pages.
template <typename T>
class PagedLatentCache {
 public:
  PagedLatentCache(const MlaConfig& cfg, std::size_t num_blocks,
                   std::size_t block_size = kDefaultBlockSize);

  SequenceHandle register_sequence(std::optional<PrefixId> prefix = std::nullopt) {
    return allocator_.register_sequence(prefix);
  }
  SequenceHandle append_token(SequenceId seq, const LatentKv<T>& latent);
  std::size_t release_sequence(SequenceId seq) { return allocator_.release(seq); }
  std::vector<LatentKv<T>> gather_sequence(SequenceId seq) const;
  SequenceHandle handle(SequenceId seq) const { return allocator_.handle(seq); }

  const BlockAllocator& allocator() const { return allocator_; }
  std::size_t latent_dim() const { return latent_dim_; }
  std::size_t kv_lora_rank() const { return kv_lora_rank_; }

 private:
  std::size_t kv_lora_rank_;
  std::size_t latent_dim_;
  BlockAllocator allocator_;
  std::vector<T> storage_;  // [blocks × block_size × latent_dim]
};

/// Shared prefix kept in expanded per-head K/V form. The compressed latents
/// are retained alongside so absorb-only decoding can still read the prefix.
/// Only const access is exposed; instances are shared as pointers to const.
template <typename T>
class SharedPrefixCache {
 public:
  SharedPrefixCache(PrefixId id, std::vector<LatentKv<T>> latents, std::vector<ExpandedKv<T>> expanded);

  PrefixId id() const { return id_; }
  std::size_t length() const { return latents_.size(); }
  std::span<const ExpandedKv<T>> expanded() const { return expanded_; }
  std::span<const LatentKv<T>> latents() const { return latents_; }

  // L_s · H · (qk_head_dim + v_head_dim)
  std::size_t expanded_elements() const;
  // L_s · (kv_lora_rank + rope_dim)
  std::size_t compressed_elements() const;

 private:
  PrefixId id_;
  std::vector<LatentKv<T>> latents_;
  std::vector<ExpandedKv<T>> expanded_;
};

// Up-projects every prefix token; positions run 0..L_s-1 in the given order.
template <typename T>
std::shared_ptr<const SharedPrefixCache<T>> seal_shared_prefix(PrefixId id, std::vector<LatentKv<T>> latents,
                                                               const MlaWeights<T>& w);

struct CacheStats {
  std::size_t block_size = 0;
  std::size_t blocks_total = 0;
  std::size_t blocks_used = 0;
  std::size_t blocks_free = 0;
  std::size_t sequences = 0;
  std::size_t prefixes = 0;
  std::size_t paged_tokens = 0;
  std::size_t paged_bytes = 0;  // bytes of allocated blocks
  std::size_t shared_expanded_bytes = 0;
  std::size_t shared_compressed_bytes = 0;
};

/// Everything decode reads: sealed shared prefixes by id plus the paged tails.
template <typename T>
class KvStore {
 public:
  KvStore(const MlaConfig& cfg, std::size_t num_blocks, std::size_t block_size = kDefaultBlockSize)
      : paged_(cfg, num_blocks, block_size) {}

  // Throws ArgumentError if a prefix with the same id exists.
  void add_prefix(std::shared_ptr<const SharedPrefixCache<T>> prefix);
  const SharedPrefixCache<T>& prefix(PrefixId id) const;
  std::shared_ptr<const SharedPrefixCache<T>> find_prefix(PrefixId id) const;
  // Number of prefixes ever added; each is built exactly once.
  std::size_t prefixes_built() const { return prefixes_built_; }

  PagedLatentCache<T>& paged() { return paged_; }
  const PagedLatentCache<T>& paged() const { return paged_; }

  CacheStats stats() const;

 private:
  PagedLatentCache<T> paged_;
  std::unordered_map<PrefixId, std::shared_ptr<const SharedPrefixCache<T>>> prefixes_;
  std::size_t prefixes_built_ = 0;
};

}  // namespace hmla
