#include "hmla/kvcache.hpp"

#include <algorithm>
#include <string>

namespace hmla {

BlockAllocator::BlockAllocator(std::size_t num_blocks, std::size_t block_size)
    : block_size_(block_size), total_blocks_(num_blocks) {
  if (block_size == 0) throw ArgumentError("BlockAllocator: block size must be >= 1");
  free_list_.reserve(num_blocks);
  // Lowest block index is handed out first.
  for (std::size_t b = num_blocks; b-- > 0;) free_list_.push_back(b);
}

const BlockAllocator::Entry& BlockAllocator::entry(SequenceId seq) const {
  auto it = sequences_.find(seq);
  if (it == sequences_.end()) throw NotFoundError("unknown sequence " + std::to_string(seq));
  return it->second;
}

SequenceHandle BlockAllocator::register_sequence(std::optional<PrefixId> prefix) {
  std::lock_guard lock(mu_);
  SequenceHandle h{next_id_++, prefix, 0};
  sequences_.emplace(h.id, Entry{h, {}});
  return h;
}

SlotRef BlockAllocator::append_slot(SequenceId seq) {
  std::lock_guard lock(mu_);
  auto it = sequences_.find(seq);
  if (it == sequences_.end()) throw NotFoundError("unknown sequence " + std::to_string(seq));
  Entry& e = it->second;
  const std::size_t offset = e.handle.length % block_size_;
  if (offset == 0) {
    if (free_list_.empty()) {
      throw CapacityError("page pool exhausted (" + std::to_string(total_blocks_) + " blocks of " +
                          std::to_string(block_size_) + " tokens)");
    }
    e.pages.push_back(free_list_.back());
    free_list_.pop_back();
  }
  ++e.handle.length;
  return {e.pages.back(), offset};
}

std::size_t BlockAllocator::release(SequenceId seq) {
  std::lock_guard lock(mu_);
  auto it = sequences_.find(seq);
  if (it == sequences_.end()) throw NotFoundError("unknown sequence " + std::to_string(seq));
  const std::size_t freed = it->second.pages.size();
  for (auto p = it->second.pages.rbegin(); p != it->second.pages.rend(); ++p) free_list_.push_back(*p);
  sequences_.erase(it);
  return freed;
}

SequenceHandle BlockAllocator::handle(SequenceId seq) const {
  std::lock_guard lock(mu_);
  return entry(seq).handle;
}

std::vector<std::size_t> BlockAllocator::page_table(SequenceId seq) const {
  std::lock_guard lock(mu_);
  return entry(seq).pages;
}

SlotRef BlockAllocator::locate(SequenceId seq, std::size_t index) const {
  std::lock_guard lock(mu_);
  const Entry& e = entry(seq);
  if (index >= e.handle.length) {
    throw ArgumentError("slot " + std::to_string(index) + " beyond sequence length " +
                        std::to_string(e.handle.length));
  }
  return {e.pages[index / block_size_], index % block_size_};
}

bool BlockAllocator::contains(SequenceId seq) const {
  std::lock_guard lock(mu_);
  return sequences_.contains(seq);
}

std::size_t BlockAllocator::free_blocks() const {
  std::lock_guard lock(mu_);
  return free_list_.size();
}

std::size_t BlockAllocator::used_blocks() const {
  std::lock_guard lock(mu_);
  return total_blocks_ - free_list_.size();
}

std::size_t BlockAllocator::num_sequences() const {
  std::lock_guard lock(mu_);
  return sequences_.size();
}

std::size_t BlockAllocator::total_tokens() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [id, e] : sequences_) n += e.handle.length;
  return n;
}

// ---------------------------------------------------------------------------

template <typename T>
PagedLatentCache<T>::PagedLatentCache(const MlaConfig& cfg, std::size_t num_blocks, std::size_t block_size)
    : kv_lora_rank_(cfg.kv_lora_rank),
      latent_dim_(cfg.latent_dim()),
      allocator_(num_blocks, block_size),
      storage_(num_blocks * block_size * cfg.latent_dim()) {}

template <typename T>
SequenceHandle PagedLatentCache<T>::append_token(SequenceId seq, const LatentKv<T>& latent) {
  if (latent.nope.size() != kv_lora_rank_ || latent.nope.size() + latent.pe.size() != latent_dim_) {
    throw ShapeError("append_token: latent entry does not match the cache layout");
  }
  const SlotRef slot = allocator_.append_slot(seq);
  auto dst = storage_.begin() +
             static_cast<std::ptrdiff_t>((slot.block * allocator_.block_size() + slot.offset) * latent_dim_);
  dst = std::copy(latent.nope.begin(), latent.nope.end(), dst);
  std::copy(latent.pe.begin(), latent.pe.end(), dst);
  return allocator_.handle(seq);
}

template <typename T>
std::vector<LatentKv<T>> PagedLatentCache<T>::gather_sequence(SequenceId seq) const {
  const SequenceHandle h = allocator_.handle(seq);
  const auto pages = allocator_.page_table(seq);
  const std::size_t bs = allocator_.block_size();
  std::vector<LatentKv<T>> out;
  out.reserve(h.length);
  for (std::size_t i = 0; i < h.length; ++i) {
    const T* src = storage_.data() + (pages[i / bs] * bs + i % bs) * latent_dim_;
    out.push_back({std::vector<T>(src, src + kv_lora_rank_),
                   std::vector<T>(src + kv_lora_rank_, src + latent_dim_)});
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
SharedPrefixCache<T>::SharedPrefixCache(PrefixId id, std::vector<LatentKv<T>> latents,
                                        std::vector<ExpandedKv<T>> expanded)
    : id_(id), latents_(std::move(latents)), expanded_(std::move(expanded)) {
  if (latents_.size() != expanded_.size()) {
    throw ShapeError("SharedPrefixCache: latent and expanded token counts differ");
  }
}

template <typename T>
std::size_t SharedPrefixCache<T>::expanded_elements() const {
  std::size_t n = 0;
  for (const auto& e : expanded_) n += e.k.size() + e.v.size();
  return n;
}

template <typename T>
std::size_t SharedPrefixCache<T>::compressed_elements() const {
  std::size_t n = 0;
  for (const auto& l : latents_) n += l.nope.size() + l.pe.size();
  return n;
}

template <typename T>
std::shared_ptr<const SharedPrefixCache<T>> seal_shared_prefix(PrefixId id, std::vector<LatentKv<T>> latents,
                                                               const MlaWeights<T>& w) {
  if (latents.empty()) throw ArgumentError("seal_shared_prefix: empty prefix");
  std::vector<ExpandedKv<T>> expanded;
  expanded.reserve(latents.size());
  for (const auto& l : latents) expanded.push_back(expand_kv(l, w));
  return std::make_shared<const SharedPrefixCache<T>>(id, std::move(latents), std::move(expanded));
}

// ---------------------------------------------------------------------------

template <typename T>
void KvStore<T>::add_prefix(std::shared_ptr<const SharedPrefixCache<T>> prefix) {
  if (!prefix) throw ArgumentError("add_prefix: null prefix");
  const PrefixId id = prefix->id();
  if (prefixes_.contains(id)) throw ArgumentError("add_prefix: prefix " + std::to_string(id) + " exists");
  prefixes_.emplace(id, std::move(prefix));
  ++prefixes_built_;
}

template <typename T>
const SharedPrefixCache<T>& KvStore<T>::prefix(PrefixId id) const {
  auto it = prefixes_.find(id);
  if (it == prefixes_.end()) throw NotFoundError("unknown prefix " + std::to_string(id));
  return *it->second;
}

template <typename T>
std::shared_ptr<const SharedPrefixCache<T>> KvStore<T>::find_prefix(PrefixId id) const {
  auto it = prefixes_.find(id);
  return it == prefixes_.end() ? nullptr : it->second;
}

template <typename T>
CacheStats KvStore<T>::stats() const {
  const BlockAllocator& alloc = paged_.allocator();
  CacheStats s;
  s.block_size = alloc.block_size();
  s.blocks_total = alloc.total_blocks();
  s.blocks_free = alloc.free_blocks();
  s.blocks_used = s.blocks_total - s.blocks_free;
  s.sequences = alloc.num_sequences();
  s.prefixes = prefixes_.size();
  s.paged_tokens = alloc.total_tokens();
  s.paged_bytes = s.blocks_used * s.block_size * paged_.latent_dim() * sizeof(T);
  for (const auto& [id, p] : prefixes_) {
    s.shared_expanded_bytes += p->expanded_elements() * sizeof(T);
    s.shared_compressed_bytes += p->compressed_elements() * sizeof(T);
  }
  return s;
}

#define HMLA_INSTANTIATE_KV(T)                                                            \
  template class PagedLatentCache<T>;                                                     \
  template class SharedPrefixCache<T>;                                                    \
  template class KvStore<T>;                                                              \
  template std::shared_ptr<const SharedPrefixCache<T>> seal_shared_prefix(                \
      PrefixId, std::vector<LatentKv<T>>, const MlaWeights<T>&);

HMLA_INSTANTIATE_KV(float)
HMLA_INSTANTIATE_KV(double)

#undef HMLA_INSTANTIATE_KV

}  // namespace hmla
