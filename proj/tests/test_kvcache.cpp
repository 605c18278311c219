#include <doctest.h>

#include <map>
#include <random>
#include <set>
#include <thread>

#include "hmla/kvcache.hpp"
#include "oracles.hpp"

using namespace hmla;

TEST_CASE("block arithmetic") {
  CHECK(blocks_for(0, 128) == 0);
  CHECK(blocks_for(1, 128) == 1);
  CHECK(blocks_for(128, 128) == 1);
  CHECK(blocks_for(129, 128) == 2);
  CHECK(blocks_for(1000, 128) == 8);
  CHECK(kDefaultBlockSize == 128);
}

TEST_CASE("append takes a page exactly at block boundaries") {
  BlockAllocator a(16);
  const auto s = a.register_sequence();
  CHECK(a.handle(s.id).length == 0);
  a.append_slot(s.id);
  CHECK(a.handle(s.id).length == 1);
  CHECK(a.used_blocks() == 1);
  for (int i = 1; i < 128; ++i) a.append_slot(s.id);
  CHECK(a.used_blocks() == 1);
  const auto slot = a.append_slot(s.id);
  CHECK(a.used_blocks() == 2);
  CHECK(slot.offset == 0);
  for (int i = 129; i < 1000; ++i) a.append_slot(s.id);
  CHECK(a.page_table(s.id).size() == 8);
  CHECK(a.locate(s.id, 999).offset == 999 % 128);
  CHECK(a.locate(s.id, 999).block == a.page_table(s.id)[7]);
  CHECK_THROWS_AS(a.locate(s.id, 1000), ArgumentError);
}

TEST_CASE("release returns ceil(L/128) pages") {
  BlockAllocator a(8);
  const auto empty = a.register_sequence();
  CHECK(a.release(empty.id) == 0);
  const auto s = a.register_sequence(PrefixId{3});
  CHECK(a.handle(s.id).prefix == PrefixId{3});
  for (int i = 0; i < 256; ++i) a.append_slot(s.id);
  CHECK(a.release(s.id) == 2);
  CHECK(a.free_blocks() == 8);
  CHECK_FALSE(a.contains(s.id));
  CHECK_THROWS_AS(a.release(s.id), NotFoundError);
  CHECK_THROWS_AS(a.append_slot(s.id), NotFoundError);
  CHECK_THROWS_AS(a.handle(999), NotFoundError);
}

TEST_CASE("pool exhaustion is a capacity error") {
  BlockAllocator a(2, 4);
  const auto s = a.register_sequence();
  for (int i = 0; i < 8; ++i) a.append_slot(s.id);
  CHECK_THROWS_AS(a.append_slot(s.id), CapacityError);
  CHECK(a.handle(s.id).length == 8);
  CHECK(a.free_blocks() == 0);
  CHECK_THROWS_AS(BlockAllocator(4, 0), ArgumentError);
}

TEST_CASE("interleaved alloc and free conserves the pool") {
  std::mt19937_64 rng(1);
  BlockAllocator a(64, 8);
  std::map<SequenceId, std::size_t> shadow;
  for (int op = 0; op < 5000; ++op) {
    const int kind = static_cast<int>(rng() % 10);
    if (kind == 0 || shadow.empty()) {
      if (shadow.size() < 100) shadow[a.register_sequence().id] = 0;
    } else {
      auto it = shadow.begin();
      std::advance(it, static_cast<long>(rng() % shadow.size()));
      if (kind == 1) {
        CHECK(a.release(it->first) == blocks_for(it->second, 8));
        shadow.erase(it);
      } else {
        try {
          a.append_slot(it->first);
          ++it->second;
        } catch (const CapacityError&) {
          CHECK(a.free_blocks() == 0);
        }
      }
    }
    std::size_t expect_used = 0;
    for (const auto& [id, len] : shadow) expect_used += blocks_for(len, 8);
    REQUIRE(a.used_blocks() == expect_used);
    REQUIRE(a.used_blocks() + a.free_blocks() == 64);
  }
}

TEST_CASE("pages are never shared between sequences") {
  BlockAllocator a(32, 4);
  std::vector<SequenceId> ids;
  for (int i = 0; i < 5; ++i) ids.push_back(a.register_sequence().id);
  for (int round = 0; round < 20; ++round)
    for (auto id : ids) a.append_slot(id);
  std::set<std::size_t> seen;
  for (auto id : ids)
    for (auto p : a.page_table(id)) CHECK(seen.insert(p).second);
  CHECK(seen.size() == 25);
}

TEST_CASE("concurrent appends on distinct sequences") {
  BlockAllocator a(1024, 4);
  std::vector<SequenceId> ids;
  for (int i = 0; i < 8; ++i) ids.push_back(a.register_sequence().id);
  std::vector<std::thread> threads;
  for (auto id : ids)
    threads.emplace_back([&a, id] {
      for (int i = 0; i < 400; ++i) a.append_slot(id);
    });
  for (auto& t : threads) t.join();
  CHECK(a.used_blocks() == 8 * 100);
  CHECK(a.total_tokens() == 8 * 400);
}

namespace {

MlaConfig small_cfg() {
  MlaConfig c;
  c.model_dim = 16;
  c.num_heads = 2;
  c.nope_head_dim = 4;
  c.rope_dim = 2;
  c.v_head_dim = 4;
  c.kv_lora_rank = 8;
  c.q_lora_rank = 8;
  return c;
}

}  // namespace

TEST_CASE("paged cache preserves append order across pages") {
  std::mt19937_64 rng(2);
  const auto cfg = small_cfg();
  const auto w = MlaWeights<double>::random(cfg, 3);
  PagedLatentCache<double> cache(cfg, 8, 128);
  CHECK(cache.latent_dim() == 10);
  const auto s = cache.register_sequence();
  const auto tokens = oracle::random_latents(rng, w, 130);
  for (std::size_t i = 0; i < 5; ++i) cache.append_token(s.id, tokens[i]);
  CHECK(cache.gather_sequence(s.id) == std::vector(tokens.begin(), tokens.begin() + 5));
  for (std::size_t i = 5; i < 130; ++i) {
    const auto h = cache.append_token(s.id, tokens[i]);
    CHECK(h.length == i + 1);
  }
  CHECK(cache.gather_sequence(s.id) == tokens);
  CHECK(cache.allocator().used_blocks() == 2);
  CHECK_THROWS_AS(cache.gather_sequence(77), NotFoundError);

  LatentKv<double> bad{std::vector<double>(7), std::vector<double>(2)};
  CHECK_THROWS_AS(cache.append_token(s.id, bad), ShapeError);
}

TEST_CASE("paged cache matches a flat shadow model") {
  std::mt19937_64 rng(4);
  const auto cfg = small_cfg();
  const auto w = MlaWeights<double>::random(cfg, 5);
  const auto pool = oracle::random_latents(rng, w, 32);
  PagedLatentCache<double> cache(cfg, 40, 4);
  std::map<SequenceId, std::vector<LatentKv<double>>> shadow;
  for (int i = 0; i < 6; ++i) shadow[cache.register_sequence().id];
  for (int op = 0; op < 600; ++op) {
    auto it = shadow.begin();
    std::advance(it, static_cast<long>(rng() % shadow.size()));
    if (rng() % 25 == 0) {
      cache.release_sequence(it->first);
      shadow.erase(it);
      shadow[cache.register_sequence().id];
      continue;
    }
    const auto& tok = pool[rng() % pool.size()];
    try {
      cache.append_token(it->first, tok);
      it->second.push_back(tok);
    } catch (const CapacityError&) {
    }
  }
  for (const auto& [id, toks] : shadow) CHECK(cache.gather_sequence(id) == toks);
}

TEST_CASE("sealed prefix holds expanded and compressed forms") {
  std::mt19937_64 rng(6);
  const auto cfg = small_cfg();
  const auto w = MlaWeights<double>::random(cfg, 7);
  const auto one = oracle::random_latents(rng, w, 1);
  const auto p1 = seal_shared_prefix<double>(1, one, w);
  CHECK(p1->length() == 1);
  CHECK(p1->expanded()[0] == expand_kv(one[0], w));

  const auto lat = oracle::random_latents(rng, w, 300);
  const auto p = seal_shared_prefix<double>(2, lat, w);
  CHECK(p->expanded_elements() == 300 * cfg.num_heads * (cfg.qk_head_dim() + cfg.v_head_dim));
  CHECK(p->compressed_elements() == 300 * (cfg.kv_lora_rank + cfg.rope_dim));
  CHECK(std::equal(p->latents().begin(), p->latents().end(), lat.begin()));

  CHECK_THROWS_AS(seal_shared_prefix<double>(3, {}, w), ArgumentError);
}

TEST_CASE("kv store prefixes and stats") {
  std::mt19937_64 rng(8);
  const auto cfg = small_cfg();
  const auto w = MlaWeights<float>::random(cfg, 9);
  KvStore<float> store(cfg, 10, 4);
  store.add_prefix(seal_shared_prefix<float>(5, oracle::random_latents(rng, w, 6), w));
  CHECK(store.prefixes_built() == 1);
  CHECK(store.prefix(5).length() == 6);
  CHECK(store.find_prefix(6) == nullptr);
  CHECK_THROWS_AS(store.prefix(6), NotFoundError);
  CHECK_THROWS_AS(store.add_prefix(seal_shared_prefix<float>(5, oracle::random_latents(rng, w, 1), w)),
                  ArgumentError);

  const auto s = store.paged().register_sequence(PrefixId{5});
  for (const auto& t : oracle::random_latents(rng, w, 5)) store.paged().append_token(s.id, t);
  const auto st = store.stats();
  CHECK(st.blocks_total == 10);
  CHECK(st.blocks_used == 2);
  CHECK(st.blocks_free == 8);
  CHECK(st.sequences == 1);
  CHECK(st.prefixes == 1);
  CHECK(st.paged_tokens == 5);
  CHECK(st.paged_bytes == 2 * 4 * 10 * sizeof(float));
  CHECK(st.shared_expanded_bytes == 6 * 2 * (6 + 4) * sizeof(float));
  CHECK(st.shared_compressed_bytes == 6 * 10 * sizeof(float));
}

TEST_CASE("preset per-token storage is 576 numbers") {
  PagedLatentCache<float> c(deepseek_v3(), 1, 128);
  CHECK(c.latent_dim() == 576);
  CHECK(c.kv_lora_rank() == 512);
}
