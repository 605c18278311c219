#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hmla/simbench.hpp"

using namespace hmla;
using namespace hmla::sim;
using cost::Method;

namespace {

FallbackPolicy ascend_policy(const MlaConfig& cfg = deepseek_v3()) {
  return FallbackPolicy::for_hardware(cfg, cost::ascend_910_class());
}

SimReport run(const WorkloadSpec& s, Method m, const MlaConfig& cfg = deepseek_v3(), SimOptions opts = {}) {
  return run_simulation(s, m, cfg, cost::ascend_910_class(), ascend_policy(cfg), opts);
}

WorkloadSpec random_spec(std::mt19937_64& rng) {
  WorkloadSpec s;
  s.batch_size = 1 + rng() % 300;
  s.prefix_length = 4096 + rng() % 28000;
  s.tail = LengthDist::uniform(0, 1 + rng() % 600);
  s.generation = LengthDist::uniform(1, 1 + rng() % 8);
  s.request_count = s.batch_size + rng() % (2 * s.batch_size);
  s.seed = rng();
  return s;
}

}  // namespace

TEST_CASE("length distributions") {
  WorkloadSpec s;
  s.generation = LengthDist::fixed(5);
  s.request_count = 3;
  const auto reqs = generate_workload(s);
  REQUIRE(reqs.size() == 3);
  for (const auto& r : reqs) CHECK(r.gen_len == 5);

  s.generation = LengthDist::uniform(1, 1);
  s.request_count = 50;
  s.seed = 9;
  for (const auto& r : generate_workload(s)) CHECK(r.gen_len == 1);

  const auto d = LengthDist::parse("lognormal:3:0.5");
  CHECK(d.kind == LengthDist::Kind::LogNormal);
  CHECK(d.mean() == doctest::Approx(std::exp(3 + 0.125)));
  CHECK(LengthDist::parse(LengthDist::uniform(2, 9).to_string()).b == 9);
  CHECK(LengthDist::parse("fixed:7").a == 7);
  CHECK_THROWS_AS(LengthDist::parse("gamma:1"), ArgumentError);
  CHECK_THROWS_AS(LengthDist::parse("uniform:5:2").validate(0), ArgumentError);

  s.generation = LengthDist::fixed(0);
  CHECK_THROWS_AS(generate_workload(s), ArgumentError);
  s.generation = LengthDist::fixed(1);
  s.batch_size = 0;
  CHECK_THROWS_AS(generate_workload(s), ArgumentError);
}

TEST_CASE("lognormal stream mean matches the closed form") {
  WorkloadSpec s;
  s.generation = LengthDist::lognormal(4.0, 0.6);
  s.request_count = 10000;
  s.seed = 17;
  const auto reqs = generate_workload(s);
  double sum = 0;
  for (const auto& r : reqs) {
    CHECK(r.gen_len >= 1);
    sum += static_cast<double>(r.gen_len);
  }
  const double analytic = std::exp(4.0 + 0.6 * 0.6 / 2);
  CHECK(std::fabs(sum / 10000 - analytic) <= 0.1 * analytic);
}

TEST_CASE("workload streams are reproducible") {
  WorkloadSpec s;
  s.tail = LengthDist::uniform(0, 100);
  s.generation = LengthDist::lognormal(2, 1);
  s.request_count = 200;
  s.seed = 5;
  CHECK(generate_workload(s) == generate_workload(s));
  auto t = s;
  t.seed = 6;
  CHECK(generate_workload(s) != generate_workload(t));
}

TEST_CASE("token conservation without churn") {
  for (std::size_t B : {1u, 8u, 100u})
    for (std::size_t g : {1u, 3u, 7u}) {
      WorkloadSpec s;
      s.batch_size = B;
      s.prefix_length = 512;
      s.generation = LengthDist::fixed(g);
      s.request_count = B;
      for (Method m : {Method::Naive, Method::Absorb, Method::Typhoon}) {
        const auto r = run(s, m);
        CHECK(r.steps == g);
        CHECK(r.total_tokens == B * g);
        CHECK(r.requests_completed == B);
      }
      s.request_count = 2 * B;
      CHECK(run(s, Method::Typhoon).total_tokens == 2 * B * g);
    }
}

TEST_CASE("token conservation under churn") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 40; ++trial) {
    auto s = random_spec(rng);
    const auto reqs = generate_workload(s);
    const std::uint64_t expect = std::accumulate(reqs.begin(), reqs.end(), std::uint64_t{0},
                                                 [](std::uint64_t a, const Request& r) { return a + r.gen_len; });
    const auto r = run(s, Method::Typhoon);
    CHECK(r.total_tokens == expect);
    CHECK(r.requests_completed == s.request_count);
    CHECK(r.throughput > 0);
    for (const auto& t : r.trace) CHECK(t.batch <= s.batch_size);
  }
}

TEST_CASE("identical seeds give identical reports") {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_spec(rng);
    const auto a = run(s, Method::Typhoon);
    const auto b = run(s, Method::Typhoon);
    CHECK(a.total_tokens == b.total_tokens);
    CHECK(a.steps == b.steps);
    CHECK(a.hybrid_steps == b.hybrid_steps);
    CHECK(std::fabs(a.modeled_time - b.modeled_time) <= 1e-12 * a.modeled_time);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].batch == b.trace[i].batch);
      CHECK(a.trace[i].nonshared_tokens == b.trace[i].nonshared_tokens);
    }
  }
}

TEST_CASE("typhoon equals absorb below the threshold and without a prefix") {
  WorkloadSpec s;
  s.prefix_length = 8192;
  s.tail = LengthDist::uniform(0, 64);
  s.generation = LengthDist::fixed(3);
  for (std::size_t B : {1u, 2u, 17u, 63u}) {
    s.batch_size = B;
    s.request_count = 3 * B;
    const auto t = run(s, Method::Typhoon);
    const auto a = run(s, Method::Absorb);
    CHECK(t.hybrid_steps == 0);
    CHECK(t.throughput == a.throughput);
  }
  s.prefix_length = 0;
  for (std::size_t B : {64u, 256u, 1024u}) {
    s.batch_size = B;
    s.request_count = B;
    const auto t = run(s, Method::Typhoon);
    CHECK(t.hybrid_steps == 0);
    CHECK(t.throughput == run(s, Method::Absorb).throughput);
  }
}

TEST_CASE("typhoon is never slower than absorb at prompt-scale prefixes") {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 60; ++trial) {
    const auto s = random_spec(rng);
    const auto& cfg = trial % 2 ? kimi_k2() : deepseek_v3();
    const auto t = run(s, Method::Typhoon, cfg);
    const auto a = run(s, Method::Absorb, cfg);
    CHECK(t.throughput >= a.throughput);
    if (t.hybrid_steps > 0) CHECK(t.throughput > a.throughput);
  }
}

TEST_CASE("component times") {
  WorkloadSpec s;
  s.batch_size = 128;
  s.prefix_length = 4096;
  s.tail = LengthDist::fixed(16);
  s.generation = LengthDist::fixed(2);
  s.request_count = 128;
  const auto n = run(s, Method::Naive);
  CHECK(n.times.stage2_attn == 0);
  CHECK(n.times.wkvb1_proj == 0);
  CHECK(n.times.combine_lse == 0);
  const auto a = run(s, Method::Absorb);
  CHECK(a.times.stage1_attn == 0);
  CHECK(a.times.wkvb1_proj > 0);
  CHECK(a.times.combine_lse == 0);
  const auto t = run(s, Method::Typhoon);
  CHECK(t.hybrid_steps == 2);
  CHECK(t.times.stage1_attn > 0);
  CHECK(t.times.stage2_attn > 0);
  CHECK(t.times.combine_lse > 0);
  CHECK(t.times.wkvb1_proj == a.times.wkvb1_proj);
  CHECK(t.times.wkvb2_proj == a.times.wkvb2_proj);
  for (const auto* r : {&n, &a, &t}) {
    CHECK(r->modeled_time == doctest::Approx(r->times.total()));
    CHECK(r->times.stage1_attn >= 0);
    CHECK(r->times.stage2_attn >= 0);
    CHECK(r->shared_attn_time + r->nonshared_attn_time ==
          doctest::Approx(r->times.stage1_attn + r->times.stage2_attn));
  }
}

TEST_CASE("shared-part ratio at the breakdown shape") {
  WorkloadSpec s;
  s.batch_size = 1024;
  s.prefix_length = 4096;
  s.tail = LengthDist::fixed(512);
  s.generation = LengthDist::fixed(1);
  s.request_count = 1024;
  const auto a = run(s, Method::Absorb, kimi_k2());
  const auto t = run(s, Method::Typhoon, kimi_k2());
  const double ratio = a.shared_attn_time / t.shared_attn_time;
  CHECK(ratio >= 3.0);
  CHECK(ratio <= 3.6);
  CHECK(a.nonshared_attn_time == doctest::Approx(t.nonshared_attn_time));
}

TEST_CASE("real-math steps agree across decode paths") {
  WorkloadSpec s;
  s.batch_size = 70;
  s.prefix_length = 300;
  s.tail = LengthDist::uniform(0, 6);
  s.generation = LengthDist::uniform(1, 3);
  s.request_count = 90;
  s.seed = 3;
  SimOptions o;
  o.math = MathMode::Full;
  o.check_parity = true;
  for (Method m : {Method::Absorb, Method::Typhoon}) {
    const auto r = run(s, m, deepseek_v3(), o);
    CHECK(r.parity_checks == r.total_tokens);
    CHECK(r.max_parity_error <= 1e-5);
    CHECK(r.shared_len_executed == 64);
    CHECK(r.shared_len_modeled == 300);
    CHECK(r.prefixes_built == 1);
  }
  const auto off = run(s, Method::Typhoon);
  const auto full = run(s, Method::Typhoon, deepseek_v3(), o);
  CHECK(off.modeled_time == full.modeled_time);
  CHECK(off.math_model == "off");
}

TEST_CASE("undersized pool is a capacity error") {
  WorkloadSpec s;
  s.batch_size = 4;
  s.tail = LengthDist::fixed(300);
  s.generation = LengthDist::fixed(10);
  s.request_count = 4;
  SimOptions o;
  o.cache_blocks = 2;
  CHECK_THROWS_AS(run(s, Method::Absorb, deepseek_v3(), o), CapacityError);

  o.cache_blocks = 3;
  const auto r = run(s, Method::Absorb, deepseek_v3(), o);
  CHECK(r.total_tokens == 40);
  CHECK(r.admission_stalls > 0);
  CHECK(r.peak_blocks_used <= 3);
  for (const auto& t : r.trace) CHECK(t.batch == 1);
}

TEST_CASE("speedup sweep") {
  WorkloadSpec s;
  s.prefix_length = 4096;
  s.tail = LengthDist::fixed(512);
  s.generation = LengthDist::fixed(2);
  const std::vector<std::size_t> batches{1, 8, 32, 63, 64, 128, 256, 512, 1024};
  for (const auto& cfg : {deepseek_v3(), kimi_k2()}) {
    s.request_count = 1024;
    const auto rows = speedup_report(s, batches, cfg, cost::ascend_910_class(), ascend_policy(cfg));
    REQUIRE(rows.size() == batches.size());
    for (const auto& r : rows) {
      if (r.batch < 64) {
        CHECK(r.speedup_vs_absorb == 1.0);
        CHECK(r.hybrid_steps == 0);
      } else {
        CHECK(r.speedup_vs_absorb > 1.0);
      }
    }
    for (std::size_t i = 5; i < rows.size(); ++i) CHECK(rows[i].speedup_vs_absorb >= rows[i - 1].speedup_vs_absorb * (1 - 1e-9));
  }
  s.prefix_length = 0;
  for (const auto& r : speedup_report(s, batches, deepseek_v3(), cost::ascend_910_class(), ascend_policy()))
    CHECK(r.speedup_vs_absorb == 1.0);
  CHECK_THROWS_AS(speedup_report(s, {}, deepseek_v3(), cost::ascend_910_class(), ascend_policy()), ArgumentError);
}
