#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hmla/numerics.hpp"
#include "oracles.hpp"

using hmla::Matrix;

TEST_CASE("matmul hand cases") {
  const Matrix<double> a(2, 2, {1, 2, 3, 4});
  CHECK(hmla::matmul(Matrix<double>::identity(2), a) == a);

  const Matrix<double> r(1, 2, {1, 2});
  const Matrix<double> c(2, 1, {3, 4});
  const auto p = hmla::matmul(r, c);
  CHECK(p.rows() == 1);
  CHECK(p.cols() == 1);
  CHECK(p(0, 0) == 11);

  CHECK_THROWS_AS(hmla::matmul(a, r), hmla::ShapeError);
  CHECK_THROWS_AS(Matrix<double>(2, 2, {1, 2, 3}), hmla::ShapeError);
}

TEST_CASE("matmul matches the triple-loop oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 9);
    const std::size_t n = trial == 0 ? 7 : dim(rng), k = trial == 0 ? 5 : dim(rng), m = trial == 0 ? 3 : dim(rng);
    const auto a = oracle::random_matrix<double>(rng, n, k);
    const auto b = oracle::random_matrix<double>(rng, k, m);
    const auto got = hmla::matmul(a, b);
    const auto want = oracle::matmul(oracle::to_mat(a), oracle::to_mat(b));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) CHECK(std::fabs(got(i, j) - static_cast<double>(want[i][j])) <= 1e-12);
  }
}

TEST_CASE("matmul is associative within rounding") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::random_matrix<double>(rng, 4, 6);
    const auto b = oracle::random_matrix<double>(rng, 6, 3);
    const auto c = oracle::random_matrix<double>(rng, 3, 5);
    const auto left = hmla::matmul(hmla::matmul(a, b), c);
    const auto right = hmla::matmul(a, hmla::matmul(b, c));
    CHECK(hmla::relative_error(left, right) <= 1e-6);
  }
}

TEST_CASE("matmul is reproducible") {
  std::mt19937_64 rng(13);
  const auto a = oracle::random_matrix<float>(rng, 17, 23);
  const auto b = oracle::random_matrix<float>(rng, 23, 9);
  CHECK(hmla::matmul(a, b) == hmla::matmul(a, b));
}

TEST_CASE("vecmat and matvec") {
  const Matrix<double> m(2, 3, {1, 2, 3, 4, 5, 6});
  const std::vector<double> x2{1, -1};
  const std::vector<double> x3{1, 0, 2};
  CHECK(hmla::vecmat<double>(x2, m) == std::vector<double>{-3, -3, -3});
  CHECK(hmla::matvec<double>(m, x3) == std::vector<double>{7, 16});
  CHECK_THROWS_AS(hmla::vecmat<double>(x3, m), hmla::ShapeError);
  CHECK_THROWS_AS(hmla::matvec<double>(m, x2), hmla::ShapeError);
  CHECK(hmla::dot<double>(x3, x3) == 5);
}

TEST_CASE("softmax_lse examples") {
  {
    const std::vector<double> s{0, 0};
    const auto r = hmla::softmax_lse<double>(s);
    CHECK(r.probs[0] == doctest::Approx(0.5));
    CHECK(r.probs[1] == doctest::Approx(0.5));
    CHECK(r.lse == doctest::Approx(0.693147).epsilon(1e-6));
  }
  for (double s : {-50.0, 0.0, 3.25, 700.0}) {
    const std::vector<double> v{s};
    const auto r = hmla::softmax_lse<double>(v);
    CHECK(r.probs[0] == 1.0);
    CHECK(r.lse == s);
  }
  {
    const std::vector<double> s{1000, 1000};
    const auto r = hmla::softmax_lse<double>(s);
    CHECK(r.probs[0] == doctest::Approx(0.5));
    CHECK(r.lse == doctest::Approx(1000 + std::log(2.0)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(hmla::softmax_lse<double>(std::vector<double>{}), hmla::ArgumentError);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hmla::softmax_lse<double>(std::vector<double>{0, nan}), hmla::ArgumentError);
  CHECK_THROWS_AS(hmla::softmax_lse<double>(std::vector<double>{0, inf}), hmla::ArgumentError);
  CHECK_THROWS_AS(hmla::softmax_lse<double>(std::vector<double>{-inf, -inf}), hmla::ArgumentError);
}

TEST_CASE("softmax_lse masks -inf entries") {
  const double inf = std::numeric_limits<double>::infinity();
  const std::vector<double> s{0.5, -inf, 0.5, -inf};
  const auto r = hmla::softmax_lse<double>(s);
  CHECK(r.probs[1] == 0.0);
  CHECK(r.probs[3] == 0.0);
  CHECK(r.probs[0] == doctest::Approx(0.5));
  CHECK(r.lse == doctest::Approx(0.5 + std::log(2.0)));
}

TEST_CASE("softmax_lse properties on random rows") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  std::uniform_real_distribution<double> shift(-100, 100);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = oracle::random_vec<double>(rng, len(rng), -20, 20);
    const auto r = hmla::softmax_lse<double>(s);
    const auto o = oracle::softmax(oracle::to_vec(s));
    double sum = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      sum += r.probs[i];
      CHECK(r.probs[i] >= 0.0);
      CHECK(r.probs[i] <= 1.0);
      CHECK(std::fabs(r.probs[i] - std::exp(s[i] - r.lse)) <= 1e-12);
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-6);
    CHECK(std::fabs(r.lse - static_cast<double>(o.lse)) <= 1e-12 * std::max(1.0, std::fabs(r.lse)));

    const double c = shift(rng);
    std::vector<double> t = s;
    for (double& v : t) v += c;
    const auto rs = hmla::softmax_lse<double>(t);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::fabs(rs.probs[i] - r.probs[i]) <= 1e-12);
    CHECK(rs.lse - r.lse == doctest::Approx(c).epsilon(1e-12));
  }
}

TEST_CASE("rmsnorm examples") {
  const std::vector<double> ones3{1, 1, 1};
  for (double c : {0.25, 3.0, 1e4}) {
    const std::vector<double> x{c, c, c};
    for (double y : hmla::rmsnorm<double>(x, ones3, 0.0)) CHECK(y == doctest::Approx(1.0).epsilon(1e-12));
  }
  const std::vector<double> zero{0, 0, 0};
  for (double eps : {1e-6, 0.0})
    for (double y : hmla::rmsnorm<double>(zero, ones3, eps)) CHECK(y == 0.0);

  const std::vector<double> x{3, 4};
  const std::vector<double> g{1, 1};
  const auto y = hmla::rmsnorm<double>(x, g, 0.0);
  CHECK(y[0] == doctest::Approx(0.848528).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(1.131371).epsilon(1e-6));
  CHECK_THROWS_AS(hmla::rmsnorm<double>(x, ones3, 0.0), hmla::ShapeError);
}

TEST_CASE("rmsnorm output has unit rms and matches the oracle") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = oracle::random_vec<double>(rng, 1 + trial % 17, -5, 5);
    const std::vector<double> gain(x.size(), 1.0);
    const auto y = hmla::rmsnorm<double>(x, gain, 0.0);
    double ss = 0;
    for (double v : y) ss += v * v;
    CHECK(std::sqrt(ss / y.size()) == doctest::Approx(1.0).epsilon(1e-6));

    const auto g = oracle::random_vec<double>(rng, x.size());
    const auto got = hmla::rmsnorm<double>(x, g, 1e-6);
    const auto want = oracle::rmsnorm(oracle::to_vec(x), oracle::to_vec(g), 1e-6L);
    CHECK(oracle::rel_err(got, want) <= 1e-12);
  }
}

TEST_CASE("rope examples") {
  std::mt19937_64 rng(41);
  const auto x = oracle::random_vec<double>(rng, 8);
  CHECK(hmla::rope<double>(x, 0) == x);

  const std::vector<double> unit{1, 0};
  for (double base : {10000.0, 2.0}) {
    const auto y = hmla::rope<double>(unit, 1, base);
    CHECK(y[0] == doctest::Approx(0.540302).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(0.841471).epsilon(1e-6));
  }
  CHECK_THROWS_AS(hmla::rope<double>(std::vector<double>{1, 2, 3}, 1), hmla::ShapeError);
}

TEST_CASE("rope is an isometry with the relative-position property") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<std::size_t> pos(0, 5000);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 * (1 + trial % 8);
    const auto q = oracle::random_vec<double>(rng, n);
    const auto k = oracle::random_vec<double>(rng, n);
    const std::size_t p = pos(rng), r = pos(rng), shift = pos(rng);

    const auto rq = hmla::rope<double>(q, p);
    CHECK(std::sqrt(hmla::dot<double>(rq, rq)) == doctest::Approx(std::sqrt(hmla::dot<double>(q, q))).epsilon(1e-6));
    CHECK(oracle::rel_err(rq, oracle::rope(oracle::to_vec(q), p)) <= 1e-10);

    const double d1 = hmla::dot<double>(hmla::rope<double>(q, p), hmla::rope<double>(k, r));
    const double d2 = hmla::dot<double>(hmla::rope<double>(q, p + shift), hmla::rope<double>(k, r + shift));
    CHECK(std::fabs(d1 - d2) <= 1e-6 * std::max(1.0, std::fabs(d1)));
  }
}

TEST_CASE("relative_error is norm-wise") {
  const std::vector<double> b{1, -4, 2};
  const std::vector<double> a{1, -3, 2};
  CHECK(hmla::relative_error<double>(a, b) == doctest::Approx(0.25));
  CHECK(hmla::relative_error<double>(b, b) == 0.0);
  const std::vector<double> z{0, 0};
  const std::vector<double> e{0, 1e-3};
  CHECK(hmla::relative_error<double>(e, z) == doctest::Approx(1e-3));
  CHECK_THROWS_AS(hmla::relative_error<double>(a, z), hmla::ShapeError);
}
