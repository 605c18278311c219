#include "hmla/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace hmla {

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, T fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

template <typename T>
Matrix<T>::Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for shape " +
                     dims(rows_, cols_));
  }
}

template <typename T>
Matrix<T> Matrix<T>::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
  return m;
}

template <typename T>
Matrix<T> Matrix<T>::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + dims(a.rows(), a.cols()) + " * " + dims(b.rows(), b.cols()));
  }
  Matrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

template <typename T>
std::vector<T> vecmat(std::span<const T> x, const Matrix<T>& m) {
  if (x.size() != m.rows()) {
    throw ShapeError("vecmat: vector of " + std::to_string(x.size()) + " * " +
                     dims(m.rows(), m.cols()));
  }
  std::vector<T> out(m.cols(), T{0});
  for (std::size_t k = 0; k < m.rows(); ++k) {
    const T xk = x[k];
    auto src = m.row(k);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += xk * src[j];
  }
  return out;
}

template <typename T>
std::vector<T> matvec(const Matrix<T>& m, std::span<const T> x) {
  if (x.size() != m.cols()) {
    throw ShapeError("matvec: " + dims(m.rows(), m.cols()) + " * vector of " +
                     std::to_string(x.size()));
  }
  std::vector<T> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = dot(m.row(i), x);
  return out;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
SoftmaxRow<T> softmax_lse(std::span<const T> scores) {
  if (scores.empty()) throw ArgumentError("softmax_lse: empty score vector");
  constexpr T neg_inf = -std::numeric_limits<T>::infinity();
  T m = neg_inf;
  for (T s : scores) {
    if (std::isnan(s) || s == std::numeric_limits<T>::infinity()) {
      throw ArgumentError("softmax_lse: non-finite score");
    }
    m = std::max(m, s);
  }
  if (m == neg_inf) throw ArgumentError("softmax_lse: every score is masked");

  SoftmaxRow<T> out{std::vector<T>(scores.size()), T{0}};
  T sum{0};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.probs[i] = scores[i] == neg_inf ? T{0} : std::exp(scores[i] - m);
    sum += out.probs[i];
  }
  for (T& p : out.probs) p /= sum;
  out.lse = m + std::log(sum);
  return out;
}

template <typename T>
std::vector<T> rmsnorm(std::span<const T> x, std::span<const T> gain, T eps) {
  if (x.size() != gain.size()) {
    throw ShapeError("rmsnorm: input length " + std::to_string(x.size()) + ", gain length " +
                     std::to_string(gain.size()));
  }
  if (!(eps >= T{0})) throw ArgumentError("rmsnorm: eps must be non-negative");
  std::vector<T> out(x.size(), T{0});
  if (x.empty()) return out;
  T sq{0};
  for (T v : x) sq += v * v;
  const T denom = std::sqrt(sq / static_cast<T>(x.size()) + eps);
  if (denom == T{0}) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * gain[i] / denom;
  return out;
}

template <typename T>
std::vector<T> rope(std::span<const T> x, std::size_t position, double base) {
  if (x.size() % 2 != 0) {
    throw ShapeError("rope: odd input length " + std::to_string(x.size()));
  }
  if (!(base > 0.0)) throw ArgumentError("rope: base must be positive");
  std::vector<T> out(x.size());
  const double len = static_cast<double>(x.size());
  for (std::size_t j = 0; 2 * j < x.size(); ++j) {
    const double theta =
        static_cast<double>(position) * std::pow(base, -2.0 * static_cast<double>(j) / len);
    const T c = static_cast<T>(std::cos(theta));
    const T s = static_cast<T>(std::sin(theta));
    const T x0 = x[2 * j];
    const T x1 = x[2 * j + 1];
    out[2 * j] = x0 * c - x1 * s;
    out[2 * j + 1] = x0 * s + x1 * c;
  }
  return out;
}

template <typename T>
double relative_error(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: lengths differ");
  double diff = 0.0;
  double ref = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    ref = std::max(ref, std::abs(static_cast<double>(b[i])));
  }
  return ref > 0.0 ? diff / ref : diff;
}

#define HMLA_INSTANTIATE_NUMERICS(T)                                                   \
  template class Matrix<T>;                                                            \
  template Matrix<T> matmul(const Matrix<T>&, const Matrix<T>&);                       \
  template std::vector<T> vecmat(std::span<const T>, const Matrix<T>&);                \
  template std::vector<T> matvec(const Matrix<T>&, std::span<const T>);                \
  template T dot(std::span<const T>, std::span<const T>);                              \
  template SoftmaxRow<T> softmax_lse(std::span<const T>);                              \
  template std::vector<T> rmsnorm(std::span<const T>, std::span<const T>, T);          \
  template std::vector<T> rope(std::span<const T>, std::size_t, double);               \
  template double relative_error(std::span<const T>, std::span<const T>);

HMLA_INSTANTIATE_NUMERICS(float)
HMLA_INSTANTIATE_NUMERICS(double)

#undef HMLA_INSTANTIATE_NUMERICS

}  // namespace hmla
