#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hmla/errors.hpp"

namespace hmla {

// Dense row-major matrix. Rows are exposed as spans so per-head slices can be
// handed to the vector kernels without copies.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{});
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  Matrix transposed() const;

  template <typename U>
  Matrix<U> cast() const {
    return Matrix<U>(rows_, cols_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
struct SoftmaxRow {
  std::vector<T> probs;
  T lse;  // log of the softmax denominator
};

// a · b with a fixed i-k-j loop order.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b);

// Row vector times matrix: x · m.
template <typename T>
std::vector<T> vecmat(std::span<const T> x, const Matrix<T>& m);

// Matrix times column vector: m · x.
template <typename T>
std::vector<T> matvec(const Matrix<T>& m, std::span<const T> x);

template <typename T>
T dot(std::span<const T> a, std::span<const T> b);

// Max-stabilized softmax that also returns the log-sum-exp. Entries equal to
// -inf are treated as masked and receive probability 0; at least one entry
// must be finite.
template <typename T>
SoftmaxRow<T> softmax_lse(std::span<const T> scores);

// y_i = x_i * gain_i / sqrt(mean(x^2) + eps). An all-zero input maps to zeros
// even when eps == 0.
template <typename T>
std::vector<T> rmsnorm(std::span<const T> x, std::span<const T> gain, T eps);

// Rotates consecutive pairs (x[2j], x[2j+1]) by position * base^(-2j/len).
template <typename T>
std::vector<T> rope(std::span<const T> x, std::size_t position, double base = 10000.0);

// Norm-wise relative error max|a-b| / max|b|; returns max|a-b| when b == 0.
template <typename T>
double relative_error(std::span<const T> a, std::span<const T> b);

template <typename T>
double relative_error(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("relative_error: matrix shapes differ");
  }
  return relative_error(a.values(), b.values());
}

}  // namespace hmla
