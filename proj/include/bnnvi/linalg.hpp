#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bnnvi/errors.hpp"

namespace bnnvi {

using Vector = std::vector<double>;

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.size()) {
    throw DimensionMismatch("matvec: " + std::to_string(m.rows()) + "x" +
                            std::to_string(m.cols()) + " times vector of length " +
                            std::to_string(v.size()));
  }
  Vector out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double* row = m.row(r);
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

// Cholesky factor L of a symmetric positive definite A, so L * L^T = A.
inline Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch("cholesky: matrix must be square");
  }
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) {
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) +
                                " is not positive");
    }
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

inline double log_sum_exp(const Vector& values) {
  if (values.empty()) throw EmptyInput("log_sum_exp: empty input");
  const double m = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (const double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

// log((1/M) * sum_i exp(v_i)), shifted by the max for stability.
inline double log_mean_exp(const Vector& values) {
  return log_sum_exp(values) - std::log(static_cast<double>(values.size()));
}

inline double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double squared_norm(const Vector& v) {
  double acc = 0.0;
  for (const double x : v) acc += x * x;
  return acc;
}

inline double mean(const Vector& v) {
  if (v.empty()) throw EmptyInput("mean: empty input");
  double acc = 0.0;
  for (const double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline double variance(const Vector& v) {
  const double m = mean(v);
  double acc = 0.0;
  for (const double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size());
}

}  // namespace bnnvi
