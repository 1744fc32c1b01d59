#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cssl {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. All heavy lifting in this project is
// small dense linear algebra, so a flat vector plus index arithmetic is all
// we need.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  bool empty() const { return data.empty(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

// c = a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols == b.rows, "matmul: inner dimensions differ (" +
                                      std::to_string(a.cols) + " vs " +
                                      std::to_string(b.rows) + ")");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

// c = a^T * b  (a: m x n, b: m x p -> c: n x p)
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  require_shape(a.rows == b.rows, "matmul_at_b: row counts differ");
  Matrix c(a.cols, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    const double* bi = b.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      double* ck = c.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) ck[j] += aik * bi[j];
    }
  }
  return c;
}

// c = a * b^T  (a: m x n, b: p x n -> c: m x p)
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  require_shape(a.cols == b.cols, "matmul_a_bt: column counts differ");
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
      ci[j] = s;
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

inline void add_row_vector(Matrix& m, const std::vector<double>& v) {
  require_shape(m.cols == v.size(), "add_row_vector: length mismatch");
  for (std::size_t i = 0; i < m.rows; ++i) {
    double* mi = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) mi[j] += v[j];
  }
}

inline std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> s(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* mi = m.row(i);
    for (std::size_t j = 0; j < m.cols; ++j) s[j] += mi[j];
  }
  return s;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_shape(a.same_shape(b), "max_abs_diff: shape mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    d = std::max(d, std::abs(a.data[i] - b.data[i]));
  return d;
}

}  // namespace cssl
