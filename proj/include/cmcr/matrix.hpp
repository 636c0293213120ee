#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "cmcr/common.hpp"

namespace cmcr {

// Dense row-major matrix of 64-bit reals. The only tensor rank in this
// codebase; image grids are stored flattened with (height, width) metadata
// carried alongside.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> lists) {
    Matrix m(lists.size(), lists.size() ? lists.begin()->size() : 0);
    std::size_t i = 0;
    for (const auto& row : lists) {
      detail::require(row.size() == m.cols, "from_rows: ragged initializer");
      std::size_t j = 0;
      for (double x : row) m(i, j++) = x;
      ++i;
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

  double* row_ptr(std::size_t i) { return v.data() + i * cols; }
  const double* row_ptr(std::size_t i) const { return v.data() + i * cols; }

  std::size_t size() const { return rows * cols; }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline bool operator==(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols && a.v == b.v;
}

inline void add_in_place(Matrix& dst, const Matrix& src) {
  detail::require(dst.same_shape(src),
                  "add_in_place: shape mismatch " + shape_str(dst) + " vs " + shape_str(src));
  for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

inline void axpy_in_place(Matrix& dst, double a, const Matrix& src) {
  detail::require(dst.same_shape(src), "axpy_in_place: shape mismatch");
  for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += a * src.v[i];
}

// out = a * b
inline Matrix matmul_nn(const Matrix& a, const Matrix& b) {
  detail::require(a.cols == b.rows,
                  "matmul: inner dimensions differ: " + shape_str(a) + " * " + shape_str(b));
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* orow = out.row_ptr(i);
    const double* arow = a.row_ptr(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// out = a * b^T   (row-by-row dot products; used by gradients)
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  detail::require(a.cols == b.cols,
                  "matmul_nt: column counts differ: " + shape_str(a) + " vs " + shape_str(b));
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.row_ptr(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      orow[j] = s;
    }
  }
  return out;
}

// out = a^T * b
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  detail::require(a.rows == b.rows,
                  "matmul_tn: row counts differ: " + shape_str(a) + " vs " + shape_str(b));
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = a.row_ptr(k);
    const double* brow = b.row_ptr(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* orow = out.row_ptr(i);
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

inline Matrix transposed(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double x : a.v) s += x * x;
  return std::sqrt(s);
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  detail::require(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) m = std::max(m, std::abs(a.v[i] - b.v[i]));
  return m;
}

}  // namespace cmcr
