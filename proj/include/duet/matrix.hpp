#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "duet/errors.hpp"

namespace duet {

// Dense row-major matrix of doubles. Vectors are 1xN or Nx1 as noted per use.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
  Matrix(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
    assert(static_cast<size_t>(rows) * cols == v.size());
  }

  double& operator()(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return v.size(); }
  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  static Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix filled(int r, int c, double x) {
    Matrix m(r, c);
    for (double& e : m.v) e = x;
    return m;
  }
};

inline void require_shape(const Matrix& m, int r, int c, const std::string& what) {
  if (m.rows != r || m.cols != c)
    throw Error(ErrorKind::ShapeMismatch, what + ": expected " + std::to_string(r) + "x" +
                                              std::to_string(c) + ", got " + std::to_string(m.rows) +
                                              "x" + std::to_string(m.cols));
}

// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw Error(ErrorKind::ShapeMismatch, "matmul inner dimension mismatch");
  Matrix c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.data() + static_cast<size_t>(i) * a.cols;
    double* crow = c.data() + static_cast<size_t>(i) * b.cols;
    for (int k = 0; k < a.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data() + static_cast<size_t>(k) * b.cols;
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::ShapeMismatch, "add shape mismatch");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c.v[i] += b.v[i];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::ShapeMismatch, "sub shape mismatch");
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c.v[i] -= b.v[i];
  return c;
}

// Overflow-safe softplus.
inline double softplus(double z) { return std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0); }

}  // namespace duet
