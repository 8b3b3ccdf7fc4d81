#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "curvlab/scalar.hpp"

namespace curvlab {

template <class S>
using Matrix = std::vector<std::vector<S>>;

struct RankResult {
  int rank = 0;
  std::vector<std::size_t> pivot_columns;
  std::vector<std::size_t> pivot_rows;  // original row index of each pivot
};

// Rank by fraction-free (Bareiss) elimination after clearing row denominators.
inline RankResult rank_fraction_free(const Matrix<Rational>& a) {
  RankResult res;
  std::size_t rows = a.size();
  if (rows == 0) return res;
  std::size_t cols = a.front().size();
  Matrix<mpz_class> m(rows, std::vector<mpz_class>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    mpz_class l = 1;
    for (const auto& q : a[i]) mpz_lcm(l.get_mpz_t(), l.get_mpz_t(), q.get_den_mpz_t());
    for (std::size_t j = 0; j < cols; ++j) m[i][j] = a[i][j].get_num() * (l / a[i][j].get_den());
  }
  std::vector<std::size_t> row_id(rows);
  for (std::size_t i = 0; i < rows; ++i) row_id[i] = i;
  mpz_class prev = 1;
  std::size_t r = 0;
  for (std::size_t c = 0; c < cols && r < rows; ++c) {
    std::size_t piv = rows;
    for (std::size_t i = r; i < rows; ++i)
      if (sgn(m[i][c]) != 0) {
        piv = i;
        break;
      }
    if (piv == rows) continue;
    std::swap(m[r], m[piv]);
    std::swap(row_id[r], row_id[piv]);
    for (std::size_t i = r + 1; i < rows; ++i) {
      for (std::size_t j = c + 1; j < cols; ++j) {
        m[i][j] = (m[r][c] * m[i][j] - m[i][c] * m[r][j]);
        mpz_divexact(m[i][j].get_mpz_t(), m[i][j].get_mpz_t(), prev.get_mpz_t());
      }
      m[i][c] = 0;
    }
    prev = m[r][c];
    res.pivot_columns.push_back(c);
    res.pivot_rows.push_back(row_id[r]);
    ++r;
  }
  res.rank = static_cast<int>(r);
  return res;
}

// Rank with partial pivoting and a relative tolerance.
inline RankResult rank_float(Matrix<double> m, double tol = 1e-10) {
  RankResult res;
  std::size_t rows = m.size();
  if (rows == 0) return res;
  std::size_t cols = m.front().size();
  double scale = 0;
  for (auto& row : m)
    for (double v : row) scale = std::max(scale, std::fabs(v));
  if (scale == 0) return res;
  std::vector<std::size_t> row_id(rows);
  for (std::size_t i = 0; i < rows; ++i) row_id[i] = i;
  std::size_t r = 0;
  for (std::size_t c = 0; c < cols && r < rows; ++c) {
    std::size_t piv = rows;
    double best = tol * scale;
    for (std::size_t i = r; i < rows; ++i)
      if (std::fabs(m[i][c]) > best) {
        best = std::fabs(m[i][c]);
        piv = i;
      }
    if (piv == rows) continue;
    std::swap(m[r], m[piv]);
    std::swap(row_id[r], row_id[piv]);
    for (std::size_t i = r + 1; i < rows; ++i) {
      double f = m[i][c] / m[r][c];
      for (std::size_t j = c; j < cols; ++j) m[i][j] -= f * m[r][j];
    }
    res.pivot_columns.push_back(c);
    res.pivot_rows.push_back(row_id[r]);
    ++r;
  }
  res.rank = static_cast<int>(r);
  return res;
}

template <class S>
RankResult matrix_rank(const Matrix<S>& a) {
  if constexpr (ScalarTraits<S>::exact)
    return rank_fraction_free(a);
  else
    return rank_float(a);
}

// One exact solution of A x = b, or nullopt when the system is inconsistent.
inline std::optional<std::vector<Rational>> solve_exact(Matrix<Rational> a, std::vector<Rational> b) {
  std::size_t rows = a.size();
  std::size_t cols = rows ? a.front().size() : 0;
  std::vector<std::size_t> pivcol;
  std::size_t r = 0;
  for (std::size_t c = 0; c < cols && r < rows; ++c) {
    std::size_t piv = rows;
    for (std::size_t i = r; i < rows; ++i)
      if (sgn(a[i][c]) != 0) {
        piv = i;
        break;
      }
    if (piv == rows) continue;
    std::swap(a[r], a[piv]);
    std::swap(b[r], b[piv]);
    Rational p = a[r][c];
    for (std::size_t j = c; j < cols; ++j) a[r][j] /= p;
    b[r] /= p;
    for (std::size_t i = 0; i < rows; ++i) {
      if (i == r || sgn(a[i][c]) == 0) continue;
      Rational f = a[i][c];
      for (std::size_t j = c; j < cols; ++j) a[i][j] -= f * a[r][j];
      b[i] -= f * b[r];
    }
    pivcol.push_back(c);
    ++r;
  }
  for (std::size_t i = r; i < rows; ++i)
    if (sgn(b[i]) != 0) return std::nullopt;
  std::vector<Rational> x(cols, Rational(0));
  for (std::size_t i = 0; i < pivcol.size(); ++i) x[pivcol[i]] = b[i];
  return x;
}

}  // namespace curvlab
