// Independent oracles used by the test suites. These deliberately use
// different algorithms than the library (truncated Taylor series instead
// of Pade, cofactor determinants instead of Faddeev-LeVerrier) so that a
// bug in the implementation cannot hide in its own oracle.
#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "smamba/numerics.hpp"
#include "smamba/rng.hpp"

namespace oracle {

using smamba::Index;
using smamba::Matrix;
using smamba::Vector;

// e^M by scaling the matrix down to unit norm, summing 60 Taylor terms,
// and squaring back up.
inline Matrix taylor_exp(const Matrix& m) {
  const Index n = m.rows();
  const double norm = m.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm > 1.0) s = static_cast<int>(std::ceil(std::log2(norm)));
  const Matrix a = m / std::pow(2.0, s);
  Matrix acc = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  for (int k = 1; k <= 60; ++k) {
    term = term * a / double(k);
    acc += term;
  }
  for (int i = 0; i < s; ++i) acc = acc * acc;
  return acc;
}

// Phi(X) = sum_{k=0}^{60} X^k / (k+1)!, directly, for small-norm X.
inline Matrix phi_series60(const Matrix& x) {
  const Index n = x.rows();
  Matrix acc = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  for (int k = 1; k <= 60; ++k) {
    term = term * x / double(k + 1);
    acc += term;
  }
  return acc;
}

inline Matrix random_matrix(smamba::Rng& rng, Index rows, Index cols,
                            double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

inline Vector random_vector(smamba::Rng& rng, Index n, double lo, double hi) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

// det(sI - A) for 2x2, expanded by hand: s^2 - tr(A) s + det(A).
inline void char_poly_2x2(const Matrix& a, double& c0, double& c1) {
  c1 = -(a(0, 0) + a(1, 1));
  c0 = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
}

}  // namespace oracle
