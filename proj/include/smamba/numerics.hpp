// Dense numerical kernels used by the canonical-form and discretization
// math: matrix exponential, pivoted linear solve, numerical rank, and
// polynomial root finding. Everything is 64-bit real; Eigen supplies
// storage and arithmetic, the algorithms live here.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include "smamba/errors.hpp"

namespace smamba {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Complex = std::complex<double>;

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

/// e^M by scaling-and-squaring with the order-13 Pade approximant.
/// The input is scaled so that ||M/2^s||_1 <= 0.5 before the rational
/// approximation, then squared back s times.
inline Matrix mat_exp(const Eigen::Ref<const Matrix>& m) {
  if (m.rows() != m.cols())
    throw DimensionError("mat_exp: matrix must be square");
  if (!all_finite(m)) throw DomainError("mat_exp: non-finite entries");
  const Index n = m.rows();
  if (n == 0) return Matrix(0, 0);

  const double norm1 = m.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > 0.5) s = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));

  const Matrix a = m / std::pow(2.0, s);

  // Pade(13) coefficients.
  static const double b[] = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
      1187353796428800.0,  129060195264000.0,   10559470521600.0,
      670442572800.0,      33522128640.0,       1323241920.0,
      40840800.0,          960960.0,            16380.0,
      182.0,               1.0};

  const Matrix a2 = a * a;
  const Matrix a4 = a2 * a2;
  const Matrix a6 = a4 * a2;
  const Matrix id = Matrix::Identity(n, n);

  const Matrix u =
      a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 +
           b[5] * a4 + b[3] * a2 + b[1] * id);
  const Matrix v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
                   b[4] * a4 + b[2] * a2 + b[0] * id;

  Matrix r = (v - u).partialPivLu().solve(v + u);
  for (int i = 0; i < s; ++i) r = r * r;
  return r;
}

/// Solves M X = RHS by partial-pivot LU. A pivot smaller than 1e-12 in
/// magnitude reports the matrix as singular; callers that can handle the
/// singular case (the ZOH series fallback) catch SingularMatrixError.
inline Matrix solve(const Eigen::Ref<const Matrix>& m,
                    const Eigen::Ref<const Matrix>& rhs) {
  if (m.rows() != m.cols()) throw DimensionError("solve: matrix must be square");
  if (rhs.rows() != m.rows())
    throw DimensionError("solve: RHS row count mismatch");
  Eigen::PartialPivLU<Matrix> lu(m);
  const double min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (!(min_pivot >= 1e-12))
    throw SingularMatrixError("solve: pivot below 1e-12, matrix is singular");
  return lu.solve(rhs);
}

/// Numerical rank by row reduction with partial pivoting. Pivots with
/// magnitude <= tol count as zero; tol < 0 requests the default
/// 1e-9 * (largest row norm), which keeps the result invariant under
/// uniform scaling.
inline Index numerical_rank(const Eigen::Ref<const Matrix>& m,
                            double tol = -1.0) {
  if (m.rows() == 0 || m.cols() == 0) return 0;
  const double max_row_norm = m.cwiseAbs().rowwise().maxCoeff().maxCoeff();
  if (max_row_norm == 0.0) return 0;
  if (tol < 0.0) tol = 1e-9 * max_row_norm;

  Matrix w = m;
  Index rank = 0;
  for (Index col = 0; col < w.cols() && rank < w.rows(); ++col) {
    Index pivot_row;
    const double pivot =
        w.col(col).tail(w.rows() - rank).cwiseAbs().maxCoeff(&pivot_row);
    pivot_row += rank;
    if (pivot <= tol) continue;
    w.row(rank).swap(w.row(pivot_row));
    for (Index i = rank + 1; i < w.rows(); ++i) {
      w.row(i) -= (w(i, col) / w(rank, col)) * w.row(rank);
    }
    ++rank;
  }
  return rank;
}

/// Monic polynomial with ascending coefficients: coeffs[i] multiplies s^i
/// and the leading s^degree coefficient is an implicit 1.
struct Polynomial {
  std::vector<double> coeffs;

  Index degree() const { return static_cast<Index>(coeffs.size()); }

  Complex eval(const Complex& x) const {
    Complex acc(1.0, 0.0);  // implicit leading coefficient
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it)
      acc = acc * x + *it;
    return acc;
  }

  // Sum of |c_i| |x|^i including the leading term: the scale against which
  // a Horner evaluation of p at x is exact to machine precision.
  double eval_magnitude(const Complex& x) const {
    const double ax = std::abs(x);
    double acc = 1.0;
    for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it)
      acc = acc * ax + std::abs(*it);
    return acc;
  }
};

/// All roots of the monic polynomial via Durand-Kerner iteration
/// (simultaneous updates, at most 500 sweeps, converged when the largest
/// update falls below 1e-12). Roots come back sorted by (real, imag).
inline std::vector<Complex> poly_roots(const Polynomial& p) {
  const Index n = p.degree();
  if (n < 1) throw DimensionError("poly_roots: degree must be >= 1");
  for (double c : p.coeffs)
    if (!std::isfinite(c)) throw DomainError("poly_roots: non-finite coefficient");

  // Initial guesses on a spiral scaled to the Cauchy root bound, so the
  // points straddle the root magnitudes and avoid symmetry axes.
  double bound = 0.0;
  for (double c : p.coeffs) bound = std::max(bound, std::abs(c));
  bound = std::min(1.0 + bound, 1e8);
  std::vector<Complex> z(n);
  const Complex seed(0.4, 0.9);
  Complex acc(1.0, 0.0);
  for (Index k = 0; k < n; ++k) {
    acc *= seed;
    z[k] = bound * acc;
  }

  const int max_iters = 500;
  bool converged = false;
  for (int iter = 0; iter < max_iters && !converged; ++iter) {
    double max_update = 0.0;
    for (Index k = 0; k < n; ++k) {
      Complex denom(1.0, 0.0);
      for (Index j = 0; j < n; ++j)
        if (j != k) denom *= (z[k] - z[j]);
      const Complex delta = p.eval(z[k]) / denom;
      z[k] -= delta;
      max_update = std::max(max_update, std::abs(delta));
    }
    converged = max_update < 1e-12;
  }
  if (!converged) {
    // Clustered roots jitter at the attainable-accuracy floor and never
    // meet the update criterion. If every iterate already evaluates to
    // the Horner rounding floor it is a backward-stable root; accept it.
    const double eps = std::numeric_limits<double>::epsilon();
    bool at_floor = true;
    for (Index k = 0; k < n; ++k)
      if (std::abs(p.eval(z[k])) >
          8.0 * double(n) * eps * p.eval_magnitude(z[k]))
        at_floor = false;
    if (!at_floor)
      throw NumericalFailureError("poly_roots: Durand-Kerner did not converge",
                                  z);
  }

  std::sort(z.begin(), z.end(), [](const Complex& a, const Complex& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });
  return z;
}

}  // namespace smamba
