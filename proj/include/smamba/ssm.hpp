// State-space parameterizations and their control-theoretic verification:
// HiPPO initialization, controllable/observable canonical realizations,
// reachability/observability matrices, similarity-transform conversion,
// and the diagonal stability clamp.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <variant>

#include "smamba/errors.hpp"
#include "smamba/numerics.hpp"

namespace smamba {

/// Continuous-time system x' = Ax + Bu, y = Cx + Du with n states,
/// m inputs, p outputs.
struct StateSpace {
  Matrix A;  // n x n
  Matrix B;  // n x m
  Matrix C;  // p x n
  Matrix D;  // p x m

  StateSpace() = default;
  StateSpace(Matrix a, Matrix b, Matrix c, Matrix d)
      : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)) {
    if (A.rows() != A.cols()) throw DimensionError("StateSpace: A not square");
    if (B.rows() != A.rows()) throw DimensionError("StateSpace: B row mismatch");
    if (C.cols() != A.rows()) throw DimensionError("StateSpace: C col mismatch");
    if (D.rows() != C.rows() || D.cols() != B.cols())
      throw DimensionError("StateSpace: D shape mismatch");
    if (!all_finite(A) || !all_finite(B) || !all_finite(C) || !all_finite(D))
      throw DomainError("StateSpace: non-finite entries");
  }

  Index n() const { return A.rows(); }
  Index m() const { return B.cols(); }
  Index p() const { return C.rows(); }
};

/// Controllable-canonical parameters: denominator coefficients a
/// (ascending, a[i] multiplies s^i), numerator coefficients b, and the
/// learnable feed-through d (starts at 0).
struct CcfParam {
  Vector a;
  Vector b;
  double d = 0.0;
};

/// Observable-canonical parameters; the realization is the transpose dual
/// of the CCF realization with the same coefficients.
struct OcfParam {
  Vector a;
  Vector b;
  double d = 0.0;
};

/// Diagonal parameters, stored pre-negation: realized A = -diag(a).
struct DiagParam {
  Vector a;
};

struct DiagStableParam {
  Vector a;
};

struct DenseHippoParam {
  Matrix A;
};

/// One SSM head's trainable core. The tag decides the realization and the
/// free-parameter count of the A part (Ccf/Ocf/Diag: n, DenseHippo: n^2).
using SsmParam =
    std::variant<DenseHippoParam, CcfParam, OcfParam, DiagParam, DiagStableParam>;

inline Index free_param_count(const SsmParam& p) {
  return std::visit(
      [](const auto& v) -> Index {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DenseHippoParam>)
          return v.A.rows() * v.A.cols();
        else if constexpr (std::is_same_v<T, CcfParam> ||
                           std::is_same_v<T, OcfParam>)
          return v.a.size();
        else
          return v.a.size();
      },
      p);
}

/// The HiPPO state matrix: lower-triangular with
///   A[r][c] = -sqrt((2r+1)(2c+1))  for r > c,
///   A[r][r] = -(r+1),
/// zeros above the diagonal (0-based indices).
inline Matrix hippo_init(Index n) {
  if (n < 1) throw DimensionError("hippo_init: n must be >= 1");
  Matrix a = Matrix::Zero(n, n);
  for (Index r = 0; r < n; ++r) {
    for (Index c = 0; c < r; ++c)
      a(r, c) = -std::sqrt(double(2 * r + 1) * double(2 * c + 1));
    a(r, r) = -double(r + 1);
  }
  return a;
}

/// Companion-form realization. A carries ones on the first superdiagonal
/// and [-a_0, -a_1, ..., -a_{n-1}] in its last row, so char_poly(A)
/// returns exactly the stored coefficients; B = e_n, C = b^T, D = [d].
inline StateSpace realize_ccf(const CcfParam& p) {
  const Index n = p.a.size();
  if (n < 1) throw DimensionError("realize_ccf: empty coefficient vector");
  if (p.b.size() != n)
    throw DimensionError("realize_ccf: a and b must have equal length");
  Matrix a = Matrix::Zero(n, n);
  for (Index i = 0; i + 1 < n; ++i) a(i, i + 1) = 1.0;
  for (Index i = 0; i < n; ++i) a(n - 1, i) = -p.a[i];
  Matrix b = Matrix::Zero(n, 1);
  b(n - 1, 0) = 1.0;
  Matrix c = p.b.transpose();
  Matrix d(1, 1);
  d(0, 0) = p.d;
  return StateSpace(std::move(a), std::move(b), std::move(c), std::move(d));
}

/// Transpose dual of realize_ccf: A -> A^T, and B/C swap-transposed. Built
/// literally from the CCF realization so the duality is bit-exact.
inline StateSpace realize_ocf(const OcfParam& p) {
  const StateSpace ccf = realize_ccf(CcfParam{p.a, p.b, p.d});
  return StateSpace(ccf.A.transpose(), ccf.C.transpose(), ccf.B.transpose(),
                    ccf.D);
}

/// Reachability matrix R = [B, AB, A^2 B, ..., A^{n-1} B], n x (n*m).
inline Matrix reachability_matrix(const StateSpace& s) {
  const Index n = s.n();
  const Index m = s.m();
  Matrix r(n, n * m);
  Matrix block = s.B;
  for (Index k = 0; k < n; ++k) {
    r.middleCols(k * m, m) = block;
    if (k + 1 < n) block = s.A * block;
  }
  return r;
}

/// Observability matrix O = [C; CA; CA^2; ...; CA^{n-1}], (n*p) x n.
inline Matrix observability_matrix(const StateSpace& s) {
  const Index n = s.n();
  const Index p = s.p();
  Matrix o(n * p, n);
  Matrix block = s.C;
  for (Index k = 0; k < n; ++k) {
    o.middleRows(k * p, p) = block;
    if (k + 1 < n) block = block * s.A;
  }
  return o;
}

/// Monic characteristic polynomial det(sI - A) by the Faddeev-LeVerrier
/// recurrence; coefficients ascending, leading 1 implicit.
inline Polynomial char_poly(const Eigen::Ref<const Matrix>& a) {
  if (a.rows() != a.cols())
    throw DimensionError("char_poly: matrix must be square");
  const Index n = a.rows();
  Polynomial p;
  p.coeffs.assign(n, 0.0);
  Matrix m = Matrix::Zero(n, n);
  double c = 1.0;  // coefficient of s^n
  for (Index k = 1; k <= n; ++k) {
    m = a * m + c * Matrix::Identity(n, n);
    c = -(a * m).trace() / double(k);
    p.coeffs[n - k] = c;
  }
  return p;
}

/// Converts a controllable single-input system to its CCF coefficients by
/// the similarity transform built from the two reachability matrices.
inline CcfParam to_ccf(const StateSpace& s, double rank_tol = -1.0) {
  if (s.m() != 1)
    throw UnsupportedError("to_ccf: only single-input systems supported");
  const Index n = s.n();
  const Matrix r = reachability_matrix(s);
  if (numerical_rank(r, rank_tol) != n)
    throw NotControllableError("to_ccf: reachability matrix rank-deficient");

  CcfParam out;
  const Polynomial cp = char_poly(s.A);
  out.a = Eigen::Map<const Vector>(cp.coeffs.data(), n);
  out.d = s.D(0, 0);

  // C_new = C R Rc^{-1}, where Rc is the reachability matrix of the
  // target CCF realization with the recovered denominator.
  const StateSpace ccf = realize_ccf(CcfParam{out.a, Vector::Zero(n), 0.0});
  const Matrix rc = reachability_matrix(ccf);
  const Matrix cr = s.C * r;  // 1 x n
  const Matrix c_new = solve(rc.transpose(), cr.transpose()).transpose();
  out.b = c_new.row(0).transpose();
  return out;
}

/// Stability clamp on the realized diagonal entries alpha = -a: entries
/// with alpha < 0 stay, entries with alpha >= 0 become -1e-5. Pure
/// function; returns the clamped parameter.
inline DiagParam stabilize_diag(const DiagParam& p) {
  DiagParam out = p;
  for (Index i = 0; i < out.a.size(); ++i) {
    const double alpha = -out.a[i];
    if (alpha >= 0.0) out.a[i] = 1e-5;
  }
  return out;
}

/// True iff every eigenvalue of A has strictly negative real part
/// (real part <= -1e-12 counts as negative). Triangular matrices (the
/// clamped-diagonal case included) read their eigenvalues off the
/// diagonal exactly; dense ones go through char_poly and poly_roots.
inline bool is_hurwitz(const Eigen::Ref<const Matrix>& a) {
  if (a.rows() != a.cols())
    throw DimensionError("is_hurwitz: matrix must be square");
  const Index n = a.rows();
  if (n == 0) return true;

  bool upper = true, lower = true;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (i > j && a(i, j) != 0.0) upper = false;
      if (i < j && a(i, j) != 0.0) lower = false;
    }
  if (upper || lower) {
    for (Index i = 0; i < n; ++i)
      if (a(i, i) > -1e-12) return false;
    return true;
  }

  for (const auto& z : poly_roots(char_poly(a)))
    if (z.real() > -1e-12) return false;
  return true;
}

}  // namespace smamba
