// Zero-order-hold discretization: Abar = exp(delta*A) and
// Bbar = (delta*A)^{-1} (exp(delta*A) - I) delta*B, with a series fallback
// that keeps the operation total when delta*A is singular, plus the
// elementwise fast path for diagonal A.
#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "smamba/errors.hpp"
#include "smamba/numerics.hpp"
#include "smamba/ssm.hpp"

namespace smamba {

/// Discrete system (Abar, Bbar, C, D) produced by ZOH at step size delta.
struct DiscreteSsm {
  Matrix Abar;
  Matrix Bbar;
  Matrix C;
  Matrix D;
  double delta = 0.0;

  Index n() const { return Abar.rows(); }
  Index m() const { return Bbar.cols(); }
  Index p() const { return C.rows(); }
};

/// Diagonal-parameterization result: Abar and the rows of Bbar are scaled
/// elementwise, no dense matrices involved.
struct DiagDiscrete {
  Vector abar;   // exp(delta * a_i)
  Matrix bbar;   // row i = phi(delta * a_i) * b.row(i)
  double delta = 0.0;
};

/// Phi(X) = sum_{k>=0} X^k / (k+1)!  ==  X^{-1} (e^X - I) when X is
/// invertible, but defined for every X. Series on a scaled argument,
/// truncated when a term's magnitude falls below 1e-16 of the running sum,
/// then doubled back via Phi(2X) = Phi(X) (e^X + I) / 2.
inline Matrix zoh_phi(const Eigen::Ref<const Matrix>& x) {
  if (x.rows() != x.cols()) throw DimensionError("zoh_phi: matrix must be square");
  const Index n = x.rows();
  const double norm1 =
      n == 0 ? 0.0 : x.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > 0.5) s = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  const Matrix xs = x / std::pow(2.0, s);

  Matrix phi = Matrix::Identity(n, n);
  Matrix term = Matrix::Identity(n, n);
  for (int k = 1; k < 200; ++k) {
    term = term * xs / double(k + 1);
    phi += term;
    if (term.cwiseAbs().maxCoeff() <= 1e-16 * phi.cwiseAbs().maxCoeff()) break;
  }
  if (s > 0) {
    Matrix e = mat_exp(xs);
    const Matrix id = Matrix::Identity(n, n);
    for (int j = 0; j < s; ++j) {
      phi = phi * (e + id) / 2.0;
      if (j + 1 < s) e = e * e;
    }
  }
  return phi;
}

/// Full ZOH. Uses the pivoted solve when delta*A is invertible and falls
/// back to the Phi series otherwise (the two branches agree analytically).
inline DiscreteSsm zoh(const StateSpace& s, double delta) {
  if (!(delta > 0.0)) throw DomainError("zoh: delta must be > 0");
  const Matrix x = delta * s.A;
  DiscreteSsm d;
  d.Abar = mat_exp(x);
  const Matrix db = delta * s.B;
  try {
    d.Bbar = solve(x, d.Abar - Matrix::Identity(s.n(), s.n())) * db;
  } catch (const SingularMatrixError&) {
    d.Bbar = zoh_phi(x) * db;
  }
  d.C = s.C;
  d.D = s.D;
  d.delta = delta;
  return d;
}

/// Elementwise ZOH for realized-diagonal A: abar_i = exp(delta a_i) and
/// bbar row i = (expm1(delta a_i)/a_i) b_i, with the |a_i| < 1e-8 branch
/// replaced by the two-term series delta (1 + delta a_i / 2).
inline DiagDiscrete zoh_diag(const Eigen::Ref<const Vector>& a,
                             const Eigen::Ref<const Matrix>& b, double delta) {
  if (!(delta > 0.0)) throw DomainError("zoh_diag: delta must be > 0");
  if (b.rows() != a.size())
    throw DimensionError("zoh_diag: b row count must match a");
  DiagDiscrete d;
  d.delta = delta;
  d.abar.resize(a.size());
  d.bbar.resize(b.rows(), b.cols());
  for (Index i = 0; i < a.size(); ++i) {
    const double ai = a[i];
    d.abar[i] = std::exp(delta * ai);
    const double phi = std::abs(ai) < 1e-8
                           ? delta * (1.0 + delta * ai / 2.0)
                           : std::expm1(delta * ai) / ai;
    d.bbar.row(i) = phi * b.row(i);
  }
  return d;
}

}  // namespace smamba
