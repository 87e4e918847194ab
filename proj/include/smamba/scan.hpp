// The three compute views of a discrete SSM: per-step recurrence, the
// full-sequence scan (time-invariant and time-varying), and the
// convolution-kernel view. Multi-channel batches apply one SISO system
// independently per (batch, channel) lane.
#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "smamba/discretize.hpp"
#include "smamba/errors.hpp"
#include "smamba/numerics.hpp"

namespace smamba {

/// (batch, time, channel) tensor of 64-bit reals; row (b*length + t) of
/// `data` holds the channel vector at time t of batch item b.
struct SequenceBatch {
  Index batch = 0;
  Index length = 0;
  Index channels = 0;
  Matrix data;  // (batch*length) x channels

  SequenceBatch() = default;
  SequenceBatch(Index b, Index l, Index c)
      : batch(b), length(l), channels(c), data(Matrix::Zero(b * l, c)) {}

  double& at(Index b, Index t, Index c) { return data(b * length + t, c); }
  double at(Index b, Index t, Index c) const { return data(b * length + t, c); }
  Index row(Index b, Index t) const { return b * length + t; }
};

namespace detail {
inline void require_siso(const DiscreteSsm& d, const char* op) {
  if (d.m() != 1 || d.p() != 1)
    throw DimensionError(std::string(op) + ": SISO system required");
}
}  // namespace detail

/// One recurrence step: h' = Abar h + Bbar u, y = C h' + D u.
inline std::pair<Vector, Vector> step(const DiscreteSsm& d, const Vector& h,
                                      const Vector& u) {
  if (h.size() != d.n()) throw DimensionError("step: state size mismatch");
  if (u.size() != d.m()) throw DimensionError("step: input size mismatch");
  Vector h_next = d.Abar * h + d.Bbar * u;
  Vector y = d.C * h_next + d.D * u;
  return {std::move(h_next), std::move(y)};
}

/// SISO convenience overload used by the per-lane scans.
inline std::pair<Vector, double> step(const DiscreteSsm& d, const Vector& h,
                                      double u) {
  detail::require_siso(d, "step");
  Vector u1(1);
  u1[0] = u;
  auto [h_next, y] = step(d, h, u1);
  return {std::move(h_next), y[0]};
}

/// Sequential fold of step over time from zero initial state, one
/// independent lane per (batch, channel).
inline SequenceBatch scan_lti(const DiscreteSsm& d, const SequenceBatch& u) {
  detail::require_siso(d, "scan_lti");
  if (u.data.rows() != u.batch * u.length)
    throw DimensionError("scan_lti: batch shape mismatch");
  SequenceBatch y(u.batch, u.length, u.channels);
  const Index n = d.n();
  for (Index b = 0; b < u.batch; ++b) {
    for (Index c = 0; c < u.channels; ++c) {
      Vector h = Vector::Zero(n);
      for (Index t = 0; t < u.length; ++t) {
        const double ut = u.at(b, t, c);
        h = d.Abar * h + d.Bbar.col(0) * ut;
        y.at(b, t, c) = d.C.row(0).dot(h) + d.D(0, 0) * ut;
      }
    }
  }
  return y;
}

/// Impulse-response taps K[i] = C Abar^i Bbar (each p x m), computed by
/// iterated multiplication.
struct Kernel {
  std::vector<Matrix> taps;
  Index length() const { return static_cast<Index>(taps.size()); }
};

inline Kernel kernel(const DiscreteSsm& d, Index len) {
  if (len < 1) throw DimensionError("kernel: length must be >= 1");
  Kernel k;
  k.taps.reserve(len);
  Matrix v = d.Bbar;  // Abar^i Bbar
  for (Index i = 0; i < len; ++i) {
    k.taps.push_back(d.C * v);
    if (i + 1 < len) v = d.Abar * v;
  }
  return k;
}

/// Causal (non-circular) convolution y_t = sum_{i<=t} K[i] u_{t-i} + D u_t,
/// per (batch, channel) lane; kernel length must equal sequence length.
inline SequenceBatch conv_apply(const Kernel& k, const SequenceBatch& u,
                                double d_skip) {
  if (k.length() != u.length)
    throw DimensionError("conv_apply: kernel/sequence length mismatch");
  for (const auto& tap : k.taps)
    if (tap.rows() != 1 || tap.cols() != 1)
      throw DimensionError("conv_apply: SISO kernel required");
  SequenceBatch y(u.batch, u.length, u.channels);
  for (Index b = 0; b < u.batch; ++b) {
    for (Index c = 0; c < u.channels; ++c) {
      for (Index t = 0; t < u.length; ++t) {
        double acc = d_skip * u.at(b, t, c);
        for (Index i = 0; i <= t; ++i)
          acc += k.taps[i](0, 0) * u.at(b, t - i, c);
        y.at(b, t, c) = acc;
      }
    }
  }
  return y;
}

/// Time-varying scan: h_t = Abar_t h_{t-1} + Bbar_t u_t, y_t = C_t h_t
/// + D u_t. Parameter sequences are shared across (batch, channel) lanes;
/// each lane keeps its own state.
inline SequenceBatch scan_selective(const std::vector<Matrix>& abar,
                                    const std::vector<Matrix>& bbar,
                                    const std::vector<Matrix>& cs, double d_skip,
                                    const SequenceBatch& u) {
  const auto len = static_cast<std::size_t>(u.length);
  if (abar.size() != len || bbar.size() != len || cs.size() != len)
    throw DimensionError("scan_selective: parameter sequence length mismatch");
  const Index n = abar.empty() ? 0 : abar[0].rows();
  for (std::size_t t = 0; t < len; ++t) {
    if (abar[t].rows() != n || abar[t].cols() != n)
      throw DimensionError("scan_selective: Abar_t must be n x n");
    if (bbar[t].rows() != n || bbar[t].cols() != 1)
      throw DimensionError("scan_selective: Bbar_t must be n x 1");
    if (cs[t].rows() != 1 || cs[t].cols() != n)
      throw DimensionError("scan_selective: C_t must be 1 x n");
  }
  SequenceBatch y(u.batch, u.length, u.channels);
  for (Index b = 0; b < u.batch; ++b) {
    for (Index c = 0; c < u.channels; ++c) {
      Vector h = Vector::Zero(n);
      for (Index t = 0; t < u.length; ++t) {
        const double ut = u.at(b, t, c);
        h = abar[t] * h + bbar[t].col(0) * ut;
        y.at(b, t, c) = cs[t].row(0).dot(h) + d_skip * ut;
      }
    }
  }
  return y;
}

}  // namespace smamba
