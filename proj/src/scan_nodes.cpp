// Fused scan primitives. Each node runs the discretization and the
// time recurrence in one pass and owns the full hand-written backward,
// including the adjoint of the ZOH map into delta and the A/B/C
// parameters.
#include <cmath>
#include <memory>

#include "smamba/discretize.hpp"
#include "smamba/tape.hpp"

namespace smamba::ad {

namespace {

using Array2d = Eigen::ArrayXXd;
using Array1d = Eigen::ArrayXd;

// (Abar, Bbar) for one (A, B, delta), same math as zoh().
void zoh_ab(const Matrix& a, const Matrix& b, double delta, Matrix& abar,
            Matrix& bbar) {
  const Matrix x = delta * a;
  abar = mat_exp(x);
  const Matrix db = delta * b;
  try {
    bbar = solve(x, abar - Matrix::Identity(a.rows(), a.rows())) * db;
  } catch (const SingularMatrixError&) {
    bbar = zoh_phi(x) * db;
  }
}

struct CanonicalStructure {
  Matrix a;  // n x n realized state matrix
  Matrix b;  // n x 1
  Matrix c;  // 1 x n
};

CanonicalStructure build_canonical(const Eigen::Ref<const Vector>& a_coef,
                                   const Eigen::Ref<const Vector>& b_coef,
                                   CanonicalKind kind) {
  const Index n = a_coef.size();
  CanonicalStructure s;
  s.a = Matrix::Zero(n, n);
  if (kind == CanonicalKind::Ccf) {
    for (Index i = 0; i + 1 < n; ++i) s.a(i, i + 1) = 1.0;
    for (Index i = 0; i < n; ++i) s.a(n - 1, i) = -a_coef[i];
    s.b = Matrix::Zero(n, 1);
    s.b(n - 1, 0) = 1.0;
    s.c = b_coef.transpose();
  } else {
    for (Index i = 0; i + 1 < n; ++i) s.a(i + 1, i) = 1.0;
    for (Index i = 0; i < n; ++i) s.a(i, n - 1) = -a_coef[i];
    s.b = b_coef;
    s.c = Matrix::Zero(1, n);
    s.c(0, n - 1) = 1.0;
  }
  return s;
}

}  // namespace

Matrix expm_frechet_adjoint(const Matrix& x, const Matrix& gbar) {
  const Index n = x.rows();
  const Matrix xt = x.transpose();
  const double norm1 =
      n == 0 ? 0.0 : xt.cwiseAbs().colwise().sum().maxCoeff();
  int s = 0;
  if (norm1 > 0.5) s = static_cast<int>(std::ceil(std::log2(norm1 / 0.5)));
  const double sc = std::pow(2.0, s);
  const Matrix a = xt / sc;
  const Matrix e = gbar / sc;

  // Coupled Taylor recurrence: T_k = T_{k-1} a / k,
  // F_k = (F_{k-1} a + T_{k-1} e) / k; exp = sum T_k, frechet = sum F_k.
  Matrix t_sum = Matrix::Identity(n, n);
  Matrix f_sum = Matrix::Zero(n, n);
  Matrix t_k = Matrix::Identity(n, n);
  Matrix f_k = Matrix::Zero(n, n);
  for (int k = 1; k <= 20; ++k) {
    f_k = (f_k * a + t_k * e) / double(k);
    t_k = t_k * a / double(k);
    f_sum += f_k;
    t_sum += t_k;
  }
  for (int j = 0; j < s; ++j) {
    f_sum = t_sum * f_sum + f_sum * t_sum;
    t_sum = t_sum * t_sum;
  }
  return f_sum;
}

Var Tape::scan_diag(Var a_param, Var delta, Var bsel, Var csel, Var u,
                    Index batch, Index len, bool stable_clamp, bool euler_b) {
  const Matrix& ap = value(a_param);
  const Matrix& dl = value(delta);
  const Matrix& bs = value(bsel);
  const Matrix& cs = value(csel);
  const Matrix& uv = value(u);
  const Index channels = ap.rows();
  const Index n = ap.cols();
  const Index rows = batch * len;
  if (dl.rows() != rows || uv.rows() != rows || bs.rows() != rows ||
      cs.rows() != rows)
    throw DimensionError("scan_diag: row count mismatch");
  if (dl.cols() != channels || uv.cols() != channels)
    throw DimensionError("scan_diag: channel count mismatch");
  if (bs.cols() != n || cs.cols() != n)
    throw DimensionError("scan_diag: selection width must be n");

  // Realized diagonal, clamped each forward pass for the stable variant.
  auto alpha = std::make_shared<Array2d>(-ap.array());
  auto clamp_mask = std::make_shared<Eigen::ArrayXX<bool>>();
  if (stable_clamp) {
    *clamp_mask = (*alpha >= 0.0);
    *alpha = clamp_mask->select(-1e-5, *alpha);
  }

  const Index dn = channels * n;
  // Stashes are (dn x rows) so one timestep is a contiguous column.
  auto h_all = std::make_shared<Matrix>(dn, rows);
  auto ab_all = std::make_shared<Matrix>(dn, rows);
  auto phi_all = std::make_shared<Matrix>(dn, rows);
  Matrix y(rows, channels);

  Array2d h(channels, n), ab(channels, n), phi(channels, n), x(channels, n),
      bb(channels, n);
  for (Index b = 0; b < batch; ++b) {
    h.setZero();
    for (Index t = 0; t < len; ++t) {
      const Index r = b * len + t;
      const Array1d dlr = dl.row(r).transpose().array();
      x = alpha->colwise() * dlr;
      ab = x.exp();
      if (euler_b) {
        phi.colwise() = dlr;
      } else {
        // phi = expm1(delta a)/a with the small-|a| series branch.
        for (Index c = 0; c < channels; ++c)
          for (Index i = 0; i < n; ++i) {
            const double al = (*alpha)(c, i);
            phi(c, i) = std::abs(al) < 1e-8
                            ? dlr[c] * (1.0 + dlr[c] * al / 2.0)
                            : std::expm1(dlr[c] * al) / al;
          }
      }
      bb = phi.rowwise() * bs.row(r).array();
      h = ab * h + bb.colwise() * uv.row(r).transpose().array();
      y.row(r) = (h.matrix() * cs.row(r).transpose()).transpose();
      h_all->col(r) = Eigen::Map<const Vector>(h.data(), dn);
      ab_all->col(r) = Eigen::Map<const Vector>(ab.data(), dn);
      phi_all->col(r) = Eigen::Map<const Vector>(phi.data(), dn);
    }
  }

  const Var out{nodes_.size()};
  auto backward = [a_param, delta, bsel, csel, u, batch, len, channels, n,
                   stable_clamp, euler_b, alpha, clamp_mask, h_all, ab_all,
                   phi_all, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    const Matrix& dl2 = t.nodes_[delta.id].value;
    const Matrix& bs2 = t.nodes_[bsel.id].value;
    const Matrix& cs2 = t.nodes_[csel.id].value;
    const Matrix& uv2 = t.nodes_[u.id].value;
    const Index dn = channels * n;

    Matrix g_alpha = Matrix::Zero(channels, n);
    Matrix g_delta = Matrix::Zero(dl2.rows(), dl2.cols());
    Matrix g_bsel = Matrix::Zero(bs2.rows(), bs2.cols());
    Matrix g_csel = Matrix::Zero(cs2.rows(), cs2.cols());
    Matrix g_u = Matrix::Zero(uv2.rows(), uv2.cols());

    Array2d dh(channels, n), ab(channels, n), phi(channels, n),
        hprev(channels, n), hcur(channels, n), dab(channels, n),
        dbb(channels, n), dphi(channels, n), bb(channels, n);
    for (Index b = 0; b < batch; ++b) {
      dh.setZero();
      for (Index t2 = len; t2-- > 0;) {
        const Index r = b * len + t2;
        hcur = Eigen::Map<const Matrix>(h_all->col(r).data(), channels, n)
                   .array();
        if (t2 == 0)
          hprev.setZero();
        else
          hprev = Eigen::Map<const Matrix>(h_all->col(r - 1).data(), channels,
                                           n)
                      .array();
        ab = Eigen::Map<const Matrix>(ab_all->col(r).data(), channels, n)
                 .array();
        phi = Eigen::Map<const Matrix>(phi_all->col(r).data(), channels, n)
                  .array();
        const Array1d dlr = dl2.row(r).transpose().array();
        const Array1d ur = uv2.row(r).transpose().array();
        const Array1d gy = g.row(r).transpose().array();
        const Array1d bsr = bs2.row(r).transpose().array();
        const Array1d csr = cs2.row(r).transpose().array();

        // y_r = h_r c_r
        dh += (gy.matrix() * csr.matrix().transpose()).array();
        g_csel.row(r) = (hcur.colwise() * gy).colwise().sum().matrix();

        bb = phi.rowwise() * bsr.transpose();
        dab = dh * hprev;
        dbb = dh.colwise() * ur;
        g_u.row(r) = (dh * bb).rowwise().sum().matrix().transpose();
        g_bsel.row(r) = (dbb * phi).colwise().sum().matrix();
        dphi = dbb.rowwise() * bsr.transpose();

        // ab = exp(delta*alpha): d(delta) gets alpha*ab, d(alpha) gets
        // delta*ab.
        const Array2d dx = dab * ab;
        g_delta.row(r) +=
            (dx * (*alpha)).rowwise().sum().matrix().transpose();
        g_alpha.array() += dx.colwise() * dlr;

        if (euler_b) {
          g_delta.row(r) += dphi.rowwise().sum().matrix().transpose();
        } else {
          // phi partials: d(phi)/d(delta) = exp(delta*alpha) = ab;
          // d(phi)/d(alpha) = (delta*ab - phi)/alpha, series near 0.
          g_delta.row(r) += (dphi * ab).rowwise().sum().matrix().transpose();
          for (Index c = 0; c < channels; ++c)
            for (Index i = 0; i < n; ++i) {
              const double al = (*alpha)(c, i);
              const double dphi_dal =
                  std::abs(al) < 1e-8
                      ? dlr[c] * dlr[c] / 2.0
                      : (dlr[c] * ab(c, i) - phi(c, i)) / al;
              g_alpha(c, i) += dphi(c, i) * dphi_dal;
            }
        }
        dh = dh * ab;
      }
    }

    // alpha = -a; clamped entries are locally constant.
    Matrix g_a = -g_alpha;
    if (stable_clamp) g_a = clamp_mask->select(0.0, g_a.array()).matrix();
    t.accumulate(a_param, g_a);
    t.accumulate(delta, g_delta);
    t.accumulate(bsel, g_bsel);
    t.accumulate(csel, g_csel);
    t.accumulate(u, g_u);
  };
  return push(std::move(y), std::move(backward));
}

Var Tape::scan_canonical(Var a_coef, Var b_coef, Var delta_g, Var u,
                         Index batch, Index len, CanonicalKind kind,
                         bool euler_b) {
  const Matrix& ac = value(a_coef);
  const Matrix& bc = value(b_coef);
  const Matrix& dg = value(delta_g);
  const Matrix& uv = value(u);
  const Index groups = ac.rows();
  const Index n = ac.cols();
  const Index rows = batch * len;
  const Index channels = uv.cols();
  if (bc.rows() != groups || bc.cols() != n)
    throw DimensionError("scan_canonical: coefficient shape mismatch");
  if (dg.rows() != rows || uv.rows() != rows)
    throw DimensionError("scan_canonical: row count mismatch");
  if (dg.cols() != groups)
    throw DimensionError("scan_canonical: delta must have one column per group");
  if (channels % groups != 0)
    throw DimensionError("scan_canonical: channels not divisible by groups");
  const Index share = channels / groups;

  std::vector<CanonicalStructure> structs;
  structs.reserve(groups);
  for (Index gi = 0; gi < groups; ++gi)
    structs.push_back(
        build_canonical(ac.row(gi).transpose(), bc.row(gi).transpose(), kind));

  // Stashes are (dim x rows) so one timestep is a contiguous column.
  auto abar_all = std::make_shared<Matrix>(groups * n * n, rows);
  auto bbar_all = std::make_shared<Matrix>(groups * n, rows);
  auto h_all = std::make_shared<Matrix>(channels * n, rows);
  Matrix y(rows, channels);

  Matrix abar, bbar;
  Matrix h(n, channels);  // column c = state of channel c
  for (Index b = 0; b < batch; ++b) {
    h.setZero();
    for (Index t = 0; t < len; ++t) {
      const Index r = b * len + t;
      for (Index gi = 0; gi < groups; ++gi) {
        const double delta = dg(r, gi);
        if (!(delta > 0.0))
          throw DomainError("scan_canonical: delta must be positive");
        if (euler_b) {
          abar = mat_exp(delta * structs[gi].a);
          bbar = delta * structs[gi].b;
        } else {
          zoh_ab(structs[gi].a, structs[gi].b, delta, abar, bbar);
        }
        Eigen::Map<Matrix>(abar_all->col(r).data() + gi * n * n, n, n) = abar;
        Eigen::Map<Vector>(bbar_all->col(r).data() + gi * n, n) = bbar.col(0);
        auto hg = h.middleCols(gi * share, share);
        hg = (abar * hg).eval();
        hg.noalias() += bbar * uv.row(r).segment(gi * share, share);
        y.row(r).segment(gi * share, share) = structs[gi].c * hg;
      }
      h_all->col(r) = Eigen::Map<const Vector>(h.data(), channels * n);
    }
  }

  const Var out{nodes_.size()};
  auto backward = [a_coef, b_coef, delta_g, u, batch, len, groups, n, share,
                   channels, kind, euler_b, structs, abar_all, bbar_all, h_all,
                   out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    const Matrix& dg2 = t.nodes_[delta_g.id].value;
    const Matrix& uv2 = t.nodes_[u.id].value;

    Matrix g_acoef = Matrix::Zero(groups, n);
    Matrix g_bcoef = Matrix::Zero(groups, n);
    Matrix g_delta = Matrix::Zero(dg2.rows(), dg2.cols());
    Matrix g_u = Matrix::Zero(uv2.rows(), uv2.cols());

    // Dense adjoints of the structured matrices; the coefficient grads
    // are read out of the structural slots afterwards.
    std::vector<Matrix> g_a(groups, Matrix::Zero(n, n));
    std::vector<Matrix> g_b(groups, Matrix::Zero(n, 1));
    std::vector<Matrix> g_c(groups, Matrix::Zero(1, n));

    Matrix dh(n, channels);
    Matrix dabar(n, n), dbbar(n, 1);
    for (Index b = 0; b < batch; ++b) {
      dh.setZero();
      for (Index t2 = len; t2-- > 0;) {
        const Index r = b * len + t2;
        const auto hcur =
            Eigen::Map<const Matrix>(h_all->col(r).data(), n, channels);
        for (Index gi = 0; gi < groups; ++gi) {
          const auto abar = Eigen::Map<const Matrix>(
              abar_all->col(r).data() + gi * n * n, n, n);
          const auto bbar =
              Eigen::Map<const Vector>(bbar_all->col(r).data() + gi * n, n);
          const double delta = dg2(r, gi);
          auto dhg = dh.middleCols(gi * share, share);
          const auto gy = g.row(r).segment(gi * share, share);

          // y = C h
          dhg.noalias() += structs[gi].c.transpose() * gy;
          g_c[gi].noalias() += gy * hcur.middleCols(gi * share, share).transpose();

          // h_t = Abar h_{t-1} + Bbar u_t
          if (t2 == 0) {
            dabar.setZero();
          } else {
            const auto hprev = Eigen::Map<const Matrix>(
                h_all->col(r - 1).data(), n, channels);
            dabar.noalias() =
                dhg * hprev.middleCols(gi * share, share).transpose();
          }
          dbbar.noalias() =
              dhg * uv2.row(r).segment(gi * share, share).transpose();
          g_u.row(r).segment(gi * share, share) = bbar.transpose() * dhg;
          dhg = (abar.transpose() * dhg).eval();

          // ZOH adjoint into (A, B, delta).
          if (euler_b) {
            const Matrix xbar =
                expm_frechet_adjoint(delta * structs[gi].a, dabar);
            g_a[gi] += delta * xbar;
            g_delta(r, gi) += (structs[gi].a.array() * xbar.array()).sum() +
                              structs[gi].b.col(0).dot(dbbar.col(0));
            g_b[gi] += delta * dbbar;
          } else {
            Matrix m = Matrix::Zero(n + 1, n + 1);
            m.topLeftCorner(n, n) = delta * structs[gi].a;
            m.topRightCorner(n, 1) = delta * structs[gi].b;
            Matrix gm = Matrix::Zero(n + 1, n + 1);
            gm.topLeftCorner(n, n) = dabar;
            gm.topRightCorner(n, 1) = dbbar;
            const Matrix mbar = expm_frechet_adjoint(m, gm);
            g_a[gi] += delta * mbar.topLeftCorner(n, n);
            g_b[gi] += delta * mbar.topRightCorner(n, 1);
            g_delta(r, gi) +=
                (structs[gi].a.array() * mbar.topLeftCorner(n, n).array())
                    .sum() +
                structs[gi].b.col(0).dot(mbar.topRightCorner(n, 1).col(0));
          }
        }
      }
    }

    for (Index gi = 0; gi < groups; ++gi) {
      if (kind == CanonicalKind::Ccf) {
        g_acoef.row(gi) = -g_a[gi].row(n - 1);
        g_bcoef.row(gi) = g_c[gi].row(0);
      } else {
        g_acoef.row(gi) = -g_a[gi].col(n - 1).transpose();
        g_bcoef.row(gi) = g_b[gi].col(0).transpose();
      }
    }
    t.accumulate(a_coef, g_acoef);
    t.accumulate(b_coef, g_bcoef);
    t.accumulate(delta_g, g_delta);
    t.accumulate(u, g_u);
  };
  return push(std::move(y), std::move(backward));
}

}  // namespace smamba::ad
