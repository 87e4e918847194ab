#include "smamba/tape.hpp"

#include <cmath>
#include <memory>

namespace smamba::ad {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_val(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

}  // namespace

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size())
    throw StateError("tape: invalid variable handle");
  return nodes_[v.id];
}

void Tape::check_open() const {
  if (used_) throw StateError("tape: already consumed by backward()");
}

Var Tape::push(Matrix value, std::function<void(Tape&)> backprop) {
  check_open();
  if (!value.allFinite()) throw DomainError("tape: non-finite value produced");
  nodes_.push_back(
      Node{std::move(value), Matrix(), false, std::move(backprop)});
  return Var{nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  n.grad += g;
}

Var Tape::leaf(Matrix value) { return push(std::move(value), nullptr); }

const Matrix& Tape::value(Var v) const { return node(v).value; }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!used_) throw StateError("tape: grad() requires backward() first");
  if (!n.has_grad) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (used_) throw StateError("tape: backward() may run only once per tape");
  const Node& ln = node(loss);
  if (ln.value.rows() != 1 || ln.value.cols() != 1)
    throw DimensionError("tape: backward() needs a 1x1 loss node");
  used_ = true;
  accumulate(loss, Matrix::Ones(1, 1));
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backprop) n.backprop(*this);
  }
}

bool Tape::corrupt_last_backward() {
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!nodes_[i].backprop) continue;
    auto original = std::move(nodes_[i].backprop);
    nodes_[i].backprop = [original = std::move(original), i](Tape& t) {
      t.nodes_[i].grad.array() += 0.5;  // deliberate corruption
      original(t);
    };
    return true;
  }
  return false;
}

// --- linear algebra --------------------------------------------------

Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows())
    throw DimensionError("matmul: inner dims differ");
  const Matrix v = value(a) * value(b);
  const Var out{nodes_.size()};
  return push(v, [a, b, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    t.accumulate(a, g * t.nodes_[b.id].value.transpose());
    t.accumulate(b, t.nodes_[a.id].value.transpose() * g);
  });
}

Var Tape::matmul_transposed(Var a, Var b) {
  if (value(a).cols() != value(b).cols())
    throw DimensionError("matmul_transposed: inner dims differ");
  const Matrix v = value(a) * value(b).transpose();
  const Var out{nodes_.size()};
  return push(v, [a, b, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    t.accumulate(a, g * t.nodes_[b.id].value);
    t.accumulate(b, g.transpose() * t.nodes_[a.id].value);
  });
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() ||
      value(a).cols() != value(b).cols())
    throw DimensionError("add: shape mismatch");
  const Matrix v = value(a) + value(b);
  const Var out{nodes_.size()};
  return push(v, [a, b, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var Tape::scale(Var a, double s) {
  const Matrix v = s * value(a);
  const Var out{nodes_.size()};
  return push(v, [a, s, out](Tape& t) {
    t.accumulate(a, s * t.nodes_[out.id].grad);
  });
}

Var Tape::hadamard(Var a, Var b) {
  if (value(a).rows() != value(b).rows() ||
      value(a).cols() != value(b).cols())
    throw DimensionError("hadamard: shape mismatch");
  const Matrix v = value(a).cwiseProduct(value(b));
  const Var out{nodes_.size()};
  return push(v, [a, b, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    t.accumulate(a, g.cwiseProduct(t.nodes_[b.id].value));
    t.accumulate(b, g.cwiseProduct(t.nodes_[a.id].value));
  });
}

Var Tape::add_row_broadcast(Var x, Var bias) {
  if (value(bias).rows() != 1 || value(bias).cols() != value(x).cols())
    throw DimensionError("add_row_broadcast: bias must be 1 x cols(x)");
  Matrix v = value(x);
  v.rowwise() += value(bias).row(0);
  const Var out{nodes_.size()};
  return push(std::move(v), [x, bias, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    t.accumulate(x, g);
    t.accumulate(bias, g.colwise().sum());
  });
}

Var Tape::mul_row_broadcast(Var x, Var s) {
  if (value(s).rows() != 1 || value(s).cols() != value(x).cols())
    throw DimensionError("mul_row_broadcast: scale must be 1 x cols(x)");
  Matrix v = value(x);
  v.array().rowwise() *= value(s).row(0).array();
  const Var out{nodes_.size()};
  return push(std::move(v), [x, s, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    Matrix gx = g;
    gx.array().rowwise() *= t.nodes_[s.id].value.row(0).array();
    t.accumulate(x, gx);
    t.accumulate(s, g.cwiseProduct(t.nodes_[x.id].value).colwise().sum());
  });
}

// --- elementwise activations -----------------------------------------

Var Tape::softplus(Var x) {
  Matrix v = value(x).unaryExpr([](double a) { return softplus_val(a); });
  const Var out{nodes_.size()};
  return push(std::move(v), [x, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    const Matrix sig =
        t.nodes_[x.id].value.unaryExpr([](double a) { return sigmoid(a); });
    t.accumulate(x, g.cwiseProduct(sig));
  });
}

Var Tape::silu(Var x) {
  Matrix v = value(x).unaryExpr([](double a) { return a * sigmoid(a); });
  const Var out{nodes_.size()};
  return push(std::move(v), [x, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    const Matrix d = t.nodes_[x.id].value.unaryExpr([](double a) {
      const double s = sigmoid(a);
      return s * (1.0 + a * (1.0 - s));
    });
    t.accumulate(x, g.cwiseProduct(d));
  });
}

Var Tape::slice_cols(Var x, Index first, Index count) {
  if (first < 0 || count < 1 || first + count > value(x).cols())
    throw DimensionError("slice_cols: range out of bounds");
  const Matrix v = value(x).middleCols(first, count);
  const Var out{nodes_.size()};
  return push(v, [x, first, count, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    Matrix gx = Matrix::Zero(t.nodes_[x.id].value.rows(),
                             t.nodes_[x.id].value.cols());
    gx.middleCols(first, count) = g;
    t.accumulate(x, gx);
  });
}

Var Tape::rmsnorm(Var x, Var gain) {
  const Matrix& xv = value(x);
  if (value(gain).rows() != 1 || value(gain).cols() != xv.cols())
    throw DimensionError("rmsnorm: gain must be 1 x cols(x)");
  const double eps = 1e-6;
  const Index cols = xv.cols();
  auto inv_rms = std::make_shared<Vector>(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r)
    (*inv_rms)[r] =
        1.0 / std::sqrt(xv.row(r).squaredNorm() / double(cols) + eps);
  Matrix v = xv;
  v.array().colwise() *= inv_rms->array();
  v.array().rowwise() *= value(gain).row(0).array();
  const Var out{nodes_.size()};
  return push(std::move(v), [x, gain, inv_rms, cols, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    const Matrix& xv2 = t.nodes_[x.id].value;
    const auto gr = t.nodes_[gain.id].value.row(0);
    Matrix gx(xv2.rows(), xv2.cols());
    Matrix ggain = Matrix::Zero(1, xv2.cols());
    for (Index r = 0; r < xv2.rows(); ++r) {
      const double ir = (*inv_rms)[r];
      const auto xr = xv2.row(r);
      const auto grow = g.row(r);
      // y_k = x_k g_k ir; d(ir)/dx_j = -x_j ir^3 / cols
      const double dot = (grow.array() * gr.array() * xr.array()).sum();
      gx.row(r) = (grow.array() * gr.array() * ir -
                   xr.array() * (dot * ir * ir * ir / double(cols)))
                      .matrix();
      ggain.row(0).array() += grow.array() * xr.array() * ir;
    }
    t.accumulate(x, gx);
    t.accumulate(gain, ggain);
  });
}

Var Tape::embedding(Var table, std::vector<int> rows) {
  const Matrix& tv = value(table);
  Matrix v(static_cast<Index>(rows.size()), tv.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= tv.rows())
      throw InputError("embedding: row index out of range");
    v.row(static_cast<Index>(r)) = tv.row(rows[r]);
  }
  const Var out{nodes_.size()};
  return push(std::move(v), [table, rows = std::move(rows), out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    Matrix gt = Matrix::Zero(t.nodes_[table.id].value.rows(),
                             t.nodes_[table.id].value.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      gt.row(rows[r]) += g.row(static_cast<Index>(r));
    t.accumulate(table, gt);
  });
}

Var Tape::group_mean_cols(Var x, Index group_size) {
  const Matrix& xv = value(x);
  if (group_size < 1 || xv.cols() % group_size != 0)
    throw DimensionError("group_mean_cols: cols not divisible by group size");
  const Index groups = xv.cols() / group_size;
  Matrix v = Matrix::Zero(xv.rows(), groups);
  for (Index gidx = 0; gidx < groups; ++gidx)
    v.col(gidx) =
        xv.middleCols(gidx * group_size, group_size).rowwise().mean();
  const Var out{nodes_.size()};
  return push(std::move(v), [x, group_size, groups, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    Matrix gx(t.nodes_[x.id].value.rows(), t.nodes_[x.id].value.cols());
    for (Index gidx = 0; gidx < groups; ++gidx)
      gx.middleCols(gidx * group_size, group_size) =
          (g.col(gidx) / double(group_size)).replicate(1, group_size);
    t.accumulate(x, gx);
  });
}

Var Tape::causal_conv1d(Var x, Var kernel, Index batch, Index len) {
  const Matrix& xv = value(x);
  const Matrix& kv = value(kernel);
  if (xv.rows() != batch * len)
    throw DimensionError("causal_conv1d: rows != batch*len");
  if (kv.cols() != xv.cols())
    throw DimensionError("causal_conv1d: kernel cols mismatch");
  const Index width = kv.rows();
  Matrix v = Matrix::Zero(xv.rows(), xv.cols());
  for (Index b = 0; b < batch; ++b)
    for (Index t = 0; t < len; ++t) {
      const Index r = b * len + t;
      for (Index j = 0; j < width; ++j) {
        const Index tau = t - (width - 1) + j;
        if (tau < 0) continue;
        v.row(r).array() +=
            kv.row(j).array() * xv.row(b * len + tau).array();
      }
    }
  const Var out{nodes_.size()};
  return push(std::move(v), [x, kernel, batch, len, width, out](Tape& t) {
    const Matrix& g = t.nodes_[out.id].grad;
    const Matrix& xv2 = t.nodes_[x.id].value;
    const Matrix& kv2 = t.nodes_[kernel.id].value;
    Matrix gx = Matrix::Zero(xv2.rows(), xv2.cols());
    Matrix gk = Matrix::Zero(kv2.rows(), kv2.cols());
    for (Index b = 0; b < batch; ++b)
      for (Index tt = 0; tt < len; ++tt) {
        const Index r = b * len + tt;
        for (Index j = 0; j < width; ++j) {
          const Index tau = tt - (width - 1) + j;
          if (tau < 0) continue;
          gx.row(b * len + tau).array() +=
              kv2.row(j).array() * g.row(r).array();
          gk.row(j).array() +=
              xv2.row(b * len + tau).array() * g.row(r).array();
        }
      }
    t.accumulate(x, gx);
    t.accumulate(kernel, gk);
  });
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets) {
  const Matrix& lv = value(logits);
  if (static_cast<Index>(targets.size()) != lv.rows())
    throw DimensionError("cross_entropy: one target per row required");
  const Index rows = lv.rows();
  const Index cols = lv.cols();
  auto probs = std::make_shared<Matrix>(rows, cols);
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    if (targets[r] < 0 || targets[r] >= cols)
      throw InputError("cross_entropy: target out of range");
    const double mx = lv.row(r).maxCoeff();
    const Vector ex = (lv.row(r).array() - mx).exp();
    const double z = ex.sum();
    probs->row(r) = (ex / z).transpose();
    total += mx + std::log(z) - lv(r, targets[r]);
  }
  Matrix v(1, 1);
  v(0, 0) = total / double(rows);
  const Var out{nodes_.size()};
  return push(std::move(v),
              [logits, targets = std::move(targets), probs, rows, out](Tape& t) {
                const double g = t.nodes_[out.id].grad(0, 0);
                Matrix gl = *probs;
                for (Index r = 0; r < rows; ++r) gl(r, targets[r]) -= 1.0;
                gl *= g / double(rows);
                t.accumulate(logits, gl);
              });
}

Var Tape::sum(Var x) {
  Matrix v(1, 1);
  v(0, 0) = value(x).sum();
  const Var out{nodes_.size()};
  return push(std::move(v), [x, out](Tape& t) {
    const double g = t.nodes_[out.id].grad(0, 0);
    t.accumulate(x, Matrix::Constant(t.nodes_[x.id].value.rows(),
                                     t.nodes_[x.id].value.cols(), g));
  });
}

}  // namespace smamba::ad
