// Reverse-mode gradient engine: a dynamic tape over a closed set of
// primitives (matmul, elementwise activations, gather, the fused scan
// steps). Every primitive carries a hand-written backward; backward()
// walks the nodes once in reverse creation order, which is a reverse
// topological order by construction.
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "smamba/errors.hpp"
#include "smamba/numerics.hpp"

namespace smamba::ad {

using smamba::Index;
using smamba::Matrix;
using smamba::Vector;

enum class CanonicalKind { Ccf, Ocf };

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Matrix value);
  const Matrix& value(Var v) const;

  /// Gradient of the last backward() loss w.r.t. v; zero-shaped if the
  /// loss does not depend on v.
  Matrix grad(Var v) const;

  // --- primitives ---------------------------------------------------
  Var matmul(Var a, Var b);             // A B
  Var matmul_transposed(Var a, Var b);  // A B^T
  Var add(Var a, Var b);
  Var scale(Var a, double s);
  Var hadamard(Var a, Var b);
  Var add_row_broadcast(Var x, Var bias);  // bias is 1 x C
  Var mul_row_broadcast(Var x, Var s);     // s is 1 x C
  Var softplus(Var x);
  Var silu(Var x);
  Var slice_cols(Var x, Index first, Index count);
  Var rmsnorm(Var x, Var gain);  // row-wise; gain is 1 x C
  Var embedding(Var table, std::vector<int> rows);
  Var group_mean_cols(Var x, Index group_size);
  Var causal_conv1d(Var x, Var kernel, Index batch, Index len);
  Var cross_entropy(Var logits, std::vector<int> targets);
  Var sum(Var x);

  /// Selective scan with per-channel diagonal dynamics. a_param is
  /// (channels x n) pre-negation magnitudes; delta (rows x channels) is
  /// the positive step size; bsel/csel (rows x n) are the per-timestep
  /// input/output couplings; u (rows x channels) the input lanes.
  /// stable_clamp applies the -1e-5 stability clamp to the realized
  /// diagonal each forward pass (zero gradient through clamped entries).
  Var scan_diag(Var a_param, Var delta, Var bsel, Var csel, Var u,
                Index batch, Index len, bool stable_clamp, bool euler_b);

  /// Selective scan with canonical-form dynamics shared per channel
  /// group. a_coef/b_coef are (groups x n); delta_g (rows x groups) is
  /// the per-group step; u (rows x channels) with channels divisible by
  /// groups. ZOH discretization happens inside, per (row, group), and the
  /// backward pass carries gradients through it into delta and the
  /// coefficients.
  Var scan_canonical(Var a_coef, Var b_coef, Var delta_g, Var u, Index batch,
                     Index len, CanonicalKind kind, bool euler_b);

  /// Reverse sweep from a 1x1 loss node. A tape runs backward once;
  /// reuse raises StateError.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return used_; }

  // Test hook: corrupt one node's backward so fault injection can prove
  // the checker notices. Returns false if the tape is empty.
  bool corrupt_last_backward();

 private:
  friend struct NodeBuilder;
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    std::function<void(Tape&)> backprop;
  };
  std::vector<Node> nodes_;
  bool used_ = false;

  const Node& node(Var v) const;
  Var push(Matrix value, std::function<void(Tape&)> backprop);
  void accumulate(Var v, const Matrix& g);
  void check_open() const;
};

/// Adjoint of Y = exp(X): given dL/dY, returns dL/dX. Computed as the
/// Frechet derivative of exp at X^T applied to the upstream gradient,
/// via a scaled coupled Taylor recurrence and repeated doubling.
Matrix expm_frechet_adjoint(const Matrix& x, const Matrix& gbar);

}  // namespace smamba::ad
