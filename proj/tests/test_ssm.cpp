#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "smamba/discretize.hpp"
#include "smamba/scan.hpp"
#include "smamba/ssm.hpp"

using namespace smamba;

TEST_CASE("hippo_init matches the case formula") {
  Matrix a1 = hippo_init(1);
  CHECK(a1(0, 0) == doctest::Approx(-1.0));

  Matrix a2 = hippo_init(2);
  CHECK(a2(0, 0) == doctest::Approx(-1.0));
  CHECK(a2(0, 1) == doctest::Approx(0.0));
  CHECK(a2(1, 0) == doctest::Approx(-1.7320508).epsilon(1e-7));
  CHECK(a2(1, 1) == doctest::Approx(-2.0));

  Matrix a3 = hippo_init(3);
  CHECK(a3(2, 0) == doctest::Approx(-2.2360680).epsilon(1e-7));
  CHECK(a3(2, 1) == doctest::Approx(-3.8729833).epsilon(1e-7));
  CHECK(a3(2, 2) == doctest::Approx(-3.0));

  CHECK_THROWS_AS(hippo_init(0), DimensionError);
}

TEST_CASE("realize_ccf structure") {
  Vector a(2), b(2);
  a << 2, 3;
  b << 1, 0;
  StateSpace s = realize_ccf(CcfParam{a, b, 0.0});
  CHECK(s.A(0, 0) == 0.0);
  CHECK(s.A(0, 1) == 1.0);
  CHECK(s.A(1, 0) == -2.0);
  CHECK(s.A(1, 1) == -3.0);
  CHECK(s.B(0, 0) == 0.0);
  CHECK(s.B(1, 0) == 1.0);
  CHECK(s.C(0, 0) == 1.0);
  CHECK(s.C(0, 1) == 0.0);
  CHECK(s.D(0, 0) == 0.0);

  // Characteristic polynomial oracle: 2x2 determinant by hand.
  double c0, c1;
  oracle::char_poly_2x2(s.A, c0, c1);
  CHECK(c0 == doctest::Approx(2.0));
  CHECK(c1 == doctest::Approx(3.0));

  // Pure integrator.
  Vector a0(1), b0(1);
  a0 << 0;
  b0 << 1;
  StateSpace integ = realize_ccf(CcfParam{a0, b0, 0.0});
  CHECK(integ.A(0, 0) == 0.0);
  CHECK(integ.B(0, 0) == 1.0);
  CHECK(integ.C(0, 0) == 1.0);

  CHECK_THROWS_AS(realize_ccf(CcfParam{Vector(), Vector(), 0.0}),
                  DimensionError);
}

TEST_CASE("CCF realizations are structurally reachable") {
  Rng rng(101);
  for (Index n : {Index(2), Index(4), Index(8)}) {
    for (int trial = 0; trial < 100; ++trial) {
      CcfParam p{oracle::random_vector(rng, n, -2.0, 2.0),
                 oracle::random_vector(rng, n, -2.0, 2.0), 0.0};
      StateSpace s = realize_ccf(p);
      CHECK(numerical_rank(reachability_matrix(s)) == n);
    }
  }
}

TEST_CASE("realize_ocf is the transpose dual") {
  Vector a(2), b(2);
  a << 2, 3;
  b << 1, 0;
  StateSpace o = realize_ocf(OcfParam{a, b, 0.0});
  CHECK(o.A(0, 0) == 0.0);
  CHECK(o.A(0, 1) == -2.0);
  CHECK(o.A(1, 0) == 1.0);
  CHECK(o.A(1, 1) == -3.0);
  CHECK(o.B(0, 0) == 1.0);
  CHECK(o.B(1, 0) == 0.0);
  CHECK(o.C(0, 0) == 0.0);
  CHECK(o.C(0, 1) == 1.0);

  Vector a1(1), b1(1);
  a1 << 5;
  b1 << 2;
  StateSpace o1 = realize_ocf(OcfParam{a1, b1, 0.0});
  CHECK(o1.A(0, 0) == -5.0);
  CHECK(o1.B(0, 0) == 2.0);
  CHECK(o1.C(0, 0) == 1.0);

  // Bit-exact duality for random draws.
  Rng rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 2 + Index(rng.below(7));
    CcfParam cp{oracle::random_vector(rng, n, -2.0, 2.0),
                oracle::random_vector(rng, n, -2.0, 2.0), rng.uniform()};
    OcfParam op{cp.a, cp.b, cp.d};
    StateSpace c = realize_ccf(cp);
    StateSpace o2 = realize_ocf(op);
    CHECK(o2.A == c.A.transpose());
    CHECK(o2.B == c.C.transpose());
    CHECK(o2.C == c.B.transpose());
    CHECK(o2.D == c.D);
  }
}

TEST_CASE("OCF realizations are structurally observable") {
  Rng rng(202);
  for (Index n : {Index(2), Index(4), Index(8)}) {
    for (int trial = 0; trial < 100; ++trial) {
      OcfParam p{oracle::random_vector(rng, n, -2.0, 2.0),
                 oracle::random_vector(rng, n, -2.0, 2.0), 0.0};
      CHECK(numerical_rank(observability_matrix(realize_ocf(p))) == n);
    }
  }
}

TEST_CASE("reachability and observability matrices") {
  Vector a(2), b(2);
  a << 2, 3;
  b << 1, 0;
  StateSpace s = realize_ccf(CcfParam{a, b, 0.0});
  Matrix r = reachability_matrix(s);
  // Direct multiplication oracle: columns [B, AB].
  Matrix expect(2, 2);
  expect << 0, 1, 1, -3;
  CHECK((r - expect).cwiseAbs().maxCoeff() == 0.0);

  StateSpace zero_a(Matrix::Zero(2, 2), (Matrix(2, 1) << 1, 0).finished(),
                    Matrix::Ones(1, 2), Matrix::Zero(1, 1));
  CHECK(numerical_rank(reachability_matrix(zero_a)) == 1);

  StateSpace eye_a(Matrix::Identity(2, 2), Matrix::Ones(2, 1),
                   Matrix::Ones(1, 2), Matrix::Zero(1, 1));
  CHECK(numerical_rank(reachability_matrix(eye_a)) == 1);  // AB == B

  StateSpace ocf = realize_ocf(OcfParam{a, b, 0.0});
  CHECK(numerical_rank(observability_matrix(ocf)) == 2);

  StateSpace zero_c(Matrix::Identity(2, 2), Matrix::Ones(2, 1),
                    Matrix::Zero(1, 2), Matrix::Zero(1, 1));
  CHECK(numerical_rank(observability_matrix(zero_c)) == 0);

  StateSpace unit_c(Matrix::Identity(2, 2), Matrix::Ones(2, 1),
                    (Matrix(1, 2) << 1, 0).finished(), Matrix::Zero(1, 1));
  CHECK(numerical_rank(observability_matrix(unit_c)) == 1);  // CA == C
}

TEST_CASE("char_poly") {
  Matrix companion(2, 2);
  companion << 0, 1, -2, -3;
  auto p = char_poly(companion);
  REQUIRE(p.coeffs.size() == 2);
  CHECK(p.coeffs[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(p.coeffs[1] == doctest::Approx(3.0).epsilon(1e-12));

  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = -1;
  d(1, 1) = -2;
  auto pd = char_poly(d);
  CHECK(pd.coeffs[0] == doctest::Approx(2.0));
  CHECK(pd.coeffs[1] == doctest::Approx(3.0));

  auto pz = char_poly(Matrix::Zero(3, 3));
  for (double c : pz.coeffs) CHECK(c == 0.0);
}

TEST_CASE("companion matrix encodes its own characteristic polynomial") {
  Rng rng(303);
  for (Index n = 2; n <= 8; ++n) {
    for (int trial = 0; trial < 100; ++trial) {
      Vector a = oracle::random_vector(rng, n, -2.0, 2.0);
      StateSpace s = realize_ccf(CcfParam{a, Vector::Zero(n), 0.0});
      auto p = char_poly(s.A);
      for (Index i = 0; i < n; ++i)
        CHECK(std::abs(p.coeffs[i] - a[i]) <= 1e-9);
    }
  }
}

namespace {

// Impulse-response comparison over the first `len` taps after ZOH.
double kernel_distance(const StateSpace& s1, const StateSpace& s2, Index len) {
  const double delta = 0.1;
  Kernel k1 = kernel(zoh(s1, delta), len);
  Kernel k2 = kernel(zoh(s2, delta), len);
  double worst = 0.0;
  for (Index i = 0; i < len; ++i)
    worst = std::max(worst, (k1.taps[i] - k2.taps[i]).cwiseAbs().maxCoeff());
  return worst;
}

}  // namespace

TEST_CASE("to_ccf recovers canonical systems exactly") {
  Vector a(3), b(3);
  a << 2, 3, 1;
  b << 0.5, -1, 2;
  StateSpace s = realize_ccf(CcfParam{a, b, 0.25});
  CcfParam back = to_ccf(s);
  CHECK((back.a - a).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((back.b - b).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(back.d == doctest::Approx(0.25));
}

TEST_CASE("to_ccf preserves the impulse response of controllable systems") {
  Rng rng(404);
  int done = 0;
  while (done < 20) {
    Matrix a = oracle::random_matrix(rng, 3, 3) - 1.5 * Matrix::Identity(3, 3);
    Matrix b = oracle::random_matrix(rng, 3, 1);
    Matrix c = oracle::random_matrix(rng, 1, 3);
    StateSpace s(a, b, c, Matrix::Zero(1, 1));
    if (numerical_rank(reachability_matrix(s)) != 3) continue;
    ++done;
    StateSpace round = realize_ccf(to_ccf(s));
    CHECK(kernel_distance(s, round, 8) <= 1e-7);
  }
}

TEST_CASE("to_ccf error paths") {
  StateSpace uncontrollable(Matrix::Identity(2, 2), Matrix::Zero(2, 1),
                            Matrix::Ones(1, 2), Matrix::Zero(1, 1));
  CHECK_THROWS_AS(to_ccf(uncontrollable), NotControllableError);

  StateSpace two_input(Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                       Matrix::Ones(1, 2), Matrix::Zero(1, 2));
  CHECK_THROWS_AS(to_ccf(two_input), UnsupportedError);
}

TEST_CASE("stabilize_diag clamps realized non-negative entries") {
  // Realized entries -2.0 and -0.1 (stored 2.0, 0.1): unchanged.
  DiagParam p{(Vector(2) << 2.0, 0.1).finished()};
  DiagParam q = stabilize_diag(p);
  CHECK(q.a[0] == 2.0);
  CHECK(q.a[1] == 0.1);

  // Realized 0.0 and 3.7 both become -1e-5.
  DiagParam r{(Vector(2) << 0.0, -3.7).finished()};
  DiagParam rs = stabilize_diag(r);
  CHECK(rs.a[0] == 1e-5);
  CHECK(rs.a[1] == 1e-5);

  // Pure function: input untouched.
  CHECK(r.a[0] == 0.0);
}

TEST_CASE("is_hurwitz") {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = -1;
  d(1, 1) = -5;
  CHECK(is_hurwitz(d));

  Matrix companion(2, 2);
  companion << 0, 1, -2, -3;
  CHECK(is_hurwitz(companion));  // eigenvalues -1, -2

  Matrix marginal = Matrix::Zero(2, 2);
  marginal(0, 1) = 1;
  marginal(1, 0) = -1;  // eigenvalues +-i
  CHECK_FALSE(is_hurwitz(marginal));
}

TEST_CASE("every clamped diagonal realization is Hurwitz") {
  Rng rng(505);
  for (int trial = 0; trial < 1000; ++trial) {
    const Index n = 1 + Index(rng.below(8));
    DiagParam p{oracle::random_vector(rng, n, -3.0, 3.0)};
    DiagParam q = stabilize_diag(p);
    Matrix a = (-q.a).asDiagonal();
    CHECK(is_hurwitz(a));
  }
}

TEST_CASE("free parameter count per tag") {
  Vector a4 = Vector::Zero(4);
  CHECK(free_param_count(SsmParam{CcfParam{a4, a4, 0.0}}) == 4);
  CHECK(free_param_count(SsmParam{OcfParam{a4, a4, 0.0}}) == 4);
  CHECK(free_param_count(SsmParam{DiagParam{a4}}) == 4);
  CHECK(free_param_count(SsmParam{DiagStableParam{a4}}) == 4);
  CHECK(free_param_count(SsmParam{DenseHippoParam{hippo_init(4)}}) == 16);
}
