#include "lmpc/qp_solver.hpp"
#include "lmpc/oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <optional>
#include <random>

namespace lmpc {
namespace {

TEST(SolveQp, UnconstrainedIdentity) {
  QuadraticProgram qp;
  qp.hessian = Matrix::Identity(2, 2);
  qp.linear = Vector::Zero(2);
  const QpSolution s = solve_qp(qp);
  ASSERT_TRUE(s.optimal());
  EXPECT_EQ(s.z, Vector::Zero(2));
  EXPECT_EQ(s.value, 0.0);
}

TEST(SolveQp, ClippedScalar) {
  QuadraticProgram qp;
  qp.hessian = Matrix::Identity(1, 1);
  qp.linear = Vector::Constant(1, -2.0);
  qp.ineq_matrix = Matrix::Ones(1, 1);
  qp.ineq_rhs = Vector::Constant(1, 0.5);
  const QpSolution s = solve_qp(qp);
  ASSERT_TRUE(s.optimal());
  EXPECT_NEAR(s.z(0), 0.5, 1e-15);
  EXPECT_NEAR(s.value, -0.875, 1e-15);
  EXPECT_NEAR(s.ineq_multipliers(0), 1.5, 1e-12);
  EXPECT_EQ(s.active_set, std::vector<int>{0});
}

TEST(SolveQp, FiveVariablesThreeBoxRows) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    QuadraticProgram qp = random_test_qp(rng, 5, 0, 0, true);
    qp.ineq_matrix = Matrix::Zero(3, 5);
    qp.ineq_rhs = Vector(3);
    for (int r = 0; r < 3; ++r) {
      qp.ineq_matrix(r, r) = (trial + r) % 2 == 0 ? 1.0 : -1.0;
      qp.ineq_rhs(r) = 0.3;
    }
    const QpSolution s = solve_qp(qp);
    const auto ref = qp_enumeration_oracle(qp);
    ASSERT_TRUE(ref.has_value());
    ASSERT_TRUE(s.optimal());
    EXPECT_NEAR(s.value, *ref, 1e-8);
    EXPECT_LE(s.residuals.max(), 1e-8);
  }
}

TEST(SolveQp, RandomInstancesMatchEnumerationOracle) {
  std::mt19937 rng(2024);
  std::uniform_int_distribution<int> dn(1, 6);
  int feasible = 0;
  int infeasible = 0;
  for (int trial = 0; trial < 1500; ++trial) {
    const int n = dn(rng);
    const int n_eq = std::min(n - 1, static_cast<int>(rng() % 3));
    const int n_in = static_cast<int>(rng() % 7);
    const bool force = trial % 4 != 0;
    const QuadraticProgram qp = random_test_qp(rng, n, n_eq, n_in, force);
    const auto ref = qp_enumeration_oracle(qp);
    const QpSolution s = solve_qp(qp);
    if (ref) {
      ++feasible;
      ASSERT_TRUE(s.optimal()) << "trial " << trial << ": " << to_string(s.status);
      EXPECT_NEAR(s.value, *ref, 1e-8 * (1.0 + std::abs(*ref))) << "trial " << trial;
      EXPECT_LE(s.residuals.stationarity, 1e-8) << "trial " << trial;
      EXPECT_LE(s.residuals.primal_equality, 1e-8) << "trial " << trial;
      EXPECT_LE(s.residuals.primal_inequality, 1e-8) << "trial " << trial;
      EXPECT_LE(s.residuals.complementarity, 1e-8) << "trial " << trial;
      EXPECT_LE(s.residuals.dual_infeasibility, 1e-8) << "trial " << trial;
      EXPECT_NEAR(s.value, qp.objective(s.z), 1e-12 * (1.0 + std::abs(s.value)));
    } else {
      ++infeasible;
      EXPECT_EQ(s.status, QpStatus::kInfeasible) << "trial " << trial;
      EXPECT_FALSE(s.diagnostic.empty());
    }
  }
  EXPECT_GE(feasible, 1000);
  EXPECT_GT(infeasible, 0);
}

TEST(SolveQp, InvariantUnderRowPermutation) {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const QuadraticProgram qp = random_test_qp(rng, 4, 1, 6, true);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    QuadraticProgram p = qp;
    for (int i = 0; i < 6; ++i) {
      p.ineq_matrix.row(i) = qp.ineq_matrix.row(perm[static_cast<std::size_t>(i)]);
      p.ineq_rhs(i) = qp.ineq_rhs(perm[static_cast<std::size_t>(i)]);
    }
    const QpSolution a = solve_qp(qp);
    const QpSolution b = solve_qp(p);
    ASSERT_TRUE(a.optimal());
    ASSERT_TRUE(b.optimal());
    EXPECT_NEAR(a.value, b.value, 1e-9);
  }
}

TEST(SolveQp, RejectsBadInput) {
  QuadraticProgram qp;
  qp.hessian = Matrix::Identity(2, 2);
  qp.hessian(1, 1) = -1.0;
  qp.linear = Vector::Zero(2);
  EXPECT_THROW(solve_qp(qp), ConfigError);
  QuadraticProgram asym;
  asym.hessian = Matrix::Identity(2, 2);
  asym.hessian(0, 1) = 0.1;
  asym.linear = Vector::Zero(2);
  EXPECT_THROW(solve_qp(asym), ConfigError);
  QuadraticProgram dims;
  dims.hessian = Matrix::Identity(2, 2);
  dims.linear = Vector::Zero(3);
  EXPECT_THROW(solve_qp(dims), ConfigError);
}

TEST(SolveQp, InconsistentEqualitiesAreInfeasible) {
  QuadraticProgram qp;
  qp.hessian = Matrix::Identity(2, 2);
  qp.eq_matrix = Matrix(2, 2);
  qp.eq_matrix << 1, 1, 2, 2;
  qp.eq_rhs = Vector(2);
  qp.eq_rhs << 1, 3;
  EXPECT_EQ(solve_qp(qp).status, QpStatus::kInfeasible);
}

TEST(SolveQp, SolverInstanceIsReusable) {
  std::mt19937 rng(5);
  QpSolver solver;
  for (int trial = 0; trial < 50; ++trial) {
    const QuadraticProgram qp = random_test_qp(rng, 3 + trial % 3, trial % 2, 5, true);
    const QpSolution a = solver.solve(qp);
    const QpSolution b = solve_qp(qp);
    ASSERT_TRUE(a.optimal());
    EXPECT_EQ(a.value, b.value);
  }
}

DynamicsModel double_integrator() {
  Matrix A(2, 2);
  A << 1, 1, 0, 1;
  Matrix B(2, 1);
  B << 0, 1;
  return DynamicsModel::linear(A, B);
}

ConstraintSet clqr_box() {
  ConstraintSet cs;
  cs.state_lower = Vector::Constant(2, -4.0);
  cs.state_upper = Vector::Constant(2, 4.0);
  cs.input_lower = Vector::Constant(1, -1.0);
  cs.input_upper = Vector::Constant(1, 1.0);
  return cs;
}

TEST(CondenseMpc, TrivialOneStep) {
  const DynamicsModel f =
      DynamicsModel::linear(Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  const StageCost c = StageCost::quadratic(Vector::Zero(2), 2);
  const QuadraticProgram qp =
      condense_mpc(f, c, 1, Vector::Zero(2), Vector::Zero(2),
                   ConstraintSet::unbounded(2, 2));
  const QpSolution s = solve_qp(qp);
  ASSERT_TRUE(s.optimal());
  EXPECT_LT(s.z.norm(), 1e-15);
  EXPECT_EQ(s.value, 0.0);
}

TEST(CondenseMpc, StoredSegmentIsFeasibleAndRoundTrips) {
  // Segment u = [1, 1, -1, -1] from the start state lands on x4.
  const DynamicsModel f = double_integrator();
  const StageCost c = StageCost::quadratic(Vector::Zero(2), 1);
  Vector x(2);
  x << -3.95, -0.05;
  const Vector x0 = x;
  const double us[4] = {1.0, 1.0, -1.0, -1.0};
  double seg_cost = 0.0;
  for (double u : us) {
    seg_cost += c(x, Vector::Constant(1, u));
    x = f(x, Vector::Constant(1, u));
  }
  const QuadraticProgram qp = condense_mpc(f, c, 4, x0, x, clqr_box());
  Vector useg(4);
  useg << 1.0, 1.0, -1.0, -1.0;
  EXPECT_LE((qp.eq_matrix * useg - qp.eq_rhs).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((qp.ineq_matrix * useg - qp.ineq_rhs).maxCoeff(), 1e-12);
  EXPECT_NEAR(qp.objective(useg), seg_cost, 1e-12);

  const QpSolution s = solve_qp(qp);
  ASSERT_TRUE(s.optimal());
  EXPECT_LE(s.value, seg_cost + 1e-12);
  Vector xs = x0;
  double rolled = 0.0;
  for (int k = 0; k < 4; ++k) {
    const Vector u = s.z.segment(k, 1);
    rolled += c(xs, u);
    const Vector next = f(xs, u);
    if (k < 3) EXPECT_TRUE(check_feasible(clqr_box(), next, u).feasible);
    xs = next;
  }
  EXPECT_LE((xs - x).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(rolled, s.value, 1e-9);
}

TEST(CondenseMpc, UnreachableTerminalIsInfeasible) {
  const DynamicsModel f = double_integrator();
  const StageCost c = StageCost::quadratic(Vector::Zero(2), 1);
  Vector x0(2);
  x0 << 0.0, 0.0;
  Vector far(2);
  far << 0.0, 3.5;  // velocity change of 3.5 needs at least 4 unit steps
  const QpSolution s = solve_qp(condense_mpc(f, c, 3, x0, far, clqr_box()));
  EXPECT_EQ(s.status, QpStatus::kInfeasible);
}

}  // namespace
}  // namespace lmpc
