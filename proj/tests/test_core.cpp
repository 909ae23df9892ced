#include "lmpc/core.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace lmpc {
namespace {

DynamicsModel double_integrator() {
  Matrix A(2, 2);
  A << 1, 1, 0, 1;
  Matrix B(2, 1);
  B << 0, 1;
  return DynamicsModel::linear(A, B);
}

DynamicsModel planar_car() {
  return DynamicsModel(3, 2, [](const Vector& x, const Vector& u) {
    Vector out(3);
    out << x(0) + x(2) * std::cos(u(0)), x(1) + x(2) * std::sin(u(0)), x(2) + u(1);
    return out;
  });
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

TEST(Step, DoubleIntegratorFromStart) {
  const Vector x = step(double_integrator(), vec({-3.95, -0.05}), vec({0.0}));
  EXPECT_EQ(x(0), -4.0);
  EXPECT_EQ(x(1), -0.05);
}

TEST(Step, EquilibriumStaysPut) {
  const Vector x = step(double_integrator(), vec({0.0, 0.0}), vec({0.0}));
  EXPECT_EQ(x, vec({0.0, 0.0}));
  const Vector goal = vec({54.0, 0.0, 0.0});
  EXPECT_EQ(step(planar_car(), goal, vec({0.0, 0.0})), goal);
}

TEST(Step, CarAtRestOnlyAccelerates) {
  const Vector x = step(planar_car(), vec({0, 0, 0}), vec({0.0, 1.0}));
  EXPECT_EQ(x, vec({0.0, 0.0, 1.0}));
}

TEST(Step, DimensionMismatchIsConfigError) {
  EXPECT_THROW(step(double_integrator(), vec({1.0}), vec({0.0})), ConfigError);
  EXPECT_THROW(step(double_integrator(), vec({1.0, 2.0}), vec({0.0, 1.0})), ConfigError);
}

TEST(Jacobians, FiniteDifferenceMatchesAnalytic) {
  const DynamicsModel car = planar_car();
  Matrix A, B;
  const Vector x = vec({1.0, 2.0, 3.0});
  const Vector u = vec({0.3, -0.2});
  car.jacobians(x, u, A, B);
  Matrix A_ref(3, 3);
  A_ref << 1, 0, std::cos(0.3), 0, 1, std::sin(0.3), 0, 0, 1;
  Matrix B_ref(3, 2);
  B_ref << -3.0 * std::sin(0.3), 0, 3.0 * std::cos(0.3), 0, 0, 1;
  EXPECT_LT((A - A_ref).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((B - B_ref).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(StageCostEval, Quadratic) {
  const StageCost c = StageCost::quadratic(Vector::Zero(2), 1);
  EXPECT_EQ(eval_stage_cost(c, vec({3, 4}), vec({1})), 26.0);
}

TEST(StageCostEval, IndicatorAtAndAwayFromTarget) {
  const StageCost c = StageCost::indicator(vec({54, 0, 0}), 2);
  EXPECT_EQ(eval_stage_cost(c, vec({54, 0, 0}), vec({0, 0})), 0.0);
  EXPECT_EQ(eval_stage_cost(c, vec({1, 0, 0}), vec({0, 0})), 1.0);
  EXPECT_EQ(eval_stage_cost(c, vec({54 + 5e-7, 0, 0}), vec({0, 0})), 0.0);
  EXPECT_EQ(eval_stage_cost(c, vec({54 + 2e-6, 0, 0}), vec({0, 0})), 1.0);
}

TEST(StageCostEval, QuadraticIsPositiveAwayFromEquilibrium) {
  const StageCost c = StageCost::quadratic(Vector::Zero(2), 1);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> d(-4.0, 4.0);
  EXPECT_EQ(c(Vector::Zero(2), Vector::Zero(1)), 0.0);
  for (int i = 0; i < 10000; ++i) {
    Vector x = vec({d(rng), d(rng)});
    Vector u = vec({d(rng)});
    // Sparsify so that partial zeros are exercised.
    if (i % 3 == 0) x(0) = 0.0;
    if (i % 5 == 0) u(0) = 0.0;
    if (i % 7 == 0) x(1) = 0.0;
    const bool at_eq = x.isZero(0.0) && u.isZero(0.0);
    EXPECT_EQ(c(x, u) == 0.0, at_eq);
  }
}

TEST(CheckFeasible, BoxesAndEllipse) {
  ConstraintSet cs;
  cs.state_lower = vec({-4, -4});
  cs.state_upper = vec({4, 4});
  cs.input_lower = vec({-1});
  cs.input_upper = vec({1});
  EXPECT_TRUE(check_feasible(cs, vec({-3.95, -0.05}), vec({1})).feasible);
  const FeasibilityReport bad = check_feasible(cs, vec({-3.95, -0.05}), vec({1.0001}));
  EXPECT_FALSE(bad.feasible);
  EXPECT_EQ(bad.violations.size(), 1u);

  ConstraintSet obs = ConstraintSet::unbounded(3, 2);
  obs.obstacles.push_back(Ellipse{27.0, 0.0, 8.0, 6.0, 0, 1});
  EXPECT_FALSE(check_feasible(obs, vec({27, 0, 0}), vec({0, 0})).feasible);
  EXPECT_TRUE(check_feasible(obs, vec({27, 6.01, 0}), vec({0, 0})).feasible);
  EXPECT_TRUE(check_feasible(obs, vec({27, 6.0, 0}), vec({0, 0})).feasible);
}

TEST(ConstraintSetValidate, RejectsBadData) {
  ConstraintSet cs = ConstraintSet::unbounded(2, 1);
  cs.state_lower(0) = 1.0;
  cs.state_upper(0) = 0.0;
  EXPECT_THROW(cs.validate(2, 1), ConfigError);
  ConstraintSet e = ConstraintSet::unbounded(2, 1);
  e.obstacles.push_back(Ellipse{0, 0, 0.0, 1.0, 0, 1});
  EXPECT_THROW(e.validate(2, 1), ConfigError);
}

TEST(Record, CostIsForwardSumOfStageCosts) {
  const DynamicsModel f = double_integrator();
  const StageCost c = StageCost::quadratic(Vector::Zero(2), 1);
  const std::vector<Vector> us = {vec({1}), vec({0.5}), vec({-0.25})};
  const std::vector<Vector> xs =
      simulate([&](const Vector& x, const Vector& u) { return f(x, u); },
               vec({-1.0, 0.0}), us);
  const IterationRecord rec = make_record(0, xs, us, c);
  double s = 0.0;
  for (std::size_t t = 0; t < us.size(); ++t) s += eval_stage_cost(c, xs[t], us[t]);
  EXPECT_EQ(rec.cost, s);
  EXPECT_EQ(rec.trajectory.steps(), 3u);
  EXPECT_EQ(rec.trajectory.terminal, xs.back());
  EXPECT_FALSE(rec.converged_to_target);
}

TEST(Canonicalize, PartialTargetCoordinates) {
  StageCost c = StageCost::indicator(vec({54, 0, 0, 0, 0}), 3);
  c.target_coords = {0, 1, 2, 4};
  const Vector x = vec({54 + 1e-8, -1e-9, 1e-10, 0.9, 1e-12});
  EXPECT_TRUE(c.in_target(x));
  const Vector y = c.canonicalize(x);
  EXPECT_EQ(y, vec({54, 0, 0, 0.9, 0}));
}

}  // namespace
}  // namespace lmpc
