#include "lmpc/lmpc.hpp"
#include "lmpc/systems.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

namespace lmpc {
namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Campaigns are deterministic, so each one is computed once per process.
const Campaign& clqr_campaign(Mode mode, bool prune = true) {
  static std::map<std::pair<int, bool>, Campaign> cache;
  const auto key = std::make_pair(static_cast<int>(mode), prune);
  auto it = cache.find(key);
  if (it == cache.end()) {
    const ClqrInstance inst;
    LmpcProblem p = make_clqr_problem(inst);
    p.mode = mode;
    LmpcOptions opt;
    opt.prune = prune;
    it = cache.emplace(key, run_until_convergence(p, clqr_seed_iteration0(inst), opt)).first;
  }
  return it->second;
}

TEST(Mode, ParsesNames) {
  EXPECT_EQ(parse_mode("enumeration"), Mode::kEnumeration);
  EXPECT_EQ(parse_mode("convex-relaxation"), Mode::kConvexRelaxation);
  EXPECT_STREQ(to_string(Mode::kConvexRelaxation), "convex-relaxation");
  EXPECT_THROW(parse_mode("relaxed"), ConfigError);
}

TEST(Candidate, LinearPlanLandsOnCandidate) {
  const ClqrInstance inst;
  const LmpcProblem p = make_clqr_problem(inst);
  SampledSafeSet ss;
  ss.add_trajectory(clqr_seed_iteration0(inst));
  QpSolver qp;
  int solved = 0;
  for (const Candidate& c : ss.candidates()) {
    const SubproblemSolution s = solve_candidate_linear(p, p.start, c, qp);
    if (!s.feasible) continue;
    ++solved;
    ASSERT_EQ(s.states.size(), static_cast<std::size_t>(p.horizon + 1));
    EXPECT_LT((s.states.back() - c.state).lpNorm<Eigen::Infinity>(), 1e-8);
    double stage = 0.0;
    for (int k = 0; k < p.horizon; ++k) {
      stage += p.cost(s.states[static_cast<std::size_t>(k)], s.inputs[static_cast<std::size_t>(k)]);
      EXPECT_TRUE(check_feasible(p.constraints, s.states[static_cast<std::size_t>(k)],
                                 s.inputs[static_cast<std::size_t>(k)])
                      .feasible);
    }
    EXPECT_NEAR(s.total_cost, stage + c.q, 1e-9);
  }
  EXPECT_GT(solved, 0);
}

TEST(Step, RejectsEmptySafeSet) {
  const LmpcProblem p = make_clqr_problem(ClqrInstance{});
  SampledSafeSet empty;
  EXPECT_THROW(solve_lmpc_step(p, empty, p.start, nullptr), ConfigError);
  EXPECT_THROW(solve_relaxed_step(p, empty, p.start), ConfigError);
}

TEST(Step, RelaxationNeedsLinearQuadratic) {
  const DubinsInstance inst;
  const LmpcProblem p = make_dubins_problem(inst);
  SampledSafeSet ss;
  ss.add_trajectory(dubins_seed_iteration0(inst));
  EXPECT_THROW(solve_relaxed_step(p, ss, p.start), ConfigError);
}

TEST(Step, ShiftedPlanAppendsStoredInput) {
  const ClqrInstance inst;
  const LmpcProblem p = make_clqr_problem(inst);
  SampledSafeSet ss;
  ss.add_trajectory(clqr_seed_iteration0(inst));
  const StepResult r = solve_lmpc_step(p, ss, p.start, nullptr);
  const std::vector<Vector> shifted = shifted_inputs(ss, r);
  ASSERT_EQ(shifted.size(), static_cast<std::size_t>(p.horizon));
  EXPECT_EQ(shifted.front(), r.solution.inputs[1]);
  EXPECT_EQ(shifted.back(), ss.input_at(r.candidate.ref));
}

TEST(TrajectoryGap, PadsWithTerminal) {
  Trajectory a;
  a.states = {vec({0.0})};
  a.inputs = {vec({0.0})};
  a.terminal = vec({1.0});
  Trajectory b = a;
  b.states.push_back(vec({2.0}));
  b.inputs.push_back(vec({0.0}));
  b.terminal = vec({1.0});
  EXPECT_DOUBLE_EQ(trajectory_gap(a, b), 1.0);
  EXPECT_DOUBLE_EQ(trajectory_gap(a, a), 0.0);
}

TEST(Barycentric, MatchesSimplexEnumeration) {
  std::mt19937 rng(21);
  std::uniform_real_distribution<double> d(-1, 1);
  std::uniform_real_distribution<double> cost(0, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const int P = 3 + trial % 6;
    Matrix X(2, P);
    Vector q(P);
    for (int i = 0; i < P; ++i) {
      X.col(i) = vec({d(rng), d(rng)});
      q(i) = cost(rng);
    }
    const Vector z = vec({0.8 * d(rng), 0.8 * d(rng)});
    // Every basic solution uses at most three points.
    double best = kInf;
    for (int a = 0; a < P; ++a) {
      for (int b = a + 1; b < P; ++b) {
        for (int c = b + 1; c < P; ++c) {
          Matrix M(3, 3);
          M << X.col(a), X.col(b), X.col(c), Eigen::RowVector3d::Ones();
          if (std::abs(M.determinant()) < 1e-12) continue;
          const Vector w = M.fullPivLu().solve(vec({z(0), z(1), 1.0}));
          if (w.minCoeff() < -1e-12) continue;
          best = std::min(best, w(0) * q(a) + w(1) * q(b) + w(2) * q(c));
        }
      }
    }
    const BarycentricValue v = barycentric_value(X, q, z);
    ASSERT_EQ(v.feasible, std::isfinite(best)) << "trial " << trial;
    if (v.feasible) {
      EXPECT_NEAR(v.value, best, 1e-9);
      EXPECT_NEAR(v.weights.sum(), 1.0, 1e-12);
      EXPECT_GE(v.weights.minCoeff(), -1e-12);
      EXPECT_LT((X * v.weights - z).norm(), 1e-9);
      EXPECT_NEAR(v.slope.dot(z) + v.offset, v.value, 1e-9);
      for (int i = 0; i < P; ++i) EXPECT_LE(v.slope.dot(X.col(i)) + v.offset, q(i) + 1e-9);
    } else {
      EXPECT_GT(v.slope.dot(z) + v.offset, 0.0);
      for (int i = 0; i < P; ++i) EXPECT_LE(v.slope.dot(X.col(i)) + v.offset, 1e-9);
    }
  }
}

TEST(Barycentric, RejectsDimensionMismatch) {
  EXPECT_THROW(barycentric_value(Matrix::Zero(2, 3), Vector::Zero(2), Vector::Zero(2)),
               ConfigError);
}

TEST(ClqrCampaign, ConvergesWithMonotoneCost) {
  const Campaign& c = clqr_campaign(Mode::kEnumeration);
  ASSERT_TRUE(c.converged);
  for (std::size_t j = 1; j < c.records.size(); ++j) {
    EXPECT_LE(c.records[j].cost, c.records[j - 1].cost + 1e-9) << "j=" << j;
  }
  EXPECT_NEAR(c.records.back().cost, 49.9163600440, 1e-4);
}

TEST(ClqrCampaign, CostSandwich) {
  for (Mode mode : {Mode::kEnumeration, Mode::kConvexRelaxation}) {
    const Campaign& c = clqr_campaign(mode);
    for (std::size_t j = 1; j < c.records.size(); ++j) {
      const double j0 = c.steps[j].front().cost;
      EXPECT_LE(j0, c.records[j - 1].cost + 1e-7) << to_string(mode) << " j=" << j;
      EXPECT_GE(j0, c.records[j].cost - 1e-7) << to_string(mode) << " j=" << j;
    }
  }
}

TEST(ClqrCampaign, LyapunovDecrease) {
  for (Mode mode : {Mode::kEnumeration, Mode::kConvexRelaxation}) {
    const Campaign& c = clqr_campaign(mode);
    for (std::size_t j = 1; j < c.records.size(); ++j) {
      const Trajectory& tr = c.records[j].trajectory;
      const std::vector<StepResult>& steps = c.steps[j];
      ASSERT_EQ(steps.size(), tr.steps() + 1);
      for (std::size_t t = 0; t + 1 < steps.size(); ++t) {
        EXPECT_LE(steps[t + 1].cost - steps[t].cost, -tr.stage_costs[t] + 1e-7)
            << to_string(mode) << " j=" << j << " t=" << t;
      }
    }
  }
}

TEST(ClqrCampaign, RecordsResimulateAndStayFeasible) {
  const LmpcProblem p = make_clqr_problem(ClqrInstance{});
  const Campaign& c = clqr_campaign(Mode::kEnumeration);
  for (std::size_t j = 1; j < c.records.size(); ++j) {
    const Trajectory& tr = c.records[j].trajectory;
    const std::vector<Vector> xs =
        simulate([&](const Vector& x, const Vector& u) { return p.model(x, u); }, p.start,
                 tr.inputs);
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      EXPECT_EQ(xs[t], tr.states[t]);
      EXPECT_TRUE(check_feasible(p.constraints, tr.states[t], tr.inputs[t]).feasible);
    }
    // The closed loop stops within epsilon of the origin and is snapped to it.
    EXPECT_LE(xs.back().squaredNorm(), p.epsilon);
    EXPECT_EQ(tr.terminal, Vector::Zero(2));
  }
}

TEST(ClqrCampaign, SafeSetGrowsByStepsPlusOne) {
  const Campaign& c = clqr_campaign(Mode::kEnumeration);
  for (std::size_t j = 1; j < c.records.size(); ++j) {
    EXPECT_EQ(c.safe_set_sizes[j] - c.safe_set_sizes[j - 1],
              c.records[j].trajectory.steps() + 1);
  }
}

TEST(ClqrCampaign, PruningDoesNotChangeCosts) {
  const Campaign& on = clqr_campaign(Mode::kEnumeration, true);
  const Campaign& off = clqr_campaign(Mode::kEnumeration, false);
  ASSERT_EQ(on.records.size(), off.records.size());
  std::size_t solved_on = 0;
  std::size_t solved_off = 0;
  for (std::size_t j = 1; j < on.records.size(); ++j) {
    ASSERT_EQ(on.steps[j].size(), off.steps[j].size());
    for (std::size_t t = 0; t < on.steps[j].size(); ++t) {
      EXPECT_NEAR(on.steps[j][t].cost, off.steps[j][t].cost, 1e-9);
      if (j > 2) {
        solved_on += on.steps[j][t].candidates_solved;
        solved_off += off.steps[j][t].candidates_solved;
      }
    }
  }
  EXPECT_LE(2 * solved_on, solved_off);
}

TEST(ClqrCampaign, RelaxationIsNeverWorse) {
  const ClqrInstance inst;
  LmpcProblem p = make_clqr_problem(inst);
  const Campaign& relaxed = clqr_campaign(Mode::kConvexRelaxation);
  EXPECT_TRUE(relaxed.converged);
  SampledSafeSet ss;
  for (std::size_t j = 1; j < relaxed.records.size(); ++j) {
    ss.add_trajectory(relaxed.records[j - 1]);
    const Trajectory& tr = relaxed.records[j].trajectory;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      const StepResult enumerated = solve_lmpc_step(p, ss, tr.states[t], nullptr);
      EXPECT_LE(relaxed.steps[j][t].cost, enumerated.cost + 1e-9) << "j=" << j << " t=" << t;
    }
  }
}

TEST(DubinsCampaign, ReachesSixteenSteps) {
  const DubinsInstance inst;
  const LmpcProblem p = make_dubins_problem(inst);
  const Campaign c = run_until_convergence(p, dubins_seed_iteration0(inst));
  ASSERT_TRUE(c.converged);
  for (std::size_t j = 1; j < c.records.size(); ++j) {
    EXPECT_LE(c.records[j].cost, c.records[j - 1].cost);
    const Trajectory& tr = c.records[j].trajectory;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      EXPECT_TRUE(check_feasible(p.constraints, tr.states[t], tr.inputs[t]).feasible);
    }
    EXPECT_TRUE(p.cost.in_target(tr.terminal));
  }
  EXPECT_EQ(c.records.back().cost, 16.0);
}

}  // namespace
}  // namespace lmpc
