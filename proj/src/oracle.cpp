/*
 Copyright 2026 The lmpc-lab Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

     https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#include "lmpc/oracle.hpp"

#include "lmpc/qp_solver.hpp"
#include "lmpc/shooting.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace lmpc {

Trajectory OracleSolution::trajectory() const {
  Trajectory tr;
  tr.states.assign(states.begin(), states.end() - 1);
  tr.inputs = inputs;
  tr.terminal = states.back();
  return tr;
}

namespace {

OracleSolution solve_pinned(const LmpcProblem& prob, int T) {
  const int n = prob.model.state_dim();
  const int m = prob.model.input_dim();
  const QuadraticProgram p =
      condense_mpc(prob.model, prob.cost, T, prob.start, Vector::Zero(n), prob.constraints);
  QpSolver qp;
  const QpSolution s = qp.solve(p);
  if (!s.optimal()) {
    throw NumericalError("oracle QP with horizon " + std::to_string(T) + " failed: " +
                         s.diagnostic);
  }
  OracleSolution out;
  out.horizon = T;
  for (int k = 0; k < T; ++k) out.inputs.push_back(s.z.segment(k * m, m));
  out.states = simulate([&](const Vector& x, const Vector& u) { return prob.model(x, u); },
                        prob.start, out.inputs);
  std::vector<double> stages;
  for (int k = 0; k < T; ++k) {
    stages.push_back(prob.cost(out.states[static_cast<std::size_t>(k)],
                               out.inputs[static_cast<std::size_t>(k)]));
  }
  out.cost = sum_stage_costs(stages);
  return out;
}

}  // namespace

OracleSolution clqr_oracle(const ClqrInstance& inst, int T) {
  if (T < 1) throw ConfigError("oracle horizon must be positive");
  const LmpcProblem prob = make_clqr_problem(inst);
  OracleSolution out = solve_pinned(prob, T);
  const OracleSolution twice = solve_pinned(prob, 2 * T);
  out.saturation_gap = std::abs(out.cost - twice.cost);
  return out;
}

std::vector<double> deviation_profile(const Trajectory& a, const Trajectory& b) {
  const std::vector<Vector> xa = a.all_states();
  const std::vector<Vector> xb = b.all_states();
  if (xa.empty() || xb.empty()) return {};
  if (xa.front().size() != xb.front().size()) {
    throw ConfigError("deviation_profile: state dimension mismatch");
  }
  const std::size_t len = std::max(xa.size(), xb.size());
  std::vector<double> out(len);
  for (std::size_t t = 0; t < len; ++t) {
    const Vector& pa = xa[std::min(t, xa.size() - 1)];
    const Vector& pb = xb[std::min(t, xb.size() - 1)];
    out[t] = (pa - pb).norm();
  }
  return out;
}

double brute_force_q(const std::vector<IterationRecord>& records, const Vector& x) {
  double best = kInf;
  for (const IterationRecord& rec : records) {
    const std::vector<double> tails = cost_to_go_tails(rec.trajectory.stage_costs);
    const std::vector<Vector> xs = rec.trajectory.all_states();
    for (std::size_t t = 0; t < xs.size(); ++t) {
      if (xs[t].size() != x.size()) continue;
      // Exact comparison; +0.0 == -0.0 holds for doubles.
      if ((xs[t].array() == x.array()).all()) {
        best = std::min(best, t < tails.size() ? tails[t] : 0.0);
      }
    }
  }
  return best;
}

FixedEndpointReport fixed_endpoint_check(const LmpcProblem& prob, const Trajectory& tr,
                                         const std::vector<int>& horizons) {
  if (!prob.uses_linear_path()) {
    throw ConfigError("fixed_endpoint_check needs linear dynamics and a quadratic cost");
  }
  const int m = prob.model.input_dim();
  const std::vector<Vector> xs = tr.all_states();
  const int steps = static_cast<int>(tr.steps());
  FixedEndpointReport rep;
  QpSolver qp;
  for (int T : horizons) {
    for (int t = 0; t + T <= steps; ++t) {
      const QuadraticProgram p =
          condense_mpc(prob.model, prob.cost, T, xs[static_cast<std::size_t>(t)],
                       xs[static_cast<std::size_t>(t + T)], prob.constraints);
      const QpSolution s = qp.solve(p);
      ++rep.windows;
      if (!s.optimal()) {
        rep.all_solved = false;
        continue;
      }
      for (int k = 0; k < T; ++k) {
        const double gap =
            (s.z.segment(k * m, m) - tr.inputs[static_cast<std::size_t>(t + k)])
                .lpNorm<Eigen::Infinity>();
        rep.max_input_gap = std::max(rep.max_input_gap, gap);
      }
    }
  }
  return rep;
}

PerturbationReport perturbation_check(const LmpcProblem& prob, const Trajectory& tr,
                                      double delta) {
  const int T = static_cast<int>(tr.steps());
  if (T < 2) throw ConfigError("perturbation_check needs at least two steps");
  const int m = prob.model.input_dim();
  ShootingProblem sp;
  sp.model = &prob.model;
  sp.cost = &prob.cost;
  sp.constraints = &prob.constraints;
  sp.x0 = tr.states.front();
  sp.target = prob.target();
  ShootingOptions feas;
  feas.feasibility_only = true;
  feas.max_iterations = 200;
  QpSolver qp;

  PerturbationReport rep;
  for (int k = 0; k < T; ++k) {
    for (int i = 0; i < m; ++i) {
      for (double sign : {1.0, -1.0}) {
        std::vector<Vector> u = tr.inputs;
        Vector& uk = u[static_cast<std::size_t>(k)];
        uk(i) = std::clamp(uk(i) + sign * delta, prob.constraints.input_lower(i),
                           prob.constraints.input_upper(i));
        ++rep.perturbations;

        sp.horizon = T;
        const ShootingResult same = solve_shooting(sp, u, qp, feas);
        if (same.success) {
          ++rep.projected;
          u = same.inputs;
        }
        sp.horizon = T - 1;
        const std::vector<Vector> drop_last(u.begin(), u.end() - 1);
        const std::vector<Vector> drop_first(u.begin() + 1, u.end());
        bool shorter = false;
        for (const auto* guess : {&drop_last, &drop_first}) {
          if (solve_shooting(sp, *guess, qp, feas).success) {
            shorter = true;
            break;
          }
        }
        if (shorter) ++rep.shorter;
      }
    }
  }
  return rep;
}

// Independent of the solver's pivoting: every face is solved directly.
std::optional<double> qp_enumeration_oracle(const QuadraticProgram& qp) {
  const int n = static_cast<int>(qp.hessian.rows());
  const int n_eq = static_cast<int>(qp.eq_rhs.size());
  const int n_in = static_cast<int>(qp.ineq_rhs.size());
  std::optional<double> best;
  for (int mask = 0; mask < (1 << n_in); ++mask) {
    std::vector<int> rows;
    for (int i = 0; i < n_in; ++i) {
      if (mask & (1 << i)) rows.push_back(i);
    }
    const int k = n_eq + static_cast<int>(rows.size());
    if (k > n) continue;
    Matrix A(k, n);
    Vector b(k);
    if (n_eq > 0) {
      A.topRows(n_eq) = qp.eq_matrix;
      b.head(n_eq) = qp.eq_rhs;
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      A.row(n_eq + static_cast<int>(r)) = qp.ineq_matrix.row(rows[r]);
      b(n_eq + static_cast<int>(r)) = qp.ineq_rhs(rows[r]);
    }
    Matrix K = Matrix::Zero(n + k, n + k);
    K.topLeftCorner(n, n) = qp.hessian;
    K.topRightCorner(n, k) = A.transpose();
    K.bottomLeftCorner(k, n) = A;
    Vector rhs(n + k);
    rhs << -qp.linear, b;
    Eigen::FullPivLU<Matrix> lu(K);
    if (!lu.isInvertible()) continue;
    const Vector z = lu.solve(rhs).head(n);
    if (n_eq > 0 && (qp.eq_matrix * z - qp.eq_rhs).cwiseAbs().maxCoeff() > 1e-9) continue;
    if (n_in > 0 && (qp.ineq_matrix * z - qp.ineq_rhs).maxCoeff() > 1e-10) continue;
    const double v = qp.objective(z);
    if (!best || v < *best) best = v;
  }
  return best;
}

QuadraticProgram random_test_qp(std::mt19937& rng, int n, int n_eq, int n_in,
                           bool force_feasible) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  QuadraticProgram qp;
  Matrix M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = g(rng);
  qp.hessian = M.transpose() * M + 0.1 * Matrix::Identity(n, n);
  qp.hessian = 0.5 * (qp.hessian + qp.hessian.transpose()).eval();
  qp.linear = Vector(n);
  for (int i = 0; i < n; ++i) qp.linear(i) = 3.0 * g(rng);
  Vector z0(n);
  for (int i = 0; i < n; ++i) z0(i) = g(rng);
  qp.eq_matrix = Matrix(n_eq, n);
  for (int i = 0; i < n_eq; ++i)
    for (int j = 0; j < n; ++j) qp.eq_matrix(i, j) = g(rng);
  qp.eq_rhs = qp.eq_matrix * z0;
  qp.ineq_matrix = Matrix(n_in, n);
  qp.ineq_rhs = Vector(n_in);
  for (int i = 0; i < n_in; ++i) {
    for (int j = 0; j < n; ++j) qp.ineq_matrix(i, j) = g(rng);
    const double slack = force_feasible ? u(rng) : 2.0 * g(rng);
    qp.ineq_rhs(i) = qp.ineq_matrix.row(i).dot(z0) + slack;
  }
  return qp;
}

}  // namespace lmpc
