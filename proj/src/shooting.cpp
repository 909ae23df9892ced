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
#include "lmpc/shooting.hpp"

#include <algorithm>
#include <cmath>

namespace lmpc {

Vector ShootingProblem::lower(int k) const {
  if (k < static_cast<int>(input_lower.size())) return input_lower[static_cast<std::size_t>(k)];
  return constraints->input_lower;
}

Vector ShootingProblem::upper(int k) const {
  if (k < static_cast<int>(input_upper.size())) return input_upper[static_cast<std::size_t>(k)];
  return constraints->input_upper;
}

namespace {

struct Evaluation {
  std::vector<Vector> states;
  double cost = 0.0;
  double violation_inf = 0.0;
  double violation_l1 = 0.0;
};

struct Excess {
  double inf = 0.0;
  double l1 = 0.0;
  void add(double e) {
    if (e > 0.0) {
      inf = std::max(inf, e);
      l1 += e;
    }
  }
};

Excess excess(const ShootingProblem& prob, const std::vector<Vector>& xs) {
  Excess ex;
  const int N = prob.horizon;
  const ConstraintSet& cs = *prob.constraints;
  for (int k = 1; k < N; ++k) {
    const Vector& x = xs[static_cast<std::size_t>(k)];
    for (const Ellipse& e : cs.obstacles) ex.add(1.0 - e.level(x));
    for (int i = 0; i < x.size(); ++i) {
      ex.add(cs.state_lower(i) - x(i));
      ex.add(x(i) - cs.state_upper(i));
    }
  }
  const Vector r = xs[static_cast<std::size_t>(N)] - prob.target;
  for (int i = 0; i < r.size(); ++i) ex.add(std::abs(r(i)));
  for (const auto& x : xs) {
    if (!x.allFinite()) ex.add(kInf);
  }
  return ex;
}

Evaluation evaluate(const ShootingProblem& prob, const std::vector<Vector>& us) {
  Evaluation ev;
  ev.states.reserve(us.size() + 1);
  ev.states.push_back(prob.x0);
  for (const auto& u : us) {
    ev.cost += prob.cost->smooth(ev.states.back(), u);
    ev.states.push_back((*prob.model)(ev.states.back(), u));
  }
  if (prob.preference_weights.size() > 0 && !us.empty()) {
    const Vector d = us.front() - prob.preferred_first_input;
    ev.cost += d.dot(prob.preference_weights.cwiseProduct(d));
  }
  const Excess ex = excess(prob, ev.states);
  ev.violation_inf = ex.inf;
  ev.violation_l1 = ex.l1;
  if (!std::isfinite(ev.cost)) ev.cost = kInf;
  return ev;
}

}  // namespace

double shooting_violation(const ShootingProblem& prob, const std::vector<Vector>& states) {
  return excess(prob, states).inf;
}

ShootingResult solve_shooting(const ShootingProblem& prob,
                              const std::vector<Vector>& guess, QpSolver& qp,
                              const ShootingOptions& opt) {
  const DynamicsModel& model = *prob.model;
  const StageCost& cost = *prob.cost;
  const int N = prob.horizon;
  const int n = model.state_dim();
  const int m = model.input_dim();

  std::vector<double> lo(static_cast<std::size_t>(N * m));
  std::vector<double> hi(static_cast<std::size_t>(N * m));
  std::vector<Vector> us(static_cast<std::size_t>(N), Vector::Zero(m));
  std::vector<int> free_vars;
  for (int k = 0; k < N; ++k) {
    const Vector l = prob.lower(k);
    const Vector h = prob.upper(k);
    for (int i = 0; i < m; ++i) {
      const auto j = static_cast<std::size_t>(k * m + i);
      lo[j] = l(i);
      hi[j] = h(i);
      double v = k < static_cast<int>(guess.size()) ? guess[static_cast<std::size_t>(k)](i) : 0.0;
      if (!std::isfinite(v)) v = 0.0;
      us[static_cast<std::size_t>(k)](i) = std::clamp(v, l(i), h(i));
      if (h(i) > l(i)) free_vars.push_back(k * m + i);
    }
  }
  const int nf = static_cast<int>(free_vars.size());

  const bool has_preference = prob.preference_weights.size() > 0;
  const bool has_cost = !opt.feasibility_only &&
                        ((cost.state_weights.array() > 0.0).any() ||
                         (cost.input_weights.array() > 0.0).any() || has_preference);

  ShootingResult best;
  Evaluation ev = evaluate(prob, us);
  auto record_if_better = [&](const std::vector<Vector>& u, const Evaluation& e, int it) {
    if (e.violation_inf <= opt.tolerance &&
        (!best.success || e.cost < best.smooth_cost)) {
      best.success = true;
      best.inputs = u;
      best.states = e.states;
      best.smooth_cost = e.cost;
      best.violation = e.violation_inf;
      best.iterations = it;
    }
  };
  record_if_better(us, ev, 0);
  if (best.success && !has_cost) return best;
  if (nf == 0) {
    if (!best.success) {
      best.states = ev.states;
      best.inputs = us;
      best.violation = ev.violation_inf;
    }
    return best;
  }

  double radius = opt.initial_radius;
  double penalty = 1.0;
  std::vector<double> history;
  Matrix A, B;
  std::vector<Matrix> S(static_cast<std::size_t>(N + 1));

  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    // Input sensitivities of every predicted state.
    S[0] = Matrix::Zero(n, nf);
    for (int k = 0; k < N; ++k) {
      model.jacobians(ev.states[static_cast<std::size_t>(k)], us[static_cast<std::size_t>(k)], A, B);
      Matrix next = A * S[static_cast<std::size_t>(k)];
      for (int c = 0; c < nf; ++c) {
        const int var = free_vars[static_cast<std::size_t>(c)];
        if (var / m == k) next.col(c) += B.col(var % m);
      }
      S[static_cast<std::size_t>(k + 1)] = std::move(next);
    }

    // Gauss-Newton model of the smooth cost.
    Matrix H = Matrix::Zero(nf, nf);
    Vector grad = Vector::Zero(nf);
    if (has_cost) {
      for (int k = 1; k < N; ++k) {
        const Vector& x = ev.states[static_cast<std::size_t>(k)];
        for (int i = 0; i < n; ++i) {
          const double q = cost.state_weights(i);
          if (q <= 0.0) continue;
          const Vector row = S[static_cast<std::size_t>(k)].row(i).transpose();
          H += 2.0 * q * row * row.transpose();
          grad += 2.0 * q * (x(i) - cost.target(i)) * row;
        }
      }
      for (int c = 0; c < nf; ++c) {
        const int var = free_vars[static_cast<std::size_t>(c)];
        const double r = cost.input_weights(var % m);
        if (r <= 0.0) continue;
        H(c, c) += 2.0 * r;
        grad(c) += 2.0 * r * us[static_cast<std::size_t>(var / m)](var % m);
      }
      for (int c = 0; has_preference && c < nf; ++c) {
        const int var = free_vars[static_cast<std::size_t>(c)];
        if (var >= m) break;
        const double w = prob.preference_weights(var);
        H(c, c) += 2.0 * w;
        grad(c) += 2.0 * w * (us[0](var) - prob.preferred_first_input(var));
      }
    }
    const double mu = 1e-6 * std::max(1.0, H.diagonal().maxCoeff());
    H.diagonal().array() += mu;

    // Linearized constraints.
    std::vector<Vector> rows;
    std::vector<double> rhs;
    const ConstraintSet& cs = *prob.constraints;
    for (int k = 1; k < N; ++k) {
      const Vector& x = ev.states[static_cast<std::size_t>(k)];
      const Matrix& Sk = S[static_cast<std::size_t>(k)];
      for (const Ellipse& e : cs.obstacles) {
        rows.push_back(-(Sk.transpose() * e.gradient(x)));
        rhs.push_back(e.level(x) - 1.0);
      }
      for (int i = 0; i < n; ++i) {
        if (std::isfinite(cs.state_upper(i))) {
          rows.push_back(Sk.row(i).transpose());
          rhs.push_back(cs.state_upper(i) - x(i));
        }
        if (std::isfinite(cs.state_lower(i))) {
          rows.push_back(-Sk.row(i).transpose());
          rhs.push_back(x(i) - cs.state_lower(i));
        }
      }
    }
    const int n_con = static_cast<int>(rows.size());
    const Matrix& SN = S[static_cast<std::size_t>(N)];
    const Vector terminal_rhs = prob.target - ev.states[static_cast<std::size_t>(N)];

    auto bound_rows = [&](QuadraticProgram& p, int offset, int total_cols) {
      for (int c = 0; c < nf; ++c) {
        const int var = free_vars[static_cast<std::size_t>(c)];
        const double w = us[static_cast<std::size_t>(var / m)](var % m);
        const double up = std::min(radius, hi[static_cast<std::size_t>(var)] - w);
        const double dn = std::min(radius, w - lo[static_cast<std::size_t>(var)]);
        Vector e = Vector::Zero(total_cols);
        e(c) = 1.0;
        p.ineq_matrix.row(offset + 2 * c) = e.transpose();
        p.ineq_rhs(offset + 2 * c) = std::max(up, 0.0);
        p.ineq_matrix.row(offset + 2 * c + 1) = -e.transpose();
        p.ineq_rhs(offset + 2 * c + 1) = std::max(dn, 0.0);
      }
    };

    QuadraticProgram sub;
    sub.hessian = 0.5 * (H + H.transpose());
    sub.linear = grad;
    sub.eq_matrix = SN;
    sub.eq_rhs = terminal_rhs;
    sub.ineq_matrix = Matrix::Zero(n_con + 2 * nf, nf);
    sub.ineq_rhs = Vector::Zero(n_con + 2 * nf);
    for (int r = 0; r < n_con; ++r) {
      sub.ineq_matrix.row(r) = rows[static_cast<std::size_t>(r)].transpose();
      sub.ineq_rhs(r) = rhs[static_cast<std::size_t>(r)];
    }
    bound_rows(sub, n_con, nf);

    QpSolution qs = qp.solve(sub);
    bool restoration = false;
    Vector d;
    if (qs.optimal()) {
      d = qs.z;
      double lam = qs.eq_multipliers.size() ? qs.eq_multipliers.lpNorm<Eigen::Infinity>() : 0.0;
      for (int r = 0; r < n_con; ++r) lam = std::max(lam, qs.ineq_multipliers(r));
      penalty = std::max(penalty, 2.0 * lam + 1e-3);
    } else {
      // Elastic step: least-squares reduction of the linearized violation.
      restoration = true;
      const int nv = nf + n + n_con;
      QuadraticProgram el;
      el.hessian = Matrix::Identity(nv, nv);
      el.hessian.topLeftCorner(nf, nf) *= 1e-6;
      el.linear = Vector::Zero(nv);
      el.eq_matrix = Matrix::Zero(n, nv);
      el.eq_matrix.leftCols(nf) = SN;
      el.eq_matrix.block(0, nf, n, n) = Matrix::Identity(n, n);
      el.eq_rhs = terminal_rhs;
      el.ineq_matrix = Matrix::Zero(n_con + 2 * nf, nv);
      el.ineq_rhs = Vector::Zero(n_con + 2 * nf);
      for (int r = 0; r < n_con; ++r) {
        el.ineq_matrix.block(r, 0, 1, nf) = rows[static_cast<std::size_t>(r)].transpose();
        el.ineq_matrix(r, nf + n + r) = -1.0;
        el.ineq_rhs(r) = rhs[static_cast<std::size_t>(r)];
      }
      bound_rows(el, n_con, nv);
      const QpSolution es = qp.solve(el);
      if (!es.optimal()) break;
      d = es.z.head(nf);
    }

    const double dnorm = d.size() ? d.lpNorm<Eigen::Infinity>() : 0.0;
    if (!restoration && ev.violation_inf <= opt.tolerance && dnorm <= 1e-10) break;
    if (restoration && dnorm <= 1e-14) break;

    auto merit = [&](const Evaluation& e) {
      return restoration ? e.violation_l1 : e.cost + penalty * e.violation_l1;
    };
    const double m0 = merit(ev);
    const double model_change = restoration ? 0.0 : grad.dot(d) + 0.5 * d.dot(H * d);
    const double predicted = restoration ? ev.violation_l1 : penalty * ev.violation_l1 - model_change;

    bool accepted = false;
    double alpha = 1.0;
    std::vector<Vector> trial = us;
    Evaluation trial_ev;
    for (int ls = 0; ls < 8; ++ls, alpha *= 0.5) {
      trial = us;
      for (int c = 0; c < nf; ++c) {
        const int var = free_vars[static_cast<std::size_t>(c)];
        double& v = trial[static_cast<std::size_t>(var / m)](var % m);
        v = std::clamp(v + alpha * d(c), lo[static_cast<std::size_t>(var)],
                       hi[static_cast<std::size_t>(var)]);
      }
      trial_ev = evaluate(prob, trial);
      const double m1 = merit(trial_ev);
      const double required = predicted > 0.0 ? 1e-4 * alpha * predicted : 0.0;
      if (std::isfinite(m1) && m1 <= m0 - required && (m1 < m0 || dnorm == 0.0)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      radius = 0.25 * std::min(radius, dnorm);
      if (radius < 1e-12) break;
      continue;
    }
    if (alpha == 1.0 && dnorm >= 0.9 * radius) radius = std::min(2.0 * radius, opt.max_radius);
    us = std::move(trial);
    ev = std::move(trial_ev);
    record_if_better(us, ev, it + 1);
    if (best.success && !has_cost) return best;

    history.push_back(ev.violation_l1);
    const std::size_t h = history.size();
    if (!best.success && h > 15 && history[h - 1] > 0.99 * history[h - 9] &&
        ev.violation_inf > 1e-3) {
      break;
    }
  }
  if (!best.success) {
    best.inputs = us;
    best.states = ev.states;
    best.violation = ev.violation_inf;
    best.smooth_cost = ev.cost;
  }
  best.iterations = std::max(best.iterations, it);
  return best;
}

}  // namespace lmpc
