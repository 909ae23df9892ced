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
#include "lmpc/systems.hpp"

#include "lmpc/shooting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lmpc {

LqrSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
  Matrix P = Q;
  for (int it = 0; it < 100000; ++it) {
    const Matrix BtP = B.transpose() * P;
    const Matrix gain = (R + BtP * B).ldlt().solve(BtP * A);
    Matrix next = Q + A.transpose() * P * A - A.transpose() * P * B * gain;
    next = 0.5 * (next + next.transpose()).eval();
    const double change = (next - P).lpNorm<Eigen::Infinity>();
    P = std::move(next);
    if (change <= 1e-14 * (1.0 + P.lpNorm<Eigen::Infinity>())) break;
  }
  const Matrix BtP = B.transpose() * P;
  LqrSolution out;
  out.K = (R + BtP * B).ldlt().solve(BtP * A);
  out.P = P;
  return out;
}

LmpcProblem make_clqr_problem(const ClqrInstance& inst) {
  const int n = static_cast<int>(inst.A.rows());
  const int m = static_cast<int>(inst.B.cols());
  LmpcProblem p;
  p.name = "clqr";
  p.model = DynamicsModel::linear(inst.A, inst.B);
  p.cost = StageCost::quadratic(Vector::Zero(n), m);
  p.constraints = ConstraintSet::unbounded(n, m);
  p.constraints.state_lower = Vector::Constant(n, -inst.state_bound);
  p.constraints.state_upper = Vector::Constant(n, inst.state_bound);
  p.constraints.input_lower = Vector::Constant(m, -inst.input_bound);
  p.constraints.input_upper = Vector::Constant(m, inst.input_bound);
  p.horizon = inst.horizon;
  p.start = inst.start;
  p.epsilon = inst.epsilon;
  p.gamma = inst.gamma;
  p.max_iterations = inst.max_iterations;
  return p;
}

IterationRecord clqr_seed_iteration0(const ClqrInstance& inst) {
  const LmpcProblem prob = make_clqr_problem(inst);
  const int n = prob.model.state_dim();
  const int m = prob.model.input_dim();
  const LqrSolution lqr = solve_dare(inst.A, inst.B, Matrix::Identity(n, n), Matrix::Identity(m, m));

  // Largest level set of x'Px inside the state box and the input bound under u = -Kx.
  const Matrix Pinv = lqr.P.inverse();
  double level = kInf;
  for (int i = 0; i < n; ++i) {
    level = std::min(level, inst.state_bound * inst.state_bound / Pinv(i, i));
  }
  for (int i = 0; i < m; ++i) {
    const double s = (lqr.K.row(i) * Pinv * lqr.K.row(i).transpose())(0, 0);
    level = std::min(level, inst.input_bound * inst.input_bound / s);
  }

  std::vector<Vector> xs{inst.start};
  std::vector<Vector> us;
  for (double u : inst.open_loop) {
    us.push_back(Vector::Constant(m, u));
    xs.push_back(prob.model(xs.back(), us.back()));
  }
  const Vector& sw = xs.back();
  if ((sw.transpose() * lqr.P * sw)(0, 0) > level) {
    throw NumericalError("seed prefix does not end inside the invariant LQR level set");
  }
  while (xs.back().lpNorm<Eigen::Infinity>() >= inst.seed_tolerance) {
    if (xs.size() > 10000) throw NumericalError("LQR seed did not settle");
    us.push_back(-lqr.K * xs.back());
    xs.push_back(prob.model(xs.back(), us.back()));
  }
  for (std::size_t k = 0; k < us.size(); ++k) {
    if (!check_feasible(prob.constraints, xs[k], us[k]).feasible) {
      throw NumericalError("seed violates the constraints");
    }
  }
  xs.back() = prob.cost.canonicalize(xs.back());
  return make_record(0, std::move(xs), std::move(us), prob.cost);
}

// ---------------------------------------------------------------------------

DynamicsModel dubins_model() {
  auto f = [](const Vector& x, const Vector& u) {
    Vector out(3);
    out(0) = x(0) + x(2) * std::cos(u(0));
    out(1) = x(1) + x(2) * std::sin(u(0));
    out(2) = x(2) + u(1);
    return out;
  };
  auto jac = [](const Vector& x, const Vector& u, Matrix& A, Matrix& B) {
    const double c = std::cos(u(0));
    const double s = std::sin(u(0));
    A = Matrix::Identity(3, 3);
    A(0, 2) = c;
    A(1, 2) = s;
    B = Matrix::Zero(3, 2);
    B(0, 0) = -x(2) * s;
    B(1, 0) = x(2) * c;
    B(2, 1) = 1.0;
  };
  return DynamicsModel(3, 2, f, jac);
}

bool planar_reachable(const Vector& x, const Vector& target, const std::vector<double>& gains) {
  const double tol = 1e-9;
  const double v0 = std::abs(x(2));
  const double vN = std::abs(target(2));
  const std::size_t steps = gains.size();
  // rest[i]: total gain available from step i to the end.
  std::vector<double> rest(steps + 1, 0.0);
  for (std::size_t i = steps; i-- > 0;) rest[i] = rest[i + 1] + gains[i];
  if (std::abs(target(2) - x(2)) > rest[0] + tol) return false;
  double reach = 0.0;
  double gained = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    reach += std::min(v0 + gained, vN + rest[i]);
    gained += gains[i];
  }
  const double dist = std::hypot(target(0) - x(0), target(1) - x(1));
  return dist <= reach + tol;
}

bool dubins_reachable(const Vector& x, const Vector& target, int steps, double saturation) {
  return planar_reachable(x, target, std::vector<double>(static_cast<std::size_t>(steps), saturation));
}

std::vector<PlanarGuess> planar_guesses(const Vector& x, const Vector& target, int steps) {
  const double dz = target(0) - x(0);
  const double dy = target(1) - x(1);
  const double dist = std::hypot(dz, dy);
  const double phi = dist > 0.0 ? std::atan2(dy, dz) : 0.0;
  const double v0 = x(2);
  const double vN = target(2);
  std::vector<double> bump(static_cast<std::size_t>(steps) + 1);
  double bump_sum = 0.0;
  for (int i = 0; i <= steps; ++i) {
    bump[static_cast<std::size_t>(i)] = std::min(i, steps - i);
    if (i < steps) bump_sum += bump[static_cast<std::size_t>(i)];
  }
  std::vector<PlanarGuess> out;
  for (double bend : {0.0, 0.3, -0.3, 0.6, -0.6}) {
    const double length = dist / std::cos(bend);
    std::vector<double> v(static_cast<std::size_t>(steps) + 1);
    double covered = 0.0;
    for (int i = 0; i <= steps; ++i) {
      v[static_cast<std::size_t>(i)] = v0 + (vN - v0) * i / steps;
      if (i < steps) covered += v[static_cast<std::size_t>(i)];
    }
    if (bump_sum > 0.0) {
      for (int i = 0; i <= steps; ++i) {
        v[static_cast<std::size_t>(i)] += (length - covered) * bump[static_cast<std::size_t>(i)] / bump_sum;
      }
    }
    PlanarGuess g;
    for (int i = 0; i < steps; ++i) {
      g.heading.push_back(2 * i < steps ? phi + bend : phi - bend);
      g.accel.push_back(v[static_cast<std::size_t>(i) + 1] - v[static_cast<std::size_t>(i)]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

FamilyGrid FamilyGrid::standard() {
  FamilyGrid g;
  for (int i = 1; i <= 12; ++i) g.thetas.push_back(0.05 * i);
  for (int i = 1; i <= 10; ++i) g.accels.push_back(0.1 * i);
  for (int n = 20; n <= 80; n += 5) g.lengths.push_back(n);
  return g;
}

double family_heading(const FamilyMember& f, int k) {
  return k < f.turn_steps ? f.theta : -f.theta;
}

double family_accel(const FamilyMember& f, int k) {
  if (k < f.accel_steps) return f.accel;
  if (k >= f.length - f.accel_steps) return -f.accel;
  return 0.0;
}

namespace {

// Sweeps the family on planar kinematics where an accel command a changes
// the speed by gain(a). Members that hit the obstacle are dropped; the rest
// are sorted by squared terminal mismatch (stable in enumeration order).
template <typename Gain>
std::vector<FamilyMember> sweep_family(const FamilyGrid& grid, const Vector& start,
                                       const Vector& target, const Ellipse& obstacle,
                                       Gain gain) {
  std::vector<FamilyMember> out;
  Vector p(3);
  for (int len : grid.lengths) {
    for (double theta : grid.thetas) {
      for (int ns = 2; ns <= len / 2; ++ns) {
        for (double accel : grid.accels) {
          for (int nb = 2; nb <= len / 3; ++nb) {
            FamilyMember f{theta, accel, ns, nb, len, kInf};
            p = start;
            bool clear = obstacle.level(p) >= 1.0;
            for (int k = 0; k < len && clear; ++k) {
              const double h = family_heading(f, k);
              const double v = p(2);
              p(0) += v * std::cos(h);
              p(1) += v * std::sin(h);
              p(2) += gain(family_accel(f, k));
              clear = obstacle.level(p) >= 1.0;
            }
            if (!clear) continue;
            f.mismatch = (p - target).squaredNorm();
            out.push_back(f);
          }
        }
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const FamilyMember& a, const FamilyMember& b) {
    return a.mismatch < b.mismatch;
  });
  return out;
}

constexpr int kPolishAttempts = 40;

}  // namespace

LmpcProblem make_dubins_problem(const DubinsInstance& inst) {
  LmpcProblem p;
  p.name = "dubins";
  p.model = dubins_model();
  p.cost = StageCost::indicator(inst.target, 2);
  p.constraints = ConstraintSet::unbounded(3, 2);
  p.constraints.input_lower(1) = -inst.saturation;
  p.constraints.input_upper(1) = inst.saturation;
  p.constraints.obstacles.push_back(inst.obstacle);
  p.horizon = inst.horizon;
  p.start = inst.start;
  p.epsilon = inst.epsilon;
  p.gamma = inst.gamma;
  p.max_iterations = inst.max_iterations;
  const double sat = inst.saturation;
  // Full throttle first: equal-cost plans then keep as much speed as the
  // candidate allows.
  p.first_input_preference = (Vector(2) << 0.0, sat).finished();
  p.first_input_preference_weights = (Vector(2) << 0.0, 1.0).finished();
  p.reachable = [sat](const Vector& x, const Vector& c, int k, double) {
    return dubins_reachable(x, c, k, sat);
  };
  p.guesses = [sat](const Vector& x, const Vector& c, int k) {
    std::vector<std::vector<Vector>> out;
    for (const PlanarGuess& g : planar_guesses(x, c, k)) {
      std::vector<Vector> us;
      for (int i = 0; i < k; ++i) {
        Vector u(2);
        u(0) = g.heading[static_cast<std::size_t>(i)];
        u(1) = std::clamp(g.accel[static_cast<std::size_t>(i)], -sat, sat);
        us.push_back(u);
      }
      out.push_back(std::move(us));
    }
    return out;
  };
  return p;
}

IterationRecord dubins_seed_iteration0(const DubinsInstance& inst) {
  const LmpcProblem prob = make_dubins_problem(inst);
  const std::vector<FamilyMember> family =
      sweep_family(FamilyGrid::standard(), inst.start, inst.target, inst.obstacle,
                   [&](double a) { return std::clamp(a, -inst.saturation, inst.saturation); });
  QpSolver qp;
  ShootingOptions opt;
  opt.feasibility_only = true;
  opt.max_iterations = 200;
  const int attempts = std::min<int>(kPolishAttempts, static_cast<int>(family.size()));
  for (int i = 0; i < attempts; ++i) {
    const FamilyMember& f = family[static_cast<std::size_t>(i)];
    std::vector<Vector> guess;
    for (int k = 0; k < f.length; ++k) {
      guess.push_back((Vector(2) << family_heading(f, k), family_accel(f, k)).finished());
    }
    ShootingProblem sp;
    sp.model = &prob.model;
    sp.cost = &prob.cost;
    sp.constraints = &prob.constraints;
    sp.x0 = inst.start;
    sp.target = inst.target;
    sp.horizon = f.length;
    const ShootingResult r = solve_shooting(sp, guess, qp, opt);
    if (!r.success) continue;
    std::vector<Vector> xs = r.states;
    bool ok = true;
    for (std::size_t k = 0; k < r.inputs.size(); ++k) {
      ok = ok && check_feasible(prob.constraints, xs[k], r.inputs[k]).feasible;
      ok = ok && !(k > 0 && prob.cost.in_target(xs[k]));
    }
    if (!ok) continue;
    xs.back() = prob.cost.canonicalize(xs.back());
    return make_record(0, std::move(xs), r.inputs, prob.cost);
  }
  throw NumericalError("no family member could be polished into a feasible seed");
}

// ---------------------------------------------------------------------------

double sigmoid(double a) { return a / std::sqrt(1.0 + a * a); }

namespace {

double sigmoid_slope(double a) { return 1.0 / std::pow(1.0 + a * a, 1.5); }

double inverse_sigmoid(double y, double limit) {
  const double c = std::clamp(y, -0.999999, 0.999999);
  return std::clamp(c / std::sqrt(1.0 - c * c), -limit, limit);
}

}  // namespace

Vector adaptive_dynamics_step(const Vector& x, const Vector& u) {
  const double s_next = x(3) + u(2);
  Vector out(5);
  out(0) = x(0) + x(2) * std::cos(u(1));
  out(1) = x(1) + x(2) * std::sin(u(1));
  out(2) = x(2) + s_next * sigmoid(u(0));
  out(3) = s_next;
  out(4) = x(4) - u(2);
  return out;
}

DynamicsModel adaptive_model() {
  auto jac = [](const Vector& x, const Vector& u, Matrix& A, Matrix& B) {
    const double c = std::cos(u(1));
    const double s = std::sin(u(1));
    const double sig = sigmoid(u(0));
    A = Matrix::Identity(5, 5);
    A(0, 2) = c;
    A(1, 2) = s;
    A(2, 3) = sig;
    B = Matrix::Zero(5, 3);
    B(0, 1) = -x(2) * s;
    B(1, 1) = x(2) * c;
    B(2, 0) = (x(3) + u(2)) * sigmoid_slope(u(0));
    B(2, 2) = sig;
    B(3, 2) = 1.0;
    B(4, 2) = -1.0;
  };
  return DynamicsModel(5, 3, adaptive_dynamics_step, jac);
}

Vector saturated_plant_step(const Vector& xyv, double heading, double accel_command,
                            double saturation) {
  Vector out(3);
  out(0) = xyv(0) + xyv(2) * std::cos(heading);
  out(1) = xyv(1) + xyv(2) * std::sin(heading);
  out(2) = xyv(2) + saturation * sigmoid(accel_command);
  return out;
}

double estimate_error(double meas_t, double pred_t, double meas_prev, double pred_prev,
                      double accel_prev, double e_prev) {
  const double sig = sigmoid(accel_prev);
  if (std::abs(sig) < 1e-9) return e_prev;
  return ((meas_t - pred_t) - (meas_prev - pred_prev)) / sig;
}

Vector adaptive_closed_loop_step(const AdaptiveDubinsInstance& inst, const Vector& x,
                                 const Vector& u) {
  const Vector predicted = adaptive_dynamics_step(x, u);
  const Vector measured = saturated_plant_step(x.head(3), u(1), u(0), inst.true_saturation);
  Vector out(5);
  out.head(3) = measured;
  out(3) = predicted(3);
  // The prediction restarts from the measured state each step, so the
  // previous residual is zero.
  out(4) = estimate_error(measured(2), predicted(2), x(2), x(2), u(0), predicted(4));
  return out;
}

namespace {

StageCost adaptive_cost(const AdaptiveDubinsInstance& inst) {
  Vector target(5);
  target << inst.target(0), inst.target(1), inst.target(2), inst.true_saturation, 0.0;
  StageCost c = StageCost::indicator(target, 3);
  c.target_coords = {0, 1, 2, 4};
  c.state_weights(4) = inst.error_weight;
  return c;
}

ConstraintSet adaptive_constraints(const AdaptiveDubinsInstance& inst) {
  ConstraintSet cs = ConstraintSet::unbounded(5, 3);
  cs.input_lower(0) = -inst.accel_command_limit;
  cs.input_upper(0) = inst.accel_command_limit;
  cs.obstacles.push_back(inst.obstacle);
  return cs;
}

}  // namespace

LmpcProblem make_adaptive_problem(const AdaptiveDubinsInstance& inst, double initial_error) {
  LmpcProblem p;
  p.name = "adaptive-dubins";
  p.model = adaptive_model();
  p.cost = adaptive_cost(inst);
  p.constraints = adaptive_constraints(inst);
  p.horizon = inst.horizon;
  p.start = Vector(5);
  p.start << inst.start_position, inst.initial_estimate, initial_error;
  p.epsilon = inst.epsilon;
  p.gamma = inst.gamma;
  p.max_iterations = inst.max_iterations;
  p.plant = [inst](const Vector& x, const Vector& u) {
    return adaptive_closed_loop_step(inst, x, u);
  };
  // The first estimate correction absorbs the whole current error.
  p.first_input_bounds = [](const Vector& x, Vector& lo, Vector& hi) {
    lo(2) = x(4);
    hi(2) = x(4);
  };
  const double limit = inst.accel_command_limit;
  p.first_input_preference = (Vector(3) << limit, 0.0, 0.0).finished();
  p.first_input_preference_weights = (Vector(3) << 1.0, 0.0, 0.0).finished();
  const double weight = inst.error_weight;
  p.reachable = [weight, limit](const Vector& x, const Vector& c, int k, double budget) {
    return adaptive_reachable(x, c, k, budget, weight, limit);
  };
  // Moving the estimate only changes e, so the preference pass keeps delta.
  p.preference_fixed_inputs = {2};
  p.guesses = [limit](const Vector& x, const Vector& c, int k) {
    std::vector<std::vector<Vector>> out;
    const double s1 = x(3) + x(4);
    for (const PlanarGuess& g : planar_guesses(x.head(3), c.head(3), k)) {
      std::vector<Vector> us;
      for (int i = 0; i < k; ++i) {
        Vector u = Vector::Zero(3);
        const double s = i == 0 ? s1 : c(3);
        u(0) = std::abs(s) > 1e-9 ? inverse_sigmoid(g.accel[static_cast<std::size_t>(i)] / s, limit)
                                  : 0.0;
        u(1) = g.heading[static_cast<std::size_t>(i)];
        if (i == 0) u(2) = x(4);
        if (i == 1) u(2) = c(3) - s1;
        us.push_back(u);
      }
      out.push_back(std::move(us));
    }
    return out;
  };
  return p;
}

bool adaptive_reachable(const Vector& x, const Vector& target, int steps, double budget,
                        double error_weight, double accel_command_limit) {
  if (steps <= 0) return (x - target).lpNorm<Eigen::Infinity>() <= 1e-8;
  if (!std::isfinite(budget) || error_weight <= 0.0) return true;
  const double total = x(3) + x(4);
  const double spread = std::sqrt(std::max(budget, 0.0) / error_weight);
  const double top = sigmoid(accel_command_limit);
  std::vector<double> gains(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    double s_hat;
    if (i == 0) {
      s_hat = std::abs(total);
    } else if (i == steps - 1) {
      s_hat = std::abs(total - target(4));
    } else {
      s_hat = std::abs(total) + spread;
    }
    gains[static_cast<std::size_t>(i)] = s_hat * top;
  }
  return planar_reachable(x.head(3), target.head(3), gains);
}

AdaptiveSeed adaptive_seed_iteration0(const AdaptiveDubinsInstance& inst) {
  const double s0 = inst.initial_estimate;
  const double limit = inst.accel_command_limit;
  Vector start3 = inst.start_position;
  const std::vector<FamilyMember> family =
      sweep_family(FamilyGrid::standard(), start3, inst.target, inst.obstacle,
                   [&](double a) { return s0 * sigmoid(std::clamp(a, -limit, limit)); });

  // Model with the estimate frozen: delta pinned to zero.
  LmpcProblem prob = make_adaptive_problem(inst, 0.0);
  ConstraintSet frozen = prob.constraints;
  frozen.input_lower(2) = 0.0;
  frozen.input_upper(2) = 0.0;
  StageCost reach = prob.cost;
  reach.state_weights.setZero();

  QpSolver qp;
  ShootingOptions opt;
  opt.feasibility_only = true;
  opt.max_iterations = 200;
  const int attempts = std::min<int>(kPolishAttempts, static_cast<int>(family.size()));
  for (int i = 0; i < attempts; ++i) {
    const FamilyMember& f = family[static_cast<std::size_t>(i)];
    std::vector<Vector> guess;
    for (int k = 0; k < f.length; ++k) {
      guess.push_back((Vector(3) << family_accel(f, k), family_heading(f, k), 0.0).finished());
    }
    ShootingProblem sp;
    sp.model = &prob.model;
    sp.cost = &reach;
    sp.constraints = &frozen;
    sp.x0 = Vector(5);
    sp.x0 << start3, s0, 0.0;
    sp.target = Vector(5);
    sp.target << inst.target, s0, 0.0;
    sp.horizon = f.length;
    const ShootingResult r = solve_shooting(sp, guess, qp, opt);
    if (!r.success) continue;

    // Drive the true plant with the same inputs to estimate the error.
    Vector meas = start3;
    Vector pred = start3;
    double e = 0.0;
    for (const Vector& u : r.inputs) {
      const Vector meas_next = saturated_plant_step(meas, u(1), u(0), inst.true_saturation);
      const Vector pred_next = saturated_plant_step(pred, u(1), u(0), s0);
      e = estimate_error(meas_next(2), pred_next(2), meas(2), pred(2), u(0), e);
      meas = meas_next;
      pred = pred_next;
    }

    std::vector<Vector> xs;
    for (const Vector& x : r.states) {
      Vector a = x;
      a(4) = e;
      xs.push_back(a);
    }
    std::vector<Vector> us = r.inputs;
    const Vector last = (Vector(3) << 0.0, 0.0, e).finished();
    xs.push_back(adaptive_dynamics_step(xs.back(), last));
    us.push_back(last);

    bool ok = true;
    for (std::size_t k = 0; k < us.size(); ++k) {
      ok = ok && check_feasible(prob.constraints, xs[k], us[k]).feasible;
      ok = ok && !prob.cost.in_target(xs[k]);
    }
    ok = ok && (xs.back().head(3) - inst.target).lpNorm<Eigen::Infinity>() <= kTargetTol;
    ok = ok && std::abs(xs.back()(4)) <= kTargetTol;
    if (!ok) continue;
    xs.back() = prob.cost.canonicalize(xs.back());

    AdaptiveSeed out;
    out.record = make_record(0, std::move(xs), std::move(us), prob.cost);
    out.member = f;
    out.error_estimate = e;
    out.safe_set.add_trajectory(out.record);
    return out;
  }
  throw NumericalError("initialization could not polish a family member");
}

double error_norm(const Trajectory& tr) {
  const std::vector<Vector> xs = tr.all_states();
  double total = 0.0;
  for (std::size_t k = 1; k < xs.size(); ++k) total += std::abs(xs[k](4));
  return total;
}

}  // namespace lmpc
