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
#include "lmpc/core.hpp"

#include <cmath>
#include <sstream>

namespace lmpc {

namespace {

void require_dim(const Vector& v, int dim, const char* what) {
  if (v.size() != dim) {
    std::ostringstream os;
    os << what << " has dimension " << v.size() << ", expected " << dim;
    throw ConfigError(os.str());
  }
}

}  // namespace

bool all_finite(const Vector& v) { return v.allFinite(); }

DynamicsModel::DynamicsModel(int state_dim, int input_dim, Map f,
                             JacobianMap jacobian)
    : n_(state_dim), m_(input_dim), f_(std::move(f)),
      jacobian_(std::move(jacobian)) {
  if (n_ <= 0 || m_ <= 0) throw ConfigError("dynamics dimensions must be positive");
  if (!f_) throw ConfigError("dynamics map is empty");
}

DynamicsModel DynamicsModel::linear(const Matrix& A, const Matrix& B) {
  if (A.rows() != A.cols() || B.rows() != A.rows()) {
    throw ConfigError("linear dynamics: A must be n x n and B must be n x m");
  }
  const Matrix a = A;
  const Matrix b = B;
  DynamicsModel model(
      static_cast<int>(A.rows()), static_cast<int>(B.cols()),
      [a, b](const Vector& x, const Vector& u) -> Vector { return a * x + b * u; },
      [a, b](const Vector&, const Vector&, Matrix& ja, Matrix& jb) {
        ja = a;
        jb = b;
      });
  model.linear_ = LinearForm{A, B};
  return model;
}

const LinearForm& DynamicsModel::linear_form() const {
  if (!linear_) throw ConfigError("dynamics model has no linear form");
  return *linear_;
}

Vector DynamicsModel::operator()(const Vector& x, const Vector& u) const {
  require_dim(x, n_, "state");
  require_dim(u, m_, "input");
  return f_(x, u);
}

void DynamicsModel::jacobians(const Vector& x, const Vector& u, Matrix& A,
                              Matrix& B) const {
  if (jacobian_) {
    jacobian_(x, u, A, B);
    return;
  }
  A.resize(n_, n_);
  B.resize(n_, m_);
  Vector xp = x;
  Vector up = u;
  for (int i = 0; i < n_; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + h;
    const Vector fp = f_(xp, u);
    xp(i) = x(i) - h;
    const Vector fm = f_(xp, u);
    xp(i) = x(i);
    A.col(i) = (fp - fm) / (2.0 * h);
  }
  for (int i = 0; i < m_; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(u(i)));
    up(i) = u(i) + h;
    const Vector fp = f_(x, up);
    up(i) = u(i) - h;
    const Vector fm = f_(x, up);
    up(i) = u(i);
    B.col(i) = (fp - fm) / (2.0 * h);
  }
}

Vector step(const DynamicsModel& model, const Vector& x, const Vector& u) {
  return model(x, u);
}

StageCost StageCost::quadratic(const Vector& target, int input_dim) {
  StageCost c;
  c.target = target;
  c.state_weights = Vector::Ones(target.size());
  c.input_weights = Vector::Ones(input_dim);
  return c;
}

StageCost StageCost::indicator(const Vector& target, int input_dim) {
  StageCost c;
  c.target = target;
  c.state_weights = Vector::Zero(target.size());
  c.input_weights = Vector::Zero(input_dim);
  c.indicator_weight = 1.0;
  return c;
}

bool StageCost::in_target(const Vector& x) const {
  if (target_coords.empty()) {
    return (x - target).lpNorm<Eigen::Infinity>() <= kTargetTol;
  }
  for (int i : target_coords) {
    if (std::abs(x(i) - target(i)) > kTargetTol) return false;
  }
  return true;
}

Vector StageCost::canonicalize(const Vector& x) const {
  if (target_coords.empty()) return target;
  Vector out = x;
  for (int i : target_coords) out(i) = target(i);
  return out;
}

double StageCost::smooth_state(const Vector& x) const {
  double s = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    if (state_weights(i) != 0.0) {
      const double d = x(i) - target(i);
      s += state_weights(i) * d * d;
    }
  }
  return s;
}

double StageCost::smooth(const Vector& x, const Vector& u) const {
  double s = smooth_state(x);
  for (int i = 0; i < u.size(); ++i) {
    if (input_weights(i) != 0.0) s += input_weights(i) * u(i) * u(i);
  }
  return s;
}

double StageCost::operator()(const Vector& x, const Vector& u) const {
  double s = smooth(x, u);
  if (is_indicator() && !in_target(x)) s += indicator_weight;
  return s;
}

void StageCost::validate(int state_dim, int input_dim) const {
  require_dim(target, state_dim, "cost target");
  require_dim(state_weights, state_dim, "state weights");
  require_dim(input_weights, input_dim, "input weights");
  if ((state_weights.array() < 0.0).any() || (input_weights.array() < 0.0).any() ||
      indicator_weight < 0.0) {
    throw ConfigError("stage cost weights must be nonnegative");
  }
  for (int i : target_coords) {
    if (i < 0 || i >= state_dim) throw ConfigError("target coordinate out of range");
  }
}

double eval_stage_cost(const StageCost& cost, const Vector& x, const Vector& u) {
  require_dim(x, static_cast<int>(cost.target.size()), "state");
  require_dim(u, static_cast<int>(cost.input_weights.size()), "input");
  return cost(x, u);
}

double Ellipse::level(const Vector& x) const {
  const double da = (x(coord_a) - center_a) / semi_a;
  const double db = (x(coord_b) - center_b) / semi_b;
  return da * da + db * db;
}

Vector Ellipse::gradient(const Vector& x) const {
  Vector g = Vector::Zero(x.size());
  g(coord_a) = 2.0 * (x(coord_a) - center_a) / (semi_a * semi_a);
  g(coord_b) = 2.0 * (x(coord_b) - center_b) / (semi_b * semi_b);
  return g;
}

ConstraintSet ConstraintSet::unbounded(int state_dim, int input_dim) {
  ConstraintSet cs;
  cs.state_lower = Vector::Constant(state_dim, -kInf);
  cs.state_upper = Vector::Constant(state_dim, kInf);
  cs.input_lower = Vector::Constant(input_dim, -kInf);
  cs.input_upper = Vector::Constant(input_dim, kInf);
  return cs;
}

void ConstraintSet::validate(int state_dim, int input_dim) const {
  require_dim(state_lower, state_dim, "state lower bound");
  require_dim(state_upper, state_dim, "state upper bound");
  require_dim(input_lower, input_dim, "input lower bound");
  require_dim(input_upper, input_dim, "input upper bound");
  if ((state_lower.array() > state_upper.array()).any() ||
      (input_lower.array() > input_upper.array()).any()) {
    throw ConfigError("constraint lower bound exceeds upper bound");
  }
  for (const auto& e : obstacles) {
    if (!(e.semi_a > 0.0) || !(e.semi_b > 0.0)) {
      throw ConfigError("ellipse semi-axes must be strictly positive");
    }
    if (e.coord_a < 0 || e.coord_a >= state_dim || e.coord_b < 0 ||
        e.coord_b >= state_dim || e.coord_a == e.coord_b) {
      throw ConfigError("ellipse coordinates out of range");
    }
  }
}

namespace {

void check_box(const Vector& v, const Vector& lo, const Vector& hi,
               const char* name, FeasibilityReport& rep) {
  for (int i = 0; i < v.size(); ++i) {
    const double excess = std::max(lo(i) - v(i), v(i) - hi(i));
    if (!std::isfinite(v(i)) || excess > kFeasibilityTol) {
      rep.feasible = false;
      std::ostringstream os;
      os << name << "[" << i << "] = " << v(i) << " outside [" << lo(i) << ", "
         << hi(i) << "]";
      rep.violations.push_back(os.str());
    }
    if (excess > rep.max_violation) rep.max_violation = excess;
  }
}

}  // namespace

FeasibilityReport check_state(const ConstraintSet& cs, const Vector& x) {
  FeasibilityReport rep;
  check_box(x, cs.state_lower, cs.state_upper, "x", rep);
  for (std::size_t k = 0; k < cs.obstacles.size(); ++k) {
    const double excess = 1.0 - cs.obstacles[k].level(x);
    if (excess > kFeasibilityTol) {
      rep.feasible = false;
      std::ostringstream os;
      os << "state inside ellipse " << k << " (level " << 1.0 - excess << ")";
      rep.violations.push_back(os.str());
    }
    if (excess > rep.max_violation) rep.max_violation = excess;
  }
  return rep;
}

FeasibilityReport check_feasible(const ConstraintSet& cs, const Vector& x,
                                 const Vector& u) {
  FeasibilityReport rep = check_state(cs, x);
  check_box(u, cs.input_lower, cs.input_upper, "u", rep);
  return rep;
}

std::vector<Vector> Trajectory::all_states() const {
  std::vector<Vector> out = states;
  out.push_back(terminal);
  return out;
}

double sum_stage_costs(const std::vector<double>& stage_costs) {
  double s = 0.0;
  for (double c : stage_costs) s += c;
  return s;
}

IterationRecord make_record(int iteration, std::vector<Vector> states,
                            std::vector<Vector> inputs, const StageCost& cost) {
  if (states.size() != inputs.size() + 1) {
    throw ConfigError("trajectory needs one more state than inputs");
  }
  IterationRecord rec;
  rec.trajectory.iteration = iteration;
  rec.trajectory.terminal = states.back();
  states.pop_back();
  rec.trajectory.states = std::move(states);
  rec.trajectory.inputs = std::move(inputs);
  for (std::size_t t = 0; t < rec.trajectory.inputs.size(); ++t) {
    rec.trajectory.stage_costs.push_back(
        cost(rec.trajectory.states[t], rec.trajectory.inputs[t]));
  }
  rec.cost = sum_stage_costs(rec.trajectory.stage_costs);
  rec.termination_time = rec.trajectory.inputs.size();
  rec.converged_to_target = cost.in_target(rec.trajectory.terminal);
  return rec;
}

std::vector<Vector> simulate(const DynamicsModel::Map& f, const Vector& x0,
                             const std::vector<Vector>& inputs) {
  std::vector<Vector> xs;
  xs.reserve(inputs.size() + 1);
  xs.push_back(x0);
  for (const auto& u : inputs) xs.push_back(f(xs.back(), u));
  return xs;
}

}  // namespace lmpc
