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
#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmpc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Absolute tolerance for box and obstacle constraints.
inline constexpr double kFeasibilityTol = 1e-8;
// Infinity-norm tolerance for "state equals target" under the indicator cost.
inline constexpr double kTargetTol = 1e-6;

// Bad dimensions, invalid constants, malformed configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The controller could not produce any feasible input.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LinearForm {
  Matrix A;
  Matrix B;
};

class DynamicsModel {
 public:
  using Map = std::function<Vector(const Vector&, const Vector&)>;
  // Fills the state and input Jacobians at (x, u).
  using JacobianMap =
      std::function<void(const Vector&, const Vector&, Matrix&, Matrix&)>;

  DynamicsModel() = default;
  DynamicsModel(int state_dim, int input_dim, Map f, JacobianMap jacobian = {});

  static DynamicsModel linear(const Matrix& A, const Matrix& B);

  int state_dim() const { return n_; }
  int input_dim() const { return m_; }
  bool is_linear() const { return linear_.has_value(); }
  const LinearForm& linear_form() const;

  Vector operator()(const Vector& x, const Vector& u) const;

  // Analytic when provided, central differences otherwise.
  void jacobians(const Vector& x, const Vector& u, Matrix& A, Matrix& B) const;

 private:
  int n_ = 0;
  int m_ = 0;
  Map f_;
  JacobianMap jacobian_;
  std::optional<LinearForm> linear_;
};

Vector step(const DynamicsModel& model, const Vector& x, const Vector& u);

// h(x,u) = sum_i q_i (x_i - xF_i)^2 + sum_i r_i u_i^2
//          + indicator_weight * [x not in target]
// "In target" compares only target_coords (all coordinates when empty)
// within kTargetTol in the infinity norm.
struct StageCost {
  Vector target;
  Vector state_weights;
  Vector input_weights;
  double indicator_weight = 0.0;
  std::vector<int> target_coords;

  static StageCost quadratic(const Vector& target, int input_dim);
  static StageCost indicator(const Vector& target, int input_dim);

  bool is_indicator() const { return indicator_weight > 0.0; }
  bool in_target(const Vector& x) const;
  // Copy of x with the compared coordinates replaced by the target values.
  Vector canonicalize(const Vector& x) const;
  double smooth_state(const Vector& x) const;
  double smooth(const Vector& x, const Vector& u) const;
  double operator()(const Vector& x, const Vector& u) const;
  void validate(int state_dim, int input_dim) const;
};

double eval_stage_cost(const StageCost& cost, const Vector& x, const Vector& u);

// Keeps (x[coord_a]-center_a)^2/semi_a^2 + (x[coord_b]-center_b)^2/semi_b^2 >= 1.
struct Ellipse {
  double center_a = 0.0;
  double center_b = 0.0;
  double semi_a = 1.0;
  double semi_b = 1.0;
  int coord_a = 0;
  int coord_b = 1;

  double level(const Vector& x) const;
  // Gradient of level() with respect to the full state.
  Vector gradient(const Vector& x) const;
};

struct ConstraintSet {
  Vector state_lower;
  Vector state_upper;
  Vector input_lower;
  Vector input_upper;
  std::vector<Ellipse> obstacles;

  static ConstraintSet unbounded(int state_dim, int input_dim);
  void validate(int state_dim, int input_dim) const;
};

struct FeasibilityReport {
  bool feasible = true;
  double max_violation = 0.0;
  std::vector<std::string> violations;
};

FeasibilityReport check_feasible(const ConstraintSet& cs, const Vector& x,
                                 const Vector& u);
FeasibilityReport check_state(const ConstraintSet& cs, const Vector& x);

struct Trajectory {
  int iteration = 0;
  std::vector<Vector> states;  // x_0 .. x_{T-1}
  std::vector<Vector> inputs;  // u_0 .. u_{T-1}
  Vector terminal;             // x_T
  std::vector<double> stage_costs;

  std::size_t steps() const { return inputs.size(); }
  // x_0 .. x_T.
  std::vector<Vector> all_states() const;
};

struct StepDiagnostics {
  double lmpc_cost = 0.0;
  int candidate_iteration = -1;
  int candidate_time = -1;
  std::size_t candidates_solved = 0;
  std::size_t restriction_size = 0;
};

struct IterationRecord {
  Trajectory trajectory;
  double cost = 0.0;
  std::size_t termination_time = 0;
  bool converged_to_target = false;
  // One entry per applied input, plus the terminating solve when present.
  std::vector<StepDiagnostics> diagnostics;
};

double sum_stage_costs(const std::vector<double>& stage_costs);

// Builds a record from states x_0..x_T and inputs u_0..u_{T-1}.
IterationRecord make_record(int iteration, std::vector<Vector> states,
                            std::vector<Vector> inputs, const StageCost& cost);

std::vector<Vector> simulate(const DynamicsModel::Map& f, const Vector& x0,
                             const std::vector<Vector>& inputs);

bool all_finite(const Vector& v);

}  // namespace lmpc
