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

#include "lmpc/core.hpp"
#include "lmpc/qp_solver.hpp"

#include <vector>

namespace lmpc {

// Fixed-terminal reachability over the input sequence u_0..u_{N-1}:
//   minimize   sum_k smooth stage cost
//   subject to x_N = target, obstacles and state boxes on x_1..x_{N-1},
//              per-step input bounds.
struct ShootingProblem {
  const DynamicsModel* model = nullptr;
  const StageCost* cost = nullptr;
  const ConstraintSet* constraints = nullptr;
  Vector x0;
  Vector target;
  int horizon = 0;
  // Per-step bounds; steps beyond these vectors use the constraint set.
  std::vector<Vector> input_lower;
  std::vector<Vector> input_upper;
  // Optional least-squares pull of u_0 toward a preferred input; empty
  // weights disable it.
  Vector preferred_first_input;
  Vector preference_weights;

  Vector lower(int k) const;
  Vector upper(int k) const;
};

struct ShootingOptions {
  int max_iterations = 60;
  // Accepted when terminal mismatch and constraint excess are below this.
  double tolerance = 1e-10;
  double initial_radius = 2.0;
  double max_radius = 50.0;
  // Stop at the first feasible iterate instead of also descending the cost.
  bool feasibility_only = false;
};

struct ShootingResult {
  bool success = false;
  std::vector<Vector> inputs;
  std::vector<Vector> states;  // x_0..x_N
  double smooth_cost = 0.0;
  double violation = kInf;
  int iterations = 0;
};

// Terminal mismatch and constraint excess of an input sequence (inf-norm).
double shooting_violation(const ShootingProblem& prob, const std::vector<Vector>& states);

// Trust-region SQP with Gauss-Newton Hessian and an elastic fallback
// when the linearized constraints are inconsistent.
ShootingResult solve_shooting(const ShootingProblem& prob,
                              const std::vector<Vector>& guess, QpSolver& qp,
                              const ShootingOptions& options = {});

}  // namespace lmpc
