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
#include "lmpc/lmpc.hpp"
#include "lmpc/qp_solver.hpp"
#include "lmpc/systems.hpp"

#include <optional>
#include <random>
#include <vector>

namespace lmpc {

struct OracleSolution {
  std::vector<Vector> states;  // x_0..x_T
  std::vector<Vector> inputs;  // u_0..u_{T-1}
  double cost = kInf;
  int horizon = 0;
  // |cost(T) - cost(2T)|
  double saturation_gap = kInf;
  Trajectory trajectory() const;
};

// T-step condensed QP with the terminal state pinned to the origin, checked
// against the same problem at 2T.
OracleSolution clqr_oracle(const ClqrInstance& inst, int T = 100);

// Pointwise 2-norm distance; the shorter trajectory is padded with its terminal.
std::vector<double> deviation_profile(const Trajectory& a, const Trajectory& b);

// Exhaustive scan: minimum tail cost over every stored occurrence of x.
double brute_force_q(const std::vector<IterationRecord>& records, const Vector& x);

struct FixedEndpointReport {
  int windows = 0;
  // Largest input gap between the re-solved and the stored segment.
  double max_input_gap = 0.0;
  bool all_solved = true;
};

// Re-solves every window [t, t+T] of a linear-quadratic trajectory with both
// endpoints fixed, for each T in `horizons`.
FixedEndpointReport fixed_endpoint_check(const LmpcProblem& prob, const Trajectory& tr,
                                         const std::vector<int>& horizons);

struct PerturbationReport {
  int perturbations = 0;
  // Perturbed sequences projected back onto a feasible plan of the same length.
  int projected = 0;
  // Perturbed or truncated sequences that reached the target in fewer steps.
  int shorter = 0;
};

// Local optimality spot check for a minimum-time trajectory: every input
// coordinate is moved by +-delta, projected back to feasibility, and used
// to warm-start a search for a plan one step shorter.
PerturbationReport perturbation_check(const LmpcProblem& prob, const Trajectory& tr,
                                      double delta = 1e-3);

// Exhaustive active-set enumeration: for every subset of inequality rows,
// minimize on the face where those rows hold with equality and keep the
// best primal-feasible face minimizer. Empty when no face is feasible.
std::optional<double> qp_enumeration_oracle(const QuadraticProgram& qp);

// Random strictly convex QP; with force_feasible every inequality has
// nonnegative slack at a common point.
QuadraticProgram random_test_qp(std::mt19937& rng, int n, int n_eq, int n_in,
                                bool force_feasible);

}  // namespace lmpc
