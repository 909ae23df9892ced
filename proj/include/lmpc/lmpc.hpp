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
#include "lmpc/safe_set.hpp"

#include <functional>
#include <string>
#include <vector>

namespace lmpc {

enum class Mode { kEnumeration, kConvexRelaxation };

const char* to_string(Mode mode);
Mode parse_mode(const std::string& s);

struct LmpcProblem {
  std::string name;
  DynamicsModel model;
  StageCost cost;
  ConstraintSet constraints;
  int horizon = 4;
  Vector start;
  double epsilon = 1e-8;
  double gamma = 1e-10;
  int max_iterations = 50;
  int max_steps = 1000;
  Mode mode = Mode::kEnumeration;

  // Closed-loop transition applied to the realized state. Defaults to the
  // prediction model; the adaptive example plugs in plant plus estimator.
  std::function<Vector(const Vector& x, const Vector& u)> plant;
  // Tightens the bounds of the first predicted input at state x.
  std::function<void(const Vector& x, Vector& lower, Vector& upper)> first_input_bounds;
  // After the best candidate is chosen, its plan is re-solved pulling u_0
  // toward this input (weighted least squares) with the listed input
  // coordinates held at their values; the re-solved plan replaces the
  // original only if its cost is not higher. Empty weights disable this.
  Vector first_input_preference;
  Vector first_input_preference_weights;
  std::vector<int> preference_fixed_inputs;
  // Extra initial guesses for steering x to target in the given steps.
  std::function<std::vector<std::vector<Vector>>(const Vector& x, const Vector& target,
                                                 int steps)>
      guesses;
  // Cheap necessary condition for reaching target from x in the given steps
  // with at most `budget` of smooth stage cost beyond the state cost at x
  // (kInf when no incumbent is known).
  std::function<bool(const Vector& x, const Vector& target, int steps, double budget)>
      reachable;

  const Vector& target() const { return cost.target; }
  bool uses_linear_path() const { return model.is_linear() && !cost.is_indicator(); }
  Vector apply(const Vector& x, const Vector& u) const;
  void validate() const;
};

struct LmpcOptions {
  // Restrict candidates to the restriction set and skip by lower bound.
  bool prune = true;
  // Worker threads for candidate solves; 0 picks the hardware count.
  int threads = 1;
};

struct SubproblemSolution {
  Candidate candidate;
  std::vector<Vector> inputs;  // u_0..u_{N-1}
  std::vector<Vector> states;  // x_0..x_N
  double stage_cost = kInf;
  double total_cost = kInf;
  bool feasible = false;
  // Step at which the plan reaches the candidate; later inputs are zero.
  int arrival = 0;
  std::string status;
};

struct StepResult {
  Vector input;
  double cost = kInf;
  Candidate candidate;
  std::size_t candidates_solved = 0;
  std::size_t restriction_size = 0;
  SubproblemSolution solution;
  // Convex-combination weights over SampledSafeSet::candidates() (relaxed mode).
  Vector weights;
};

SubproblemSolution solve_candidate_linear(const LmpcProblem& prob, const Vector& x,
                                          const Candidate& candidate, QpSolver& qp);

// Guesses are tried in order; each is a sequence of length N or shorter.
SubproblemSolution solve_candidate_nonlinear(const LmpcProblem& prob, const Vector& x,
                                             const Candidate& candidate,
                                             const std::vector<std::vector<Vector>>& warm,
                                             QpSolver& qp, double budget = kInf);

// Re-solves a feasible plan with the problem's first-input preference.
SubproblemSolution apply_preference(const LmpcProblem& prob, const Vector& x,
                                    const SubproblemSolution& plan, QpSolver& qp);

// Recursive-feasibility fallback: previous plan shifted by one step and
// extended with the stored input at the previous candidate.
std::vector<Vector> shifted_inputs(const SampledSafeSet& ss, const StepResult& prev);

StepResult solve_lmpc_step(const LmpcProblem& prob, const SampledSafeSet& ss,
                           const Vector& x, const StepResult* prev,
                           const LmpcOptions& options = {});

// Lower convex envelope of the points (x_i, q_i) evaluated at z:
//   min q'w  s.t.  X w = z, sum(w) = 1, w >= 0.
// When feasible, `support` (a, b) satisfies a'x_i + b <= q_i for every i
// with equality in value at z. When infeasible, `support` separates z from
// the hull: a'x_i + b <= 0 for every i and a'z + b > 0.
struct BarycentricValue {
  bool feasible = false;
  double value = kInf;
  Vector weights;
  Vector slope;
  double offset = 0.0;
};

BarycentricValue barycentric_value(const Matrix& X, const Vector& q, const Vector& z);

// Convex-hull relaxation of the terminal constraint and cost, solved
// exactly by cutting planes on the barycentric value function.
StepResult solve_relaxed_step(const LmpcProblem& prob, const SampledSafeSet& ss,
                              const Vector& x);

struct IterationRun {
  IterationRecord record;
  std::vector<StepResult> steps;  // includes the terminating solve
};

IterationRun run_iteration(const LmpcProblem& prob, const SampledSafeSet& ss,
                           int iteration, const LmpcOptions& options = {});

// Max pointwise 2-norm gap; the shorter trajectory is padded with its terminal.
double trajectory_gap(const Trajectory& a, const Trajectory& b);

struct Campaign {
  std::vector<IterationRecord> records;  // records[0] is the seed
  std::vector<std::vector<StepResult>> steps;  // steps[j] for j >= 1; steps[0] empty
  std::vector<std::size_t> safe_set_sizes;     // size after adding records[j]
  SampledSafeSet safe_set;
  bool converged = false;
  double last_gap = kInf;
};

using IterationCallback = std::function<void(const Campaign&)>;

Campaign run_until_convergence(const LmpcProblem& prob, const IterationRecord& seed,
                               const LmpcOptions& options = {},
                               const IterationCallback& on_iteration = {});

}  // namespace lmpc
