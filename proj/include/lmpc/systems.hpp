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
#include "lmpc/safe_set.hpp"

#include <vector>

namespace lmpc {

// ---------------------------------------------------------------------------
// Constrained double integrator.

struct ClqrInstance {
  Matrix A = (Matrix(2, 2) << 1.0, 1.0, 0.0, 1.0).finished();
  Matrix B = (Matrix(2, 1) << 0.0, 1.0).finished();
  Vector start = (Vector(2) << -3.95, -0.05).finished();
  double state_bound = 4.0;
  double input_bound = 1.0;
  int horizon = 4;
  double epsilon = 1e-8;
  double gamma = 1e-10;
  int max_iterations = 50;
  // Open-loop prefix applied before the LQR feedback takes over.
  std::vector<double> open_loop = {1.0, 1.0, -1.0, -1.0};
  // The seed stops once the state is this close to the origin.
  double seed_tolerance = 1e-9;
};

struct LqrSolution {
  Matrix P;
  Matrix K;  // u = -K x
};

// Fixed-point iteration on the discrete algebraic Riccati equation.
LqrSolution solve_dare(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R);

LmpcProblem make_clqr_problem(const ClqrInstance& inst);
IterationRecord clqr_seed_iteration0(const ClqrInstance& inst);

// ---------------------------------------------------------------------------
// Minimum-time car with an elliptic obstacle. State (z, y, v), input (theta, a).

struct DubinsInstance {
  Vector start = Vector::Zero(3);
  Vector target = (Vector(3) << 54.0, 0.0, 0.0).finished();
  double saturation = 1.0;
  Ellipse obstacle{27.0, 0.0, 8.0, 6.0, 0, 1};
  int horizon = 4;
  double epsilon = 1e-8;
  double gamma = 1e-10;
  int max_iterations = 50;
};

DynamicsModel dubins_model();
LmpcProblem make_dubins_problem(const DubinsInstance& inst);
IterationRecord dubins_seed_iteration0(const DubinsInstance& inst);

// Necessary condition on speed change and travel distance for planar
// kinematics whose speed changes by at most gains[i] at step i.
bool planar_reachable(const Vector& x, const Vector& target, const std::vector<double>& gains);
bool dubins_reachable(const Vector& x, const Vector& target, int steps, double saturation);

// Straight and bent headings with a trapezoid-like speed profile; returns
// (theta, a) accelerations before clipping to the saturation.
struct PlanarGuess {
  std::vector<double> heading;
  std::vector<double> accel;
};
std::vector<PlanarGuess> planar_guesses(const Vector& x, const Vector& target, int steps);

// ---------------------------------------------------------------------------
// Input family swept by the seed constructions: heading +theta for the
// first turn_steps steps then -theta; acceleration +accel for accel_steps
// steps, zero, then -accel for the final accel_steps steps.

struct FamilyMember {
  double theta = 0.0;
  double accel = 0.0;
  int turn_steps = 0;
  int accel_steps = 0;
  int length = 0;
  double mismatch = kInf;
};

struct FamilyGrid {
  std::vector<double> thetas;
  std::vector<double> accels;
  std::vector<int> lengths;
  static FamilyGrid standard();
};

double family_heading(const FamilyMember& f, int k);
double family_accel(const FamilyMember& f, int k);

// ---------------------------------------------------------------------------
// Unknown saturation. Augmented state (z, y, v, s_hat, e), input (a, theta, delta).

struct AdaptiveDubinsInstance {
  Vector start_position = Vector::Zero(3);
  Vector target = (Vector(3) << 54.0, 0.0, 0.0).finished();
  double true_saturation = 1.0;
  double initial_estimate = 0.25;
  double error_weight = 10.0;
  // Bound on the sigmoid argument.
  double accel_command_limit = 10.0;
  Ellipse obstacle{27.0, 0.0, 8.0, 6.0, 0, 1};
  int horizon = 4;
  double epsilon = 1e-8;
  double gamma = 1e-10;
  int max_iterations = 50;
};

double sigmoid(double a);

DynamicsModel adaptive_model();
Vector adaptive_dynamics_step(const Vector& x, const Vector& u);

// True plant with the given saturation acting on (z, y, v).
Vector saturated_plant_step(const Vector& xyv, double heading, double accel_command,
                            double saturation);

// Error estimate from the change in measured-minus-predicted velocity;
// falls back to e_prev when the sigmoid term is below 1e-9 in magnitude.
double estimate_error(double meas_t, double pred_t, double meas_prev, double pred_prev,
                      double accel_prev, double e_prev);

// One closed-loop step: plant on (z, y, v), estimate update on (s_hat, e).
Vector adaptive_closed_loop_step(const AdaptiveDubinsInstance& inst, const Vector& x,
                                 const Vector& u);

struct AdaptiveSeed {
  IterationRecord record;
  SampledSafeSet safe_set;
  FamilyMember member;
  double error_estimate = 0.0;
};

AdaptiveSeed adaptive_seed_iteration0(const AdaptiveDubinsInstance& inst);

// Along the model s_hat + e is constant, so a smooth-cost budget B bounds
// |e_k| by sqrt(B / error_weight) and with it the speed gain per step.
bool adaptive_reachable(const Vector& x, const Vector& target, int steps, double budget,
                        double error_weight, double accel_command_limit);

// Start state uses the error estimate produced by the initialization.
LmpcProblem make_adaptive_problem(const AdaptiveDubinsInstance& inst, double initial_error);

// Sum of |e_k| over k >= 1 of a trajectory of augmented states.
double error_norm(const Trajectory& tr);

}  // namespace lmpc
