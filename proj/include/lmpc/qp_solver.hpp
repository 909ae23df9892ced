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

#include <string>
#include <vector>

namespace lmpc {

// minimize 0.5 z'Hz + f'z + constant
// s.t.     A_eq z = b_eq,  A_in z <= b_in
struct QuadraticProgram {
  Matrix hessian;
  Vector linear;
  Matrix eq_matrix;
  Vector eq_rhs;
  Matrix ineq_matrix;
  Vector ineq_rhs;
  double constant = 0.0;

  int num_variables() const { return static_cast<int>(hessian.rows()); }
  // Fills empty constraint blocks with correctly shaped zero-row matrices.
  void normalize();
  void validate() const;
  double objective(const Vector& z) const;
};

enum class QpStatus { kOptimal, kInfeasible, kIterationLimit };

const char* to_string(QpStatus s);

struct KktResiduals {
  double stationarity = 0.0;
  double primal_equality = 0.0;
  double primal_inequality = 0.0;
  double complementarity = 0.0;
  double dual_infeasibility = 0.0;
  double max() const;
};

struct QpSolution {
  QpStatus status = QpStatus::kInfeasible;
  Vector z;
  Vector eq_multipliers;
  // One entry per inequality row; zero for inactive rows.
  Vector ineq_multipliers;
  std::vector<int> active_set;
  double value = kInf;
  int iterations = 0;
  KktResiduals residuals;
  // For infeasible problems: the row that could not be added.
  std::string diagnostic;

  bool optimal() const { return status == QpStatus::kOptimal; }
};

// Scaled residuals of the KKT system at (z, multipliers).
KktResiduals kkt_residuals(const QuadraticProgram& qp, const Vector& z,
                           const Vector& eq_multipliers,
                           const Vector& ineq_multipliers);

// Goldfarb-Idnani dual active-set method. Equalities are removed by a
// null-space reduction; the result is polished on the final active set.
class QpSolver {
 public:
  QpSolution solve(const QuadraticProgram& qp);

 private:
  bool add_constraint(int q, const Vector& d);
  void delete_constraint(int q, int l);

  int n_ = 0;
  Matrix J_;
  Matrix R_;
  double r_norm_ = 1.0;
};

QpSolution solve_qp(const QuadraticProgram& qp);

// Stacked-state prediction x = Phi x0 + Gamma u over k = 0..N.
struct PredictionMap {
  Matrix phi;
  Matrix gamma;
};

PredictionMap build_prediction(const LinearForm& lin, int horizon);

// Inputs u_0..u_{N-1} as decision vector; x_N pinned to x_terminal; state
// boxes on x_1..x_{N-1}; value equals the stage-cost sum over k = 0..N-1.
QuadraticProgram condense_mpc(const DynamicsModel& model, const StageCost& cost,
                              int horizon, const Vector& x0,
                              const Vector& x_terminal, const ConstraintSet& cs);

}  // namespace lmpc
