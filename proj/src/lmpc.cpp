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
#include "lmpc/lmpc.hpp"

#include "lmpc/shooting.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>

namespace lmpc {

namespace {

constexpr double kTerminalMatchTol = 1e-8;

}  // namespace

const char* to_string(Mode mode) {
  return mode == Mode::kEnumeration ? "enumeration" : "convex-relaxation";
}

Mode parse_mode(const std::string& s) {
  if (s == "enumeration") return Mode::kEnumeration;
  if (s == "convex-relaxation") return Mode::kConvexRelaxation;
  throw ConfigError("unknown mode '" + s + "'");
}

Vector LmpcProblem::apply(const Vector& x, const Vector& u) const {
  return plant ? plant(x, u) : model(x, u);
}

void LmpcProblem::validate() const {
  const int n = model.state_dim();
  const int m = model.input_dim();
  if (n <= 0) throw ConfigError("problem has no dynamics");
  if (horizon < 2) throw ConfigError("horizon must be at least 2");
  cost.validate(n, m);
  constraints.validate(n, m);
  if (start.size() != n) throw ConfigError("start state has wrong dimension");
  if (!all_finite(start)) throw ConfigError("start state is not finite");
  if (!(epsilon >= 0.0)) throw ConfigError("epsilon must be nonnegative");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (max_iterations < 1) throw ConfigError("iteration cap must be positive");
  const Vector still = model(target(), Vector::Zero(m));
  if ((still - target()).lpNorm<Eigen::Infinity>() > 1e-12) {
    throw ConfigError("target is not an equilibrium of the dynamics");
  }
  const FeasibilityReport rep = check_state(constraints, start);
  if (!rep.feasible) throw ConfigError("start state violates the constraints");
  if (mode == Mode::kConvexRelaxation && !uses_linear_path()) {
    throw ConfigError("convex relaxation needs linear dynamics and a quadratic cost");
  }
}

namespace {

bool plan_is_valid(const LmpcProblem& prob, const std::vector<Vector>& us,
                   const std::vector<Vector>& xs, const Vector& terminal,
                   const Vector& lo0, const Vector& hi0, std::string& why) {
  const int N = static_cast<int>(us.size());
  if ((xs.back() - terminal).lpNorm<Eigen::Infinity>() > kTerminalMatchTol) {
    why = "terminal mismatch";
    return false;
  }
  for (int k = 0; k < N; ++k) {
    const Vector& u = us[static_cast<std::size_t>(k)];
    const Vector lo = k == 0 ? lo0 : prob.constraints.input_lower;
    const Vector hi = k == 0 ? hi0 : prob.constraints.input_upper;
    for (int i = 0; i < u.size(); ++i) {
      if (!(u(i) >= lo(i) - kFeasibilityTol && u(i) <= hi(i) + kFeasibilityTol)) {
        why = "input bound";
        return false;
      }
    }
    if (k >= 1 && !check_state(prob.constraints, xs[static_cast<std::size_t>(k)]).feasible) {
      why = "state constraint";
      return false;
    }
  }
  return true;
}

void fill_costs(const LmpcProblem& prob, SubproblemSolution& s) {
  double stage = 0.0;
  for (std::size_t k = 0; k < s.inputs.size(); ++k) stage += prob.cost(s.states[k], s.inputs[k]);
  s.stage_cost = stage;
  s.total_cost = stage + s.candidate.q;
}

void first_bounds(const LmpcProblem& prob, const Vector& x, Vector& lo, Vector& hi) {
  lo = prob.constraints.input_lower;
  hi = prob.constraints.input_upper;
  if (prob.first_input_bounds) prob.first_input_bounds(x, lo, hi);
}

}  // namespace

SubproblemSolution solve_candidate_linear(const LmpcProblem& prob, const Vector& x,
                                          const Candidate& candidate, QpSolver& qp) {
  SubproblemSolution s;
  s.candidate = candidate;
  const QuadraticProgram p =
      condense_mpc(prob.model, prob.cost, prob.horizon, x, candidate.state, prob.constraints);
  const QpSolution q = qp.solve(p);
  if (!q.optimal()) {
    s.status = to_string(q.status);
    return s;
  }
  const int m = prob.model.input_dim();
  for (int k = 0; k < prob.horizon; ++k) s.inputs.push_back(q.z.segment(k * m, m));
  s.states = simulate([&](const Vector& a, const Vector& b) { return prob.model(a, b); }, x,
                      s.inputs);
  std::string why;
  if (!plan_is_valid(prob, s.inputs, s.states, candidate.state, prob.constraints.input_lower,
                     prob.constraints.input_upper, why)) {
    s.status = "rejected: " + why;
    return s;
  }
  fill_costs(prob, s);
  s.feasible = true;
  s.status = "optimal";
  return s;
}

SubproblemSolution solve_candidate_nonlinear(const LmpcProblem& prob, const Vector& x,
                                             const Candidate& candidate,
                                             const std::vector<std::vector<Vector>>& warm,
                                             QpSolver& qp, double budget) {
  const int N = prob.horizon;
  const int m = prob.model.input_dim();
  SubproblemSolution s;
  s.candidate = candidate;
  s.status = "no local solution";

  Vector lo0, hi0;
  first_bounds(prob, x, lo0, hi0);
  const auto rollout = [&](const std::vector<Vector>& us) {
    return simulate([&](const Vector& a, const Vector& b) { return prob.model(a, b); }, x, us);
  };

  // Reaching a target point early and resting there is cheaper under the
  // indicator cost, so try the shortest arrival first.
  const bool rest_at_target = prob.cost.is_indicator() && prob.cost.in_target(candidate.state);
  const int k_first = rest_at_target ? 0 : N;

  for (int k = k_first; k <= N; ++k) {
    std::vector<Vector> us(static_cast<std::size_t>(N), Vector::Zero(m));
    us[0] = us[0].cwiseMax(lo0).cwiseMin(hi0);
    if (k == 0) {
      if ((x - candidate.state).lpNorm<Eigen::Infinity>() > kTerminalMatchTol) continue;
    } else {
      if (prob.reachable && !prob.reachable(x, candidate.state, k, budget)) continue;
      ShootingProblem sp;
      sp.model = &prob.model;
      sp.cost = &prob.cost;
      sp.constraints = &prob.constraints;
      sp.x0 = x;
      sp.target = candidate.state;
      sp.horizon = k;
      sp.input_lower = {lo0};
      sp.input_upper = {hi0};

      std::vector<std::vector<Vector>> starts;
      for (const auto& w : warm) {
        if (w.empty()) continue;
        const auto len = static_cast<std::ptrdiff_t>(std::min<std::size_t>(w.size(), k));
        starts.emplace_back(w.begin(), w.begin() + len);
        if (static_cast<int>(w.size()) > k) starts.emplace_back(w.end() - k, w.end());
      }
      if (prob.guesses) {
        for (auto& g : prob.guesses(x, candidate.state, k)) starts.push_back(std::move(g));
      }
      ShootingOptions opt;
      bool solved = false;
      for (const auto& start : starts) {
        const ShootingResult r = solve_shooting(sp, start, qp, opt);
        if (r.success) {
          for (int j = 0; j < k; ++j) us[static_cast<std::size_t>(j)] = r.inputs[static_cast<std::size_t>(j)];
          solved = true;
          break;
        }
      }
      if (!solved) continue;
    }
    const std::vector<Vector> xs = rollout(us);
    std::string why;
    if (!plan_is_valid(prob, us, xs, candidate.state, lo0, hi0, why)) {
      s.status = "rejected: " + why;
      continue;
    }
    s.inputs = us;
    s.states = xs;
    fill_costs(prob, s);
    s.feasible = true;
    s.arrival = k;
    s.status = "solved";
    return s;
  }
  return s;
}

SubproblemSolution apply_preference(const LmpcProblem& prob, const Vector& x,
                                    const SubproblemSolution& plan, QpSolver& qp) {
  if (prob.first_input_preference_weights.size() == 0 || !plan.feasible || plan.arrival == 0) {
    return plan;
  }
  const int k = plan.arrival;
  Vector lo0, hi0;
  first_bounds(prob, x, lo0, hi0);
  ShootingProblem sp;
  sp.model = &prob.model;
  sp.cost = &prob.cost;
  sp.constraints = &prob.constraints;
  sp.x0 = x;
  sp.target = plan.candidate.state;
  sp.horizon = k;
  sp.preferred_first_input = prob.first_input_preference;
  sp.preference_weights = prob.first_input_preference_weights;
  for (int j = 0; j < k; ++j) {
    Vector lo = j == 0 ? lo0 : prob.constraints.input_lower;
    Vector hi = j == 0 ? hi0 : prob.constraints.input_upper;
    for (int i : prob.preference_fixed_inputs) {
      lo(i) = plan.inputs[static_cast<std::size_t>(j)](i);
      hi(i) = lo(i);
    }
    sp.input_lower.push_back(lo);
    sp.input_upper.push_back(hi);
  }
  const std::vector<Vector> guess(plan.inputs.begin(), plan.inputs.begin() + k);
  const ShootingResult r = solve_shooting(sp, guess, qp);
  if (!r.success) return plan;

  SubproblemSolution s = plan;
  for (int j = 0; j < k; ++j) s.inputs[static_cast<std::size_t>(j)] = r.inputs[static_cast<std::size_t>(j)];
  s.states = simulate([&](const Vector& a, const Vector& b) { return prob.model(a, b); }, x,
                      s.inputs);
  std::string why;
  if (!plan_is_valid(prob, s.inputs, s.states, plan.candidate.state, lo0, hi0, why)) return plan;
  fill_costs(prob, s);
  return s.total_cost <= plan.total_cost ? s : plan;
}

std::vector<Vector> shifted_inputs(const SampledSafeSet& ss, const StepResult& prev) {
  std::vector<Vector> out(prev.solution.inputs.begin() + 1, prev.solution.inputs.end());
  out.push_back(ss.input_at(prev.candidate.ref));
  return out;
}

namespace {

std::vector<Vector> segment_ending_at(const SampledSafeSet& ss, const Candidate& c, int N) {
  std::vector<Vector> seg;
  for (int t = c.ref.time - N; t < c.ref.time; ++t) {
    if (t < 0) {
      seg.push_back(Vector::Zero(ss.input_at(PointRef{c.ref.slot, 0}).size()));
    } else {
      seg.push_back(ss.input_at(PointRef{c.ref.slot, t}));
    }
  }
  return seg;
}

double lower_bound(const LmpcProblem& prob, const Vector& x, const Candidate& c) {
  double lb = c.q + prob.cost.smooth_state(x);
  if (prob.cost.is_indicator()) {
    const bool x_in = prob.cost.in_target(x);
    if (prob.cost.in_target(c.state)) {
      lb += x_in ? 0.0 : prob.cost.indicator_weight;
    } else {
      // A plan that passes the target on its way to c is dominated by
      // stopping at the target.
      lb += prob.cost.indicator_weight * (prob.horizon - (x_in ? 1 : 0));
    }
  }
  return lb;
}

// Minimum of the linear-quadratic plan cost to each terminal state with the
// box constraints dropped; a valid lower bound on every candidate's stage cost.
class EqualityBound {
 public:
  EqualityBound(const LmpcProblem& prob, const Vector& x) {
    const int n = prob.model.state_dim();
    const QuadraticProgram p = condense_mpc(prob.model, prob.cost, prob.horizon, x,
                                            Vector::Zero(n), prob.constraints);
    const Eigen::LLT<Matrix> h(p.hessian);
    if (h.info() != Eigen::Success) return;
    const Vector hf = h.solve(p.linear);
    const Matrix hg = h.solve(p.eq_matrix.transpose());
    schur_.compute(p.eq_matrix * hg);
    if (schur_.info() != Eigen::Success || !schur_.isPositive()) return;
    shift_ = p.eq_rhs + p.eq_matrix * hf;
    base_ = p.constant - 0.5 * p.linear.dot(hf);
    valid_ = true;
  }
  // -inf when the bound is unavailable.
  double operator()(const Vector& terminal) const {
    if (!valid_) return -kInf;
    const Vector g = terminal + shift_;
    const double v = base_ + 0.5 * g.dot(schur_.solve(g));
    // Keep rounding from ever cutting off a tie.
    return v - 1e-9 * (1.0 + std::abs(v));
  }

 private:
  bool valid_ = false;
  Eigen::LDLT<Matrix> schur_;
  Vector shift_;
  double base_ = 0.0;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  return std::make_tuple(a.q, a.iteration, a.time) < std::make_tuple(b.q, b.iteration, b.time);
}

bool better(const SubproblemSolution& a, const SubproblemSolution& b) {
  if (!a.feasible) return false;
  if (!b.feasible) return true;
  return std::make_tuple(a.total_cost, a.candidate.q, a.candidate.iteration, a.candidate.time) <
         std::make_tuple(b.total_cost, b.candidate.q, b.candidate.iteration, b.candidate.time);
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

StepResult solve_lmpc_step(const LmpcProblem& prob, const SampledSafeSet& ss,
                           const Vector& x, const StepResult* prev,
                           const LmpcOptions& options) {
  if (ss.empty()) throw ConfigError("safe set is empty");
  StepResult result;

  std::vector<Candidate> cands;
  if (options.prune && prev != nullptr) {
    cands = ss.restriction_set(prev->cost).points;
  } else {
    cands = ss.candidates();
  }
  result.restriction_size = cands.size();

  std::vector<Vector> shifted;
  Vector shifted_target;
  if (prev != nullptr && !prev->solution.inputs.empty()) {
    shifted = shifted_inputs(ss, *prev);
    shifted_target = ss.point(ss.successor(prev->candidate.ref)).state;
  }

  const bool linear = prob.uses_linear_path();
  auto evaluate = [&](const Candidate& c, double budget, QpSolver& qp) {
    if (linear) return solve_candidate_linear(prob, x, c, qp);
    std::vector<std::vector<Vector>> warm;
    if (!shifted.empty() && c.state == shifted_target) warm.push_back(shifted);
    warm.push_back(segment_ending_at(ss, c, prob.horizon));
    if (!shifted.empty() && c.state != shifted_target) warm.push_back(shifted);
    return solve_candidate_nonlinear(prob, x, c, warm, qp, budget);
  };

  // The shifted plan's candidate goes first so that pruning has an
  // incumbent early.
  if (!shifted.empty()) {
    auto it = std::find_if(cands.begin(), cands.end(),
                           [&](const Candidate& c) { return c.state == shifted_target; });
    if (it != cands.end()) std::rotate(cands.begin(), it, it + 1);
  }

  std::optional<EqualityBound> plan_bound;
  if (linear && options.prune) plan_bound.emplace(prob, x);

  const int threads = resolve_threads(options.threads);
  SubproblemSolution best;
  std::size_t pos = 0;
  while (pos < cands.size()) {
    std::vector<const Candidate*> batch;
    std::vector<double> budgets;
    while (pos < cands.size() && static_cast<int>(batch.size()) < threads) {
      const Candidate& c = cands[pos++];
      double budget = kInf;
      if (options.prune && best.feasible) {
        double lb = lower_bound(prob, x, c);
        if (plan_bound) lb = std::max(lb, c.q + (*plan_bound)(c.state));
        if (lb > best.total_cost) continue;
        if (lb == best.total_cost && !ranks_before(c, best.candidate)) continue;
        budget = best.total_cost - lb;
      }
      batch.push_back(&c);
      budgets.push_back(budget);
    }
    if (batch.empty()) break;
    std::vector<SubproblemSolution> out(batch.size());
    if (batch.size() == 1) {
      thread_local QpSolver qp;
      out[0] = evaluate(*batch[0], budgets[0], qp);
    } else {
      std::vector<std::thread> workers;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        workers.emplace_back([&, i] {
          thread_local QpSolver qp;
          out[i] = evaluate(*batch[i], budgets[i], qp);
        });
      }
      for (auto& w : workers) w.join();
    }
    result.candidates_solved += batch.size();
    for (auto& s : out) {
      if (better(s, best)) best = std::move(s);
    }
  }

  if (!best.feasible) {
    std::ostringstream os;
    os << "no feasible candidate at x = [" << x.transpose() << "] (" << cands.size()
       << " candidates, " << result.candidates_solved << " solved)";
    throw NumericalError(os.str());
  }
  if (!linear) {
    thread_local QpSolver qp;
    best = apply_preference(prob, x, best, qp);
  }
  result.input = best.inputs.front();
  result.cost = best.total_cost;
  result.candidate = best.candidate;
  result.solution = std::move(best);
  return result;
}

namespace {

// Dense revised simplex for min c'w s.t. A w = b, w >= 0 with few rows.
// Bland's rule; artificial columns start the basis.
class SmallSimplex {
 public:
  SmallSimplex(const Matrix& A, const Vector& b) : rows_(static_cast<int>(A.rows())),
                                                    cols_(static_cast<int>(A.cols())) {
    sign_ = Vector::Ones(rows_);
    for (int i = 0; i < rows_; ++i) {
      if (b(i) < 0.0) sign_(i) = -1.0;
    }
    A_ = Matrix::Zero(rows_, cols_ + rows_);
    A_.leftCols(cols_) = sign_.asDiagonal() * A;
    A_.rightCols(rows_) = Matrix::Identity(rows_, rows_);
    b_ = sign_.cwiseProduct(b);
    basis_.resize(static_cast<std::size_t>(rows_));
    for (int i = 0; i < rows_; ++i) basis_[static_cast<std::size_t>(i)] = cols_ + i;
    scale_ = std::max(1.0, A.lpNorm<Eigen::Infinity>());
  }

  // Returns false when b is not in the cone of A's columns; dual() is then
  // a certificate y with y'A <= 0 and y'b > 0.
  bool phase_one() {
    Vector c = Vector::Zero(cols_ + rows_);
    c.tail(rows_).setOnes();
    run(c, true);
    if (current_value(c) > kFeasTol * (1.0 + b_.lpNorm<Eigen::Infinity>())) {
      dual_ = duals(c);
      return false;
    }
    drive_out_artificials();
    return true;
  }

  void phase_two(const Vector& cost) {
    Vector c = Vector::Zero(cols_ + rows_);
    c.head(cols_) = cost;
    run(c, false);
    dual_ = duals(c);
    value_ = current_value(c);
  }

  Vector solution() const {
    const Vector xb = basic_values();
    Vector w = Vector::Zero(cols_);
    for (int i = 0; i < rows_; ++i) {
      const int j = basis_[static_cast<std::size_t>(i)];
      if (j < cols_) w(j) = std::max(0.0, xb(i));
    }
    return w;
  }
  // Dual in the caller's row signs.
  Vector dual() const { return sign_.cwiseProduct(dual_); }
  double value() const { return value_; }

 private:
  static constexpr double kPivotTol = 1e-11;
  static constexpr double kFeasTol = 1e-11;

  Matrix basis_matrix() const {
    Matrix B(rows_, rows_);
    for (int i = 0; i < rows_; ++i) B.col(i) = A_.col(basis_[static_cast<std::size_t>(i)]);
    return B;
  }
  Vector basic_values() const { return basis_matrix().fullPivLu().solve(b_); }
  Vector duals(const Vector& c) const {
    Vector cb(rows_);
    for (int i = 0; i < rows_; ++i) cb(i) = c(basis_[static_cast<std::size_t>(i)]);
    return basis_matrix().transpose().fullPivLu().solve(cb);
  }
  double current_value(const Vector& c) const {
    const Vector xb = basic_values();
    double v = 0.0;
    for (int i = 0; i < rows_; ++i) v += c(basis_[static_cast<std::size_t>(i)]) * xb(i);
    return v;
  }
  bool is_basic(int j) const {
    return std::find(basis_.begin(), basis_.end(), j) != basis_.end();
  }

  void run(const Vector& c, bool allow_artificial) {
    const int limit = 50 * (cols_ + rows_) + 100;
    for (int it = 0; it < limit; ++it) {
      const Vector y = duals(c);
      const double cscale = 1.0 + c.head(cols_).lpNorm<Eigen::Infinity>();
      int enter = -1;
      const int ncols = allow_artificial ? cols_ + rows_ : cols_;
      for (int j = 0; j < ncols; ++j) {
        if (is_basic(j)) continue;
        const double d = c(j) - y.dot(A_.col(j));
        if (d < -1e-13 * cscale * scale_) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;
      const Eigen::FullPivLU<Matrix> lu = basis_matrix().fullPivLu();
      const Vector w = lu.solve(A_.col(enter));
      const Vector xb = lu.solve(b_);
      int leave = -1;
      double best = kInf;
      for (int i = 0; i < rows_; ++i) {
        if (w(i) <= kPivotTol) continue;
        const double ratio = std::max(0.0, xb(i)) / w(i);
        if (ratio < best - 1e-15 ||
            (ratio <= best + 1e-15 && leave >= 0 &&
             basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          best = std::min(best, ratio);
          leave = i;
        }
      }
      if (leave < 0) throw NumericalError("barycentric LP is unbounded");
      basis_[static_cast<std::size_t>(leave)] = enter;
    }
    throw NumericalError("barycentric LP hit its pivot limit");
  }

  void drive_out_artificials() {
    for (int i = 0; i < rows_; ++i) {
      if (basis_[static_cast<std::size_t>(i)] < cols_) continue;
      const Eigen::FullPivLU<Matrix> lu = basis_matrix().fullPivLu();
      for (int j = 0; j < cols_; ++j) {
        if (is_basic(j)) continue;
        const Vector w = lu.solve(A_.col(j));
        if (std::abs(w(i)) > 1e-9) {
          basis_[static_cast<std::size_t>(i)] = j;
          break;
        }
      }
      // A row that no column can enter is redundant; its artificial stays
      // basic at zero.
    }
  }

  int rows_;
  int cols_;
  Matrix A_;
  Vector b_;
  Vector sign_;
  double scale_ = 1.0;
  std::vector<int> basis_;
  Vector dual_;
  double value_ = kInf;
};

}  // namespace

BarycentricValue barycentric_value(const Matrix& X, const Vector& q, const Vector& z) {
  const int n = static_cast<int>(X.rows());
  const int P = static_cast<int>(X.cols());
  if (P == 0 || q.size() != P || z.size() != n) {
    throw ConfigError("barycentric_value: dimension mismatch");
  }
  Matrix A(n + 1, P);
  A.topRows(n) = X;
  A.row(n).setOnes();
  Vector b(n + 1);
  b << z, 1.0;
  SmallSimplex lp(A, b);
  BarycentricValue out;
  if (!lp.phase_one()) {
    const Vector y = lp.dual();
    out.slope = y.head(n);
    out.offset = y(n);
    return out;
  }
  lp.phase_two(q);
  const Vector y = lp.dual();
  out.feasible = true;
  out.weights = lp.solution();
  out.value = q.dot(out.weights);
  out.slope = y.head(n);
  out.offset = y(n);
  return out;
}

StepResult solve_relaxed_step(const LmpcProblem& prob, const SampledSafeSet& ss,
                              const Vector& x) {
  if (ss.empty()) throw ConfigError("safe set is empty");
  if (!prob.uses_linear_path()) {
    throw ConfigError("convex relaxation needs linear dynamics and a quadratic cost");
  }
  const std::vector<Candidate> pts = ss.candidates();
  const int P = static_cast<int>(pts.size());
  const int n = prob.model.state_dim();
  const int m = prob.model.input_dim();

  const QuadraticProgram base = condense_mpc(prob.model, prob.cost, prob.horizon, x,
                                             Vector::Zero(n), prob.constraints);
  const Matrix& gamma = base.eq_matrix;  // x_N = gamma u + drift
  const Vector drift = -base.eq_rhs;
  Matrix X(n, P);
  Vector q(P);
  for (int p = 0; p < P; ++p) {
    X.col(p) = pts[static_cast<std::size_t>(p)].state;
    q(p) = pts[static_cast<std::size_t>(p)].q;
  }

  struct Cut {
    Vector slope;
    double offset;
  };
  std::vector<Cut> value_cuts;  // V(z) >= slope'z + offset
  std::vector<Cut> hull_cuts;   // slope'z + offset <= 0

  thread_local QpSolver qp;
  const int nb = static_cast<int>(base.ineq_rhs.size());

  // Minimizes J(u) + max_k cut_k(x_N) by splitting on the maximizing cut.
  // The objective is convex, so a region solution whose boundary
  // multipliers sum to at most one satisfies the full KKT conditions.
  auto solve_region = [&](int k, QpSolution& s) {
    const int extra = static_cast<int>(hull_cuts.size()) +
                      (value_cuts.empty() ? 0 : static_cast<int>(value_cuts.size()) - 1);
    QuadraticProgram p;
    p.hessian = base.hessian;
    p.linear = base.linear;
    p.constant = base.constant;
    p.ineq_matrix = Matrix::Zero(nb + extra, base.hessian.rows());
    p.ineq_rhs = Vector::Zero(nb + extra);
    p.ineq_matrix.topRows(nb) = base.ineq_matrix;
    p.ineq_rhs.head(nb) = base.ineq_rhs;
    int r = nb;
    for (const Cut& c : hull_cuts) {
      p.ineq_matrix.row(r) = (gamma.transpose() * c.slope).transpose();
      p.ineq_rhs(r) = -(c.slope.dot(drift) + c.offset);
      ++r;
    }
    const int first_boundary = r;
    if (!value_cuts.empty()) {
      const Cut& ck = value_cuts[static_cast<std::size_t>(k)];
      p.linear += gamma.transpose() * ck.slope;
      p.constant += ck.slope.dot(drift) + ck.offset;
      for (std::size_t l = 0; l < value_cuts.size(); ++l) {
        if (static_cast<int>(l) == k) continue;
        const Vector diff = value_cuts[l].slope - ck.slope;
        p.ineq_matrix.row(r) = (gamma.transpose() * diff).transpose();
        p.ineq_rhs(r) = -(diff.dot(drift) + value_cuts[l].offset - ck.offset);
        ++r;
      }
    }
    s = qp.solve(p);
    return first_boundary;
  };

  auto solve_master = [&](const Vector* z_prev, Vector& u_best, double& value_best) {
    value_best = kInf;
    if (value_cuts.empty()) {
      QpSolution s;
      solve_region(0, s);
      if (!s.optimal()) return false;
      value_best = s.value;
      u_best = s.z;
      return true;
    }
    const int K = static_cast<int>(value_cuts.size());
    int k = K - 1;
    if (z_prev != nullptr) {
      double top = -kInf;
      for (int l = 0; l < K; ++l) {
        const double v = value_cuts[static_cast<std::size_t>(l)].slope.dot(*z_prev) +
                         value_cuts[static_cast<std::size_t>(l)].offset;
        if (v > top) {
          top = v;
          k = l;
        }
      }
    }
    std::vector<char> tried(static_cast<std::size_t>(K), 0);
    for (int attempt = 0; attempt < K; ++attempt) {
      tried[static_cast<std::size_t>(k)] = 1;
      QpSolution s;
      const int first = solve_region(k, s);
      int next = -1;
      if (s.optimal()) {
        if (s.value < value_best) {
          value_best = s.value;
          u_best = s.z;
        }
        double mass = 0.0;
        double heaviest = 0.0;
        for (int l = 0, row = first; l < K; ++l) {
          if (l == k) continue;
          const double mu = s.ineq_multipliers(row++);
          mass += mu;
          if (mu > heaviest && !tried[static_cast<std::size_t>(l)]) {
            heaviest = mu;
            next = l;
          }
        }
        if (mass <= 1.0 + 1e-9) return true;
      }
      if (next < 0) {
        for (int l = 0; l < K; ++l) {
          if (!tried[static_cast<std::size_t>(l)]) {
            next = l;
            break;
          }
        }
      }
      if (next < 0) break;
      k = next;
    }
    return std::isfinite(value_best);
  };

  Vector u;
  BarycentricValue bv;
  double model_value = 0.0;
  bool converged = false;
  Vector z_prev;
  for (int it = 0; it < 500; ++it) {
    if (!solve_master(z_prev.size() ? &z_prev : nullptr, u, model_value)) {
      throw NumericalError("relaxed problem is infeasible");
    }
    const Vector z = gamma * u + drift;
    z_prev = z;
    bv = barycentric_value(X, q, z);
    if (!bv.feasible) {
      hull_cuts.push_back({bv.slope, bv.offset});
      continue;
    }
    double lower = -kInf;
    for (const Cut& c : value_cuts) lower = std::max(lower, c.slope.dot(z) + c.offset);
    // The gap between V at the master's terminal state and the cut model
    // bounds the suboptimality; a new cut that cannot raise the model at z
    // means the LP has reached its accuracy floor.
    const double fresh = bv.slope.dot(z) + bv.offset;
    if (bv.value <= lower + 1e-10 * (1.0 + std::abs(bv.value)) || fresh <= lower) {
      converged = true;
      break;
    }
    value_cuts.push_back({bv.slope, bv.offset});
  }
  if (!converged) throw NumericalError("relaxed problem did not converge");

  StepResult r;
  SubproblemSolution sol;
  for (int k = 0; k < prob.horizon; ++k) sol.inputs.push_back(u.segment(k * m, m));
  sol.states = simulate([&](const Vector& a, const Vector& b) { return prob.model(a, b); }, x,
                        sol.inputs);
  double stage = 0.0;
  for (int k = 0; k < prob.horizon; ++k) {
    stage += prob.cost(sol.states[static_cast<std::size_t>(k)], sol.inputs[static_cast<std::size_t>(k)]);
  }
  Eigen::Index heaviest = 0;
  bv.weights.maxCoeff(&heaviest);
  sol.candidate = pts[static_cast<std::size_t>(heaviest)];
  sol.stage_cost = stage;
  sol.total_cost = stage + bv.value;
  sol.feasible = true;
  sol.arrival = prob.horizon;
  sol.status = "relaxed";
  r.input = sol.inputs.front();
  r.cost = sol.total_cost;
  r.candidate = sol.candidate;
  r.candidates_solved = static_cast<std::size_t>(P);
  r.restriction_size = static_cast<std::size_t>(P);
  r.weights = bv.weights;
  r.solution = std::move(sol);
  return r;
}

IterationRun run_iteration(const LmpcProblem& prob, const SampledSafeSet& ss, int iteration,
                           const LmpcOptions& options) {
  IterationRun run;
  std::vector<Vector> xs{prob.start};
  std::vector<Vector> us;
  for (int t = 0;; ++t) {
    if (t > prob.max_steps) {
      throw NumericalError("iteration " + std::to_string(iteration) +
                           " did not terminate within the step limit");
    }
    const Vector& x = xs.back();
    const StepResult* prev = run.steps.empty() ? nullptr : &run.steps.back();
    StepResult r = prob.mode == Mode::kConvexRelaxation
                       ? solve_relaxed_step(prob, ss, x)
                       : solve_lmpc_step(prob, ss, x, prev, options);
    run.steps.push_back(std::move(r));
    const StepResult& cur = run.steps.back();
    if (cur.cost <= prob.epsilon) break;
    const FeasibilityReport rep = check_feasible(prob.constraints, x, cur.input);
    if (!rep.feasible) {
      throw NumericalError("applied input leaves the constraint set: " + rep.violations.front());
    }
    Vector next = prob.apply(x, cur.input);
    if (!all_finite(next)) throw NumericalError("closed loop produced a non-finite state");
    us.push_back(cur.input);
    xs.push_back(std::move(next));
  }
  const FeasibilityReport last = check_state(prob.constraints, xs.back());
  if (!last.feasible) throw NumericalError("terminal state violates the constraints");
  xs.back() = prob.cost.canonicalize(xs.back());
  run.record = make_record(iteration, std::move(xs), std::move(us), prob.cost);
  for (const StepResult& s : run.steps) {
    StepDiagnostics d;
    d.lmpc_cost = s.cost;
    d.candidate_iteration = s.candidate.iteration;
    d.candidate_time = s.candidate.time;
    d.candidates_solved = s.candidates_solved;
    d.restriction_size = s.restriction_size;
    run.record.diagnostics.push_back(d);
  }
  return run;
}

double trajectory_gap(const Trajectory& a, const Trajectory& b) {
  const std::vector<Vector> xa = a.all_states();
  const std::vector<Vector> xb = b.all_states();
  const std::size_t len = std::max(xa.size(), xb.size());
  double gap = 0.0;
  for (std::size_t t = 0; t < len; ++t) {
    const Vector& va = t < xa.size() ? xa[t] : xa.back();
    const Vector& vb = t < xb.size() ? xb[t] : xb.back();
    gap = std::max(gap, (va - vb).norm());
  }
  return gap;
}

Campaign run_until_convergence(const LmpcProblem& prob, const IterationRecord& seed,
                               const LmpcOptions& options,
                               const IterationCallback& on_iteration) {
  prob.validate();
  Campaign camp;
  camp.safe_set.add_trajectory(seed);
  camp.records.push_back(seed);
  camp.steps.emplace_back();
  camp.safe_set_sizes.push_back(camp.safe_set.size());
  for (int j = 1; j <= prob.max_iterations; ++j) {
    IterationRun run = run_iteration(prob, camp.safe_set, j, options);
    camp.last_gap = trajectory_gap(run.record.trajectory, camp.records.back().trajectory);
    camp.safe_set.add_trajectory(run.record);
    camp.records.push_back(std::move(run.record));
    camp.steps.push_back(std::move(run.steps));
    camp.safe_set_sizes.push_back(camp.safe_set.size());
    if (on_iteration) on_iteration(camp);
    if (camp.last_gap < prob.gamma) {
      camp.converged = true;
      break;
    }
  }
  return camp;
}

}  // namespace lmpc
