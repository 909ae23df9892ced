// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include "lmpc/lmpc.hpp"
#include "lmpc/oracle.hpp"
#include "lmpc/systems.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>

namespace {

using namespace lmpc;
using Clock = std::chrono::steady_clock;

struct Run {
  std::string name;
  LmpcProblem problem;
  std::optional<Campaign> campaign;
  std::string error;
  double seconds = 0.0;
};

Run run_campaign(const std::string& name, const LmpcProblem& p,
                 const std::function<IterationRecord()>& seed, const LmpcOptions& opt = {}) {
  Run r;
  r.name = name;
  r.problem = p;
  const auto t0 = Clock::now();
  try {
    r.campaign = run_until_convergence(p, seed(), opt);
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

int failures = 0;

void report(int id, bool ok, const std::string& title, const std::string& detail) {
  if (!ok) ++failures;
  std::printf("%s criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", id, title.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Worst violations of cost monotonicity and of the sandwich
// J^{j-1} >= J^{LMPC,j}(x_S) >= J^j.
struct MonotoneCheck {
  double worst_increase = -kInf;
  double worst_sandwich = -kInf;
};

MonotoneCheck monotone(const Campaign& c) {
  MonotoneCheck m;
  for (std::size_t j = 1; j < c.records.size(); ++j) {
    m.worst_increase = std::max(m.worst_increase, c.records[j].cost - c.records[j - 1].cost);
    const double j0 = c.steps[j].front().cost;
    m.worst_sandwich = std::max(m.worst_sandwich, j0 - c.records[j - 1].cost);
    m.worst_sandwich = std::max(m.worst_sandwich, c.records[j].cost - j0);
  }
  return m;
}

// Largest constraint violation over every realized state and input.
double worst_violation(const LmpcProblem& p, const Campaign& c) {
  double worst = 0.0;
  for (const IterationRecord& r : c.records) {
    const Trajectory& tr = r.trajectory;
    for (std::size_t t = 0; t < tr.steps(); ++t) {
      worst = std::max(worst, check_feasible(p.constraints, tr.states[t], tr.inputs[t]).max_violation);
    }
    worst = std::max(worst, check_state(p.constraints, tr.terminal).max_violation);
    if (!r.converged_to_target) worst = kInf;
  }
  return worst;
}

// Largest J(x_{t+1}) - J(x_t) + h(x_t, u_t) over all closed-loop steps.
double worst_lyapunov(const Campaign& c) {
  double worst = -kInf;
  for (std::size_t j = 1; j < c.records.size(); ++j) {
    const Trajectory& tr = c.records[j].trajectory;
    for (std::size_t t = 0; t + 1 < c.steps[j].size(); ++t) {
      worst = std::max(worst, c.steps[j][t + 1].cost - c.steps[j][t].cost + tr.stage_costs[t]);
    }
  }
  return worst;
}

bool criteria_2_to_4(const Run& r, std::string& detail) {
  if (!r.campaign) {
    detail = r.name + " failed: " + r.error;
    return false;
  }
  const MonotoneCheck m = monotone(*r.campaign);
  const double viol = worst_violation(r.problem, *r.campaign);
  const double lyap = worst_lyapunov(*r.campaign);
  std::ostringstream os;
  os << r.name << " max increase " << fmt("%.3g", m.worst_increase) << ", sandwich "
     << fmt("%.3g", m.worst_sandwich) << ", violation " << fmt("%.3g", viol) << ", Lyapunov "
     << fmt("%.3g", lyap);
  detail = os.str();
  return m.worst_increase <= 1e-9 && m.worst_sandwich <= 1e-7 && viol <= kFeasibilityTol &&
         lyap <= 1e-7;
}

}  // namespace

int main() {
  const ClqrInstance clqr;
  const DubinsInstance dubins;
  const AdaptiveDubinsInstance adaptive;

  LmpcOptions no_prune;
  no_prune.prune = false;
  LmpcProblem clqr_relaxed = make_clqr_problem(clqr);
  clqr_relaxed.mode = Mode::kConvexRelaxation;

  auto clqr_seed = [&] { return clqr_seed_iteration0(clqr); };
  const Run clqr_run = run_campaign("clqr", make_clqr_problem(clqr), clqr_seed);
  const Run clqr_full = run_campaign("clqr without pruning", make_clqr_problem(clqr), clqr_seed,
                                     no_prune);
  const Run relaxed_run = run_campaign("clqr relaxed", clqr_relaxed, clqr_seed);
  const Run dubins_run = run_campaign("dubins", make_dubins_problem(dubins),
                                      [&] { return dubins_seed_iteration0(dubins); });
  double adaptive_error = 0.0;
  IterationRecord adaptive_seed;
  const auto t_init = Clock::now();
  const AdaptiveSeed init = adaptive_seed_iteration0(adaptive);
  const double init_seconds = std::chrono::duration<double>(Clock::now() - t_init).count();
  adaptive_error = init.error_estimate;
  adaptive_seed = init.record;
  const Run adaptive_run = [&] {
    Run r = run_campaign("adaptive dubins", make_adaptive_problem(adaptive, adaptive_error),
                         [&] { return adaptive_seed; });
    r.seconds += init_seconds;
    return r;
  }();

  // 1. CLQR convergence to the oracle.
  {
    std::string detail;
    bool ok = false;
    if (clqr_run.campaign) {
      const OracleSolution o = clqr_oracle(clqr);
      const IterationRecord& last = clqr_run.campaign->records.back();
      const std::vector<double> dev = deviation_profile(last.trajectory, o.trajectory());
      const double sigma = *std::max_element(dev.begin(), dev.end());
      const double gap = std::abs(last.cost - o.cost);
      std::ostringstream os;
      os << "cost " << fmt("%.12f", last.cost) << " vs oracle " << fmt("%.12f", o.cost)
         << " (gap " << fmt("%.3g", gap) << ", oracle 2T gap " << fmt("%.3g", o.saturation_gap)
         << "), max deviation " << fmt("%.3g", sigma) << ", "
         << (clqr_run.campaign->converged ? "converged" : "NOT converged") << " in "
         << clqr_run.campaign->records.size() - 1 << " iterations, "
         << fmt("%.2f", clqr_run.seconds) << " s";
      detail = os.str();
      ok = clqr_run.campaign->converged && gap <= 1e-4 && sigma <= 1e-3 &&
           clqr_run.seconds <= 60.0;
    } else {
      detail = clqr_run.error;
    }
    report(1, ok, "CLQR converges to the optimum", detail);
  }

  // 2. Monotone iteration cost and cost sandwich.
  {
    bool ok = true;
    std::string detail;
    for (const Run* r : {&clqr_run, &dubins_run, &adaptive_run}) {
      if (!r->campaign) {
        ok = false;
        detail += r->name + " failed: " + r->error + "; ";
        continue;
      }
      const MonotoneCheck m = monotone(*r->campaign);
      ok = ok && m.worst_increase <= 1e-9 && m.worst_sandwich <= 1e-7;
      detail += r->name + " max increase " + fmt("%.3g", m.worst_increase) + ", sandwich " +
                fmt("%.3g", m.worst_sandwich) + "; ";
    }
    report(2, ok, "iteration cost is nonincreasing", detail);
  }

  // 3. Recursive feasibility.
  {
    bool ok = true;
    std::string detail;
    for (const Run* r : {&clqr_run, &clqr_full, &dubins_run, &adaptive_run}) {
      if (!r->campaign) {
        ok = false;
        detail += r->name + " failed: " + r->error + "; ";
        continue;
      }
      const double v = worst_violation(r->problem, *r->campaign);
      ok = ok && v <= kFeasibilityTol;
      detail += r->name + " worst violation " + fmt("%.3g", v) + "; ";
    }
    report(3, ok, "recursive feasibility", detail);
  }

  // 4. Lyapunov decrease along the CLQR closed loop.
  {
    bool ok = false;
    std::string detail = clqr_run.error;
    if (clqr_run.campaign) {
      const double w = worst_lyapunov(*clqr_run.campaign);
      ok = w <= 1e-7;
      detail = "max J(x+) - J(x) + h(x,u) = " + fmt("%.3g", w);
    }
    report(4, ok, "Lyapunov decrease", detail);
  }

  // 5. Dubins minimum time.
  int dubins_steps = -1;
  {
    bool ok = false;
    std::string detail = dubins_run.error;
    if (dubins_run.campaign) {
      const Campaign& c = *dubins_run.campaign;
      const IterationRecord& last = c.records.back();
      dubins_steps = static_cast<int>(last.trajectory.steps());
      std::ostringstream os;
      os << "costs";
      for (const IterationRecord& r : c.records) os << ' ' << r.cost;
      os << (c.converged ? ", converged" : ", NOT converged") << ", "
         << fmt("%.1f", dubins_run.seconds) << " s";
      const PerturbationReport pr = perturbation_check(dubins_run.problem, last.trajectory);
      os << "; perturbation check: " << pr.projected << "/" << pr.perturbations
         << " projected, " << pr.shorter << " led to a " << dubins_steps - 1 << "-step plan";
      detail = os.str();
      ok = c.converged && last.cost == 16.0 && dubins_run.seconds <= 600.0;
    }
    report(5, ok, "Dubins converges to 16 steps", detail);
  }

  // 6. Adaptive identification.
  {
    bool ok = false;
    std::string detail = adaptive_run.error;
    if (adaptive_run.campaign) {
      const Campaign& c = *adaptive_run.campaign;
      std::ostringstream os;
      os << "error norms";
      double prev = kInf;
      bool nonincreasing = true;
      for (const IterationRecord& r : c.records) {
        const double e = error_norm(r.trajectory);
        os << ' ' << fmt("%.6g", e);
        nonincreasing = nonincreasing && e <= prev + 1e-9;
        prev = e;
      }
      const Trajectory& tr = c.records.back().trajectory;
      const std::vector<Vector> xs = tr.all_states();
      double max_e = 0.0;
      for (std::size_t k = 1; k < xs.size(); ++k) max_e = std::max(max_e, std::abs(xs[k](4)));

      // Project onto (z, y, v) with the effective acceleration and replay
      // it on the known-saturation model.
      const LmpcProblem known = make_dubins_problem(dubins);
      std::vector<Vector> inputs;
      for (const Vector& u : tr.inputs) {
        inputs.push_back((Vector(2) << u(1), adaptive.true_saturation * sigmoid(u(0))).finished());
      }
      const std::vector<Vector> replay = simulate(
          [&](const Vector& x, const Vector& u) { return known.model(x, u); },
          adaptive.start_position, inputs);
      double drift = 0.0;
      double viol = 0.0;
      // The recorded terminal is snapped onto the target, so only the
      // states before it are compared; the replayed terminal must still
      // land in the target.
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        drift = std::max(drift, (replay[k] - xs[k].head(3)).lpNorm<Eigen::Infinity>());
        viol = std::max(viol, check_feasible(known.constraints, replay[k], inputs[k]).max_violation);
      }
      const bool reaches = known.cost.in_target(replay.back());
      const int steps = static_cast<int>(tr.steps());
      os << "; converged " << (c.converged ? "yes" : "no") << ", max |e_k| (k>0) "
         << fmt("%.3g", max_e) << ", projected replay drift " << fmt("%.3g", drift)
         << ", violation " << fmt("%.3g", viol) << ", reaches target " << (reaches ? "yes" : "no")
         << ", " << steps << " steps vs " << dubins_steps << " known-saturation, cost "
         << fmt("%.12g", c.records.back().cost) << ", " << fmt("%.1f", adaptive_run.seconds)
         << " s";
      detail = os.str();
      ok = c.converged && nonincreasing && max_e <= 1e-6 && drift <= 1e-9 &&
           viol <= kFeasibilityTol && reaches && steps == dubins_steps;
    }
    report(6, ok, "adaptive Dubins identifies the saturation", detail);
  }

  // 7. Safe-set growth pattern.
  {
    bool ok = false;
    std::string detail = clqr_run.error;
    if (clqr_run.campaign) {
      const Campaign& c = *clqr_run.campaign;
      ok = true;
      std::ostringstream os;
      os << "sizes " << c.safe_set_sizes.front();
      for (std::size_t j = 1; j < c.records.size(); ++j) {
        const std::size_t grow = c.safe_set_sizes[j] - c.safe_set_sizes[j - 1];
        os << " +" << grow;
        ok = ok && grow == c.records[j].trajectory.steps() + 1;
      }
      // Once the step count settles the increment is constant.
      const std::size_t settled = c.records.back().trajectory.steps() + 1;
      for (std::size_t j = c.records.size() - 1; j >= 1; --j) {
        if (c.records[j].trajectory.steps() + 1 != settled) break;
        ok = ok && c.safe_set_sizes[j] - c.safe_set_sizes[j - 1] == settled;
      }
      os << " (final " << c.safe_set_sizes.back() << ")";
      detail = os.str();
    }
    report(7, ok, "safe set grows by steps + 1 per iteration", detail);
  }

  // 8. QP solver against exhaustive enumeration.
  {
    std::mt19937 rng(8);
    std::uniform_int_distribution<int> dn(1, 6);
    int compared = 0;
    int mismatched = 0;
    double worst_gap = 0.0;
    double worst_kkt = 0.0;
    for (int trial = 0; compared < 1000; ++trial) {
      const int n = dn(rng);
      const int n_eq = std::min(n - 1, static_cast<int>(rng() % 3));
      const int n_in = static_cast<int>(rng() % 7);
      const QuadraticProgram qp = random_test_qp(rng, n, n_eq, n_in, trial % 5 != 0);
      const std::optional<double> ref = qp_enumeration_oracle(qp);
      const QpSolution s = solve_qp(qp);
      if (!ref) {
        if (s.status != QpStatus::kInfeasible) ++mismatched;
        continue;
      }
      ++compared;
      if (!s.optimal()) {
        ++mismatched;
        continue;
      }
      worst_gap = std::max(worst_gap, std::abs(s.value - *ref) / (1.0 + std::abs(*ref)));
      worst_kkt = std::max(worst_kkt, s.residuals.max());
    }
    std::ostringstream os;
    os << compared << " feasible QPs, " << mismatched << " status mismatches, worst gap "
       << fmt("%.3g", worst_gap) << ", worst KKT residual " << fmt("%.3g", worst_kkt);
    report(8, mismatched == 0 && worst_gap <= 1e-8 && worst_kkt <= 1e-8, "QP solver soundness",
           os.str());
  }

  // 9. Restriction-set pruning.
  {
    bool ok = false;
    std::string detail = clqr_run.error + clqr_full.error;
    if (clqr_run.campaign && clqr_full.campaign) {
      const Campaign& on = *clqr_run.campaign;
      const Campaign& off = *clqr_full.campaign;
      double worst = 0.0;
      std::size_t solved_on = 0;
      std::size_t solved_off = 0;
      bool aligned = on.records.size() == off.records.size();
      for (std::size_t j = 1; aligned && j < on.records.size(); ++j) {
        if (on.steps[j].size() != off.steps[j].size()) {
          aligned = false;
          break;
        }
        for (std::size_t t = 0; t < on.steps[j].size(); ++t) {
          worst = std::max(worst, std::abs(on.steps[j][t].cost - off.steps[j][t].cost));
          if (j > 2) {
            solved_on += on.steps[j][t].candidates_solved;
            solved_off += off.steps[j][t].candidates_solved;
          }
        }
      }
      const double reduction =
          solved_off > 0 ? 1.0 - static_cast<double>(solved_on) / static_cast<double>(solved_off)
                         : 0.0;
      std::ostringstream os;
      os << (aligned ? "" : "campaigns differ in shape; ") << "worst step-cost difference "
         << fmt("%.3g", worst) << ", candidates solved after iteration 2: " << solved_on
         << " vs " << solved_off << " (" << fmt("%.1f", 100.0 * reduction) << "% fewer)";
      detail = os.str();
      ok = aligned && worst <= 1e-9 && reduction >= 0.5;
    }
    report(9, ok, "pruning leaves step costs unchanged", detail);
  }

  // 10. Convex relaxation.
  {
    bool ok = false;
    std::string detail = relaxed_run.error;
    if (relaxed_run.campaign) {
      const Campaign& c = *relaxed_run.campaign;
      const LmpcProblem enumerated = make_clqr_problem(clqr);
      SampledSafeSet ss;
      double worst = -kInf;
      std::size_t compared = 0;
      for (std::size_t j = 1; j < c.records.size(); ++j) {
        ss.add_trajectory(c.records[j - 1]);
        const Trajectory& tr = c.records[j].trajectory;
        for (std::size_t t = 0; t < tr.steps(); ++t) {
          const StepResult e = solve_lmpc_step(enumerated, ss, tr.states[t], nullptr);
          worst = std::max(worst, c.steps[j][t].cost - e.cost);
          ++compared;
        }
      }
      std::string sub;
      const bool rest = criteria_2_to_4(relaxed_run, sub);
      std::ostringstream os;
      os << compared << " steps, max relaxed - enumeration " << fmt("%.3g", worst)
         << ", final cost " << fmt("%.12f", c.records.back().cost) << ", "
         << (c.converged ? "converged" : "NOT converged") << ", " << fmt("%.1f", relaxed_run.seconds)
         << " s; " << sub;
      detail = os.str();
      ok = c.converged && worst <= 1e-9 && rest;
    }
    report(10, ok, "convex relaxation is never worse", detail);
  }

  return failures;
}
