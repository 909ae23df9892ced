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
#include "lmpc/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lmpc {

namespace {

double inf_norm(const Vector& v) {
  return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
}

}  // namespace

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kOptimal:
      return "optimal";
    case QpStatus::kInfeasible:
      return "infeasible";
    case QpStatus::kIterationLimit:
      return "iteration-limit";
  }
  return "unknown";
}

double KktResiduals::max() const {
  return std::max({stationarity, primal_equality, primal_inequality,
                   complementarity, dual_infeasibility});
}

void QuadraticProgram::normalize() {
  const Eigen::Index n = hessian.rows();
  if (linear.size() == 0) linear = Vector::Zero(n);
  if (eq_matrix.size() == 0) {
    eq_matrix.resize(eq_rhs.size(), n);
    if (eq_rhs.size() != 0 && n != 0) eq_matrix.setZero();
  }
  if (eq_matrix.cols() != n && eq_matrix.rows() == 0) eq_matrix.resize(0, n);
  if (ineq_matrix.size() == 0) {
    ineq_matrix.resize(ineq_rhs.size(), n);
    if (ineq_rhs.size() != 0 && n != 0) ineq_matrix.setZero();
  }
  if (ineq_matrix.cols() != n && ineq_matrix.rows() == 0) ineq_matrix.resize(0, n);
}

void QuadraticProgram::validate() const {
  const Eigen::Index n = hessian.rows();
  if (hessian.cols() != n) throw ConfigError("QP: Hessian must be square");
  if (linear.size() != n) throw ConfigError("QP: linear term has wrong size");
  if (eq_matrix.cols() != n || eq_matrix.rows() != eq_rhs.size()) {
    throw ConfigError("QP: equality system has inconsistent dimensions");
  }
  if (ineq_matrix.cols() != n || ineq_matrix.rows() != ineq_rhs.size()) {
    throw ConfigError("QP: inequality system has inconsistent dimensions");
  }
  if (!hessian.allFinite() || !linear.allFinite() || !eq_matrix.allFinite() ||
      !eq_rhs.allFinite() || !ineq_matrix.allFinite() || !ineq_rhs.allFinite()) {
    throw ConfigError("QP: data contains non-finite entries");
  }
  const double asym = n == 0 ? 0.0 : (hessian - hessian.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, hessian.cwiseAbs().maxCoeff())) {
    throw ConfigError("QP: Hessian is not symmetric");
  }
  if (n > 0) {
    Eigen::LLT<Matrix> llt(hessian);
    if (llt.info() != Eigen::Success) {
      throw ConfigError("QP: Hessian is not positive definite");
    }
  }
}

double QuadraticProgram::objective(const Vector& z) const {
  return 0.5 * z.dot(hessian * z) + linear.dot(z) + constant;
}

KktResiduals kkt_residuals(const QuadraticProgram& qp, const Vector& z,
                           const Vector& eq_multipliers,
                           const Vector& ineq_multipliers) {
  KktResiduals r;
  const Vector hz = qp.hessian * z;
  const Vector eq_term = qp.eq_matrix.transpose() * eq_multipliers;
  const Vector in_term = qp.ineq_matrix.transpose() * ineq_multipliers;
  const double scale = 1.0 + std::max({inf_norm(hz), inf_norm(qp.linear),
                                       inf_norm(eq_term), inf_norm(in_term)});
  r.stationarity = inf_norm(Vector(hz + qp.linear + eq_term + in_term)) / scale;
  if (qp.eq_rhs.size() > 0) {
    r.primal_equality = inf_norm(Vector(qp.eq_matrix * z - qp.eq_rhs)) /
                        (1.0 + inf_norm(qp.eq_rhs));
  }
  if (qp.ineq_rhs.size() > 0) {
    const Vector slack = qp.ineq_rhs - qp.ineq_matrix * z;
    const double scale_in = 1.0 + inf_norm(qp.ineq_rhs);
    r.primal_inequality = std::max(0.0, -slack.minCoeff()) / scale_in;
    r.complementarity = inf_norm(Vector(ineq_multipliers.cwiseProduct(slack))) / scale;
    r.dual_infeasibility = std::max(0.0, -ineq_multipliers.minCoeff());
  }
  return r;
}

// Givens-based factor updates follow Goldfarb and Idnani (1983); J holds
// L^{-T} rotated so that its leading q columns span the active normals.
bool QpSolver::add_constraint(int q, const Vector& d_in) {
  Vector d = d_in;
  for (int j = n_ - 1; j >= q + 1; --j) {
    double cc = d(j - 1);
    double ss = d(j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    d(j) = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d(j - 1) = -h;
    } else {
      d(j - 1) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n_; ++k) {
      const double t1 = J_(k, j - 1);
      const double t2 = J_(k, j);
      J_(k, j - 1) = t1 * cc + t2 * ss;
      J_(k, j) = xny * (t1 + J_(k, j - 1)) - t2;
    }
  }
  for (int i = 0; i <= q; ++i) R_(i, q) = d(i);
  if (std::abs(d(q)) <= std::numeric_limits<double>::epsilon() * r_norm_) {
    return false;
  }
  r_norm_ = std::max(r_norm_, std::abs(d(q)));
  return true;
}

void QpSolver::delete_constraint(int q, int l) {
  for (int j = l; j < q - 1; ++j) R_.col(j) = R_.col(j + 1);
  R_.col(q - 1).setZero();
  const int nq = q - 1;
  for (int j = l; j < nq; ++j) {
    double cc = R_(j, j);
    double ss = R_(j + 1, j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    R_(j + 1, j) = 0.0;
    if (cc < 0.0) {
      R_(j, j) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      R_(j, j) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = j + 1; k < nq; ++k) {
      const double t1 = R_(j, k);
      const double t2 = R_(j + 1, k);
      R_(j, k) = t1 * cc + t2 * ss;
      R_(j + 1, k) = xny * (t1 + R_(j, k)) - t2;
    }
    for (int k = 0; k < n_; ++k) {
      const double t1 = J_(k, j);
      const double t2 = J_(k, j + 1);
      J_(k, j) = t1 * cc + t2 * ss;
      J_(k, j + 1) = xny * (J_(k, j) + t1) - t2;
    }
  }
}

QpSolution QpSolver::solve(const QuadraticProgram& input) {
  QuadraticProgram qp = input;
  qp.normalize();
  qp.validate();

  const int n = qp.num_variables();
  const int n_eq = static_cast<int>(qp.eq_rhs.size());
  const int n_in = static_cast<int>(qp.ineq_rhs.size());

  QpSolution sol;
  sol.ineq_multipliers = Vector::Zero(n_in);
  sol.eq_multipliers = Vector::Zero(n_eq);

  // Null-space reduction z = z_p + Z y.
  Vector z_p = Vector::Zero(n);
  Matrix Z = Matrix::Identity(n, n);
  if (n_eq > 0) {
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(qp.eq_matrix);
    z_p = cod.solve(qp.eq_rhs);
    const double eq_res = inf_norm(Vector(qp.eq_matrix * z_p - qp.eq_rhs));
    if (eq_res > 1e-9 * (1.0 + inf_norm(qp.eq_rhs))) {
      sol.status = QpStatus::kInfeasible;
      sol.diagnostic = "equality system is inconsistent";
      return sol;
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(qp.eq_matrix.transpose());
    const int rank = static_cast<int>(qr.rank());
    const Matrix Q = qr.householderQ();
    Z = Q.rightCols(n - rank);
  }
  const int nr = static_cast<int>(Z.cols());

  Matrix G = Z.transpose() * qp.hessian * Z;
  G = 0.5 * (G + G.transpose());
  const Vector g = Z.transpose() * (qp.hessian * z_p + qp.linear);
  const Matrix C = qp.ineq_matrix * Z;
  const Vector dvec = qp.ineq_rhs - qp.ineq_matrix * z_p;

  // Rows that do not depend on y are checked once.
  std::vector<int> rows;
  for (int i = 0; i < n_in; ++i) {
    const double scale = 1.0 + qp.ineq_matrix.row(i).cwiseAbs().maxCoeff() *
                                   (1.0 + inf_norm(z_p));
    if (nr == 0 || C.row(i).cwiseAbs().maxCoeff() <= 1e-14 * scale) {
      if (dvec(i) < -1e-9 * (1.0 + std::abs(qp.ineq_rhs(i)))) {
        sol.status = QpStatus::kInfeasible;
        std::ostringstream os;
        os << "inequality " << i << " violated by the equality-determined point";
        sol.diagnostic = os.str();
        return sol;
      }
    } else {
      rows.push_back(i);
    }
  }

  Vector y = Vector::Zero(nr);
  std::vector<int> active;
  Vector u_active;
  int iterations = 0;
  QpStatus status = QpStatus::kOptimal;

  if (nr > 0) {
    n_ = nr;
    Eigen::LLT<Matrix> llt(G);
    if (llt.info() != Eigen::Success) {
      throw ConfigError("QP: reduced Hessian is not positive definite");
    }
    const Matrix L = llt.matrixL();
    J_ = L.transpose().triangularView<Eigen::Upper>().solve(Matrix::Identity(nr, nr));
    R_ = Matrix::Zero(nr, nr);
    r_norm_ = 1.0;
    y = -(J_ * (J_.transpose() * g));

    std::vector<char> is_active(static_cast<std::size_t>(n_in), 0);
    const int limit = 10 * (nr + n_in) + 10;
    const double eps = std::numeric_limits<double>::epsilon();

    while (true) {
      // Most violated inactive row, measured in the >= form n'y >= b with
      // n = -c and b = -d.
      int p = -1;
      double worst = 0.0;
      for (int i : rows) {
        if (is_active[static_cast<std::size_t>(i)]) continue;
        const double cn = C.row(i).norm();
        const double s = (dvec(i) - C.row(i).dot(y)) / cn;
        const double tol = 1e-13 * (1.0 + std::abs(dvec(i)) / cn + inf_norm(y));
        if (s < -tol && s < worst) {
          worst = s;
          p = i;
        }
      }
      if (p < 0) break;

      const Vector np = -C.row(p).transpose();
      double u_new = 0.0;
      bool added = false;
      while (!added) {
        if (++iterations > limit) {
          status = QpStatus::kIterationLimit;
          break;
        }
        const int q = static_cast<int>(active.size());
        const Vector d = J_.transpose() * np;
        const Vector zdir = J_.rightCols(nr - q) * d.tail(nr - q);
        Vector r = Vector::Zero(q);
        if (q > 0) {
          r = R_.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));
        }
        double t1 = kInf;
        int l = -1;
        for (int j = 0; j < q; ++j) {
          if (r(j) > 0.0) {
            const double ratio = u_active(j) / r(j);
            if (ratio < t1) {
              t1 = ratio;
              l = j;
            }
          }
        }
        const double tail_sq = d.tail(nr - q).squaredNorm();
        double t2 = kInf;
        const double sp = np.dot(y) + dvec(p);
        if (std::sqrt(tail_sq) > 1e2 * eps * std::max(r_norm_, d.norm())) {
          t2 = -sp / zdir.dot(np);
        }
        if (t1 == kInf && t2 == kInf) {
          status = QpStatus::kInfeasible;
          std::ostringstream os;
          os << "inequality " << p << " cannot be satisfied together with the active set";
          sol.diagnostic = os.str();
          break;
        }
        if (t2 == kInf) {
          u_active -= t1 * r;
          u_new += t1;
          const int removed = active[static_cast<std::size_t>(l)];
          is_active[static_cast<std::size_t>(removed)] = 0;
          delete_constraint(q, l);
          active.erase(active.begin() + l);
          Vector shrunk(q - 1);
          for (int j = 0, k = 0; j < q; ++j) {
            if (j != l) shrunk(k++) = u_active(j);
          }
          u_active = shrunk;
          continue;
        }
        const double t = std::min(t1, t2);
        y += t * zdir;
        u_active -= t * r;
        u_new += t;
        if (t2 <= t1) {
          if (!add_constraint(q, d)) {
            // Numerically dependent normal: treat the row as satisfied.
            is_active[static_cast<std::size_t>(p)] = 1;
            for (int i = 0; i <= q; ++i) R_(i, q) = 0.0;
            added = true;
            break;
          }
          active.push_back(p);
          is_active[static_cast<std::size_t>(p)] = 1;
          u_active.conservativeResize(q + 1);
          u_active(q) = u_new;
          added = true;
        } else {
          const int removed = active[static_cast<std::size_t>(l)];
          is_active[static_cast<std::size_t>(removed)] = 0;
          delete_constraint(q, l);
          active.erase(active.begin() + l);
          Vector shrunk(q - 1);
          for (int j = 0, k = 0; j < q; ++j) {
            if (j != l) shrunk(k++) = u_active(j);
          }
          u_active = shrunk;
        }
      }
      if (status != QpStatus::kOptimal) break;
    }

    if (status == QpStatus::kOptimal && !active.empty()) {
      // Polish on the final active set.
      const int q = static_cast<int>(active.size());
      Matrix K = Matrix::Zero(nr + q, nr + q);
      Vector rhs(nr + q);
      K.topLeftCorner(nr, nr) = G;
      for (int j = 0; j < q; ++j) {
        const int i = active[static_cast<std::size_t>(j)];
        K.block(0, nr + j, nr, 1) = C.row(i).transpose();
        K.block(nr + j, 0, 1, nr) = C.row(i);
        rhs(nr + j) = dvec(i);
      }
      rhs.head(nr) = -g;
      Eigen::FullPivLU<Matrix> lu(K);
      if (lu.isInvertible()) {
        const Vector sol_k = lu.solve(rhs);
        const Vector y2 = sol_k.head(nr);
        const Vector u2 = sol_k.tail(q);
        auto merit = [&](const Vector& yy, const Vector& uu) {
          double m = 0.0;
          for (int i : rows) m = std::max(m, C.row(i).dot(yy) - dvec(i));
          m = std::max(m, std::max(0.0, -uu.minCoeff()));
          Vector st = G * yy + g;
          for (int j = 0; j < q; ++j) {
            st += uu(j) * C.row(active[static_cast<std::size_t>(j)]).transpose();
          }
          return std::max(m, inf_norm(st));
        };
        if (merit(y2, u2) <= merit(y, u_active)) {
          y = y2;
          u_active = u2.cwiseMax(0.0);
        }
      }
    }
  }

  sol.iterations = iterations;
  sol.status = status;
  if (status != QpStatus::kOptimal) return sol;

  sol.z = z_p + Z * y;
  for (std::size_t j = 0; j < active.size(); ++j) {
    sol.ineq_multipliers(active[j]) = u_active(static_cast<Eigen::Index>(j));
  }
  sol.active_set = active;
  std::sort(sol.active_set.begin(), sol.active_set.end());
  if (n_eq > 0) {
    const Vector grad = qp.hessian * sol.z + qp.linear +
                        qp.ineq_matrix.transpose() * sol.ineq_multipliers;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod_t(qp.eq_matrix.transpose());
    sol.eq_multipliers = cod_t.solve(Vector(-grad));
  }
  sol.value = qp.objective(sol.z);
  sol.residuals = kkt_residuals(qp, sol.z, sol.eq_multipliers, sol.ineq_multipliers);
  return sol;
}

QpSolution solve_qp(const QuadraticProgram& qp) {
  QpSolver solver;
  return solver.solve(qp);
}

PredictionMap build_prediction(const LinearForm& lin, int horizon) {
  const auto n = lin.A.rows();
  const auto m = lin.B.cols();
  PredictionMap pm;
  pm.phi = Matrix::Zero(n * (horizon + 1), n);
  pm.gamma = Matrix::Zero(n * (horizon + 1), m * horizon);
  pm.phi.topRows(n) = Matrix::Identity(n, n);
  for (int k = 1; k <= horizon; ++k) {
    pm.phi.middleRows(n * k, n) = lin.A * pm.phi.middleRows(n * (k - 1), n);
    pm.gamma.middleRows(n * k, n) = lin.A * pm.gamma.middleRows(n * (k - 1), n);
    pm.gamma.block(n * k, m * (k - 1), n, m) = lin.B;
  }
  return pm;
}

QuadraticProgram condense_mpc(const DynamicsModel& model, const StageCost& cost,
                              int horizon, const Vector& x0,
                              const Vector& x_terminal, const ConstraintSet& cs) {
  if (horizon < 1) throw ConfigError("condense_mpc: horizon must be positive");
  if (cost.is_indicator()) {
    throw ConfigError("condense_mpc: requires a quadratic stage cost");
  }
  const LinearForm& lin = model.linear_form();
  const int n = model.state_dim();
  const int m = model.input_dim();
  if (x0.size() != n || x_terminal.size() != n) {
    throw ConfigError("condense_mpc: state dimension mismatch");
  }
  const PredictionMap pm = build_prediction(lin, horizon);
  const int nz = m * horizon;

  // Stage weights over x_0..x_{N-1}.
  Matrix H = Matrix::Zero(nz, nz);
  Vector f = Vector::Zero(nz);
  double constant = 0.0;
  const Matrix Q = cost.state_weights.asDiagonal();
  for (int k = 0; k < horizon; ++k) {
    const Matrix Gk = pm.gamma.middleRows(n * k, n);
    const Vector ek = pm.phi.middleRows(n * k, n) * x0 - cost.target;
    H += 2.0 * Gk.transpose() * Q * Gk;
    f += 2.0 * Gk.transpose() * (Q * ek);
    constant += ek.dot(Q * ek);
    for (int i = 0; i < m; ++i) H(m * k + i, m * k + i) += 2.0 * cost.input_weights(i);
  }

  QuadraticProgram qp;
  qp.hessian = 0.5 * (H + H.transpose());
  qp.linear = f;
  qp.constant = constant;
  qp.eq_matrix = pm.gamma.middleRows(n * horizon, n);
  qp.eq_rhs = x_terminal - pm.phi.middleRows(n * horizon, n) * x0;

  std::vector<Vector> rows;
  std::vector<double> rhs;
  for (int k = 0; k < horizon; ++k) {
    for (int i = 0; i < m; ++i) {
      Vector e = Vector::Zero(nz);
      e(m * k + i) = 1.0;
      if (std::isfinite(cs.input_upper(i))) {
        rows.push_back(e);
        rhs.push_back(cs.input_upper(i));
      }
      if (std::isfinite(cs.input_lower(i))) {
        rows.push_back(-e);
        rhs.push_back(-cs.input_lower(i));
      }
    }
  }
  for (int k = 1; k < horizon; ++k) {
    const Matrix Gk = pm.gamma.middleRows(n * k, n);
    const Vector free = pm.phi.middleRows(n * k, n) * x0;
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(cs.state_upper(i))) {
        rows.push_back(Gk.row(i).transpose());
        rhs.push_back(cs.state_upper(i) - free(i));
      }
      if (std::isfinite(cs.state_lower(i))) {
        rows.push_back(-Gk.row(i).transpose());
        rhs.push_back(free(i) - cs.state_lower(i));
      }
    }
  }
  qp.ineq_matrix.resize(static_cast<Eigen::Index>(rows.size()), nz);
  qp.ineq_rhs.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    qp.ineq_matrix.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    qp.ineq_rhs(static_cast<Eigen::Index>(r)) = rhs[r];
  }
  return qp;
}

}  // namespace lmpc
