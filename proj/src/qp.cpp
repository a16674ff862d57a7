#include "nnmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace nnmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Solves the active-set KKT system
//   [H  M'] [z]   [r]
//   [M  0 ] [w] = [0]
// by block elimination: z = Hinv (r - M' w), w = S^{-1} M Hinv r with the
// Schur complement S = M Hinv M'.  `rows` selects the active rows of M.
struct KktFactors {
  const Eigen::LLT<Mat>* h_llt;
  Mat m;  // stacked active rows
  Eigen::LLT<Mat> s_llt;
  bool ok = false;

  void factor(const Eigen::LLT<Mat>& h, Mat active_rows) {
    h_llt = &h;
    m = std::move(active_rows);
    if (m.rows() == 0) {
      ok = true;
      return;
    }
    const Mat hinv_mt = h.solve(m.transpose());
    Mat s = m * hinv_mt;
    s = 0.5 * (s + s.transpose());
    s_llt.compute(s);
    ok = (s_llt.info() == Eigen::Success);
  }

  // r = right-hand side of the stationarity block.
  void solve(const Vec& r, Vec& z, Vec& w) const {
    if (m.rows() == 0) {
      z = h_llt->solve(r);
      w.resize(0);
      return;
    }
    const Vec hinv_r = h_llt->solve(r);
    w = s_llt.solve(m * hinv_r);
    z = h_llt->solve(r - m.transpose() * w);
  }
};

}  // namespace

QpSolution solve_qp(const QpProblem& qp, const QpSettings& settings) {
  const int n = static_cast<int>(qp.hessian.rows());
  const int me = static_cast<int>(qp.eq_jac.rows());
  const int mi = static_cast<int>(qp.ineq_jac.rows());

  if (qp.hessian.cols() != n || qp.gradient.size() != n ||
      (me > 0 && qp.eq_jac.cols() != n) || qp.eq_rhs.size() != me ||
      (mi > 0 && qp.ineq_jac.cols() != n) || qp.ineq_rhs.size() != mi) {
    throw std::invalid_argument("qp: inconsistent dimensions");
  }

  QpSolution sol;
  sol.eq_mult = Vec::Zero(me);
  sol.ineq_mult = Vec::Zero(mi);

  Eigen::LLT<Mat> h_llt(qp.hessian);
  if (h_llt.info() != Eigen::Success) {
    sol.status = QpStatus::numerical_error;
    return sol;
  }

  std::vector<int> active;  // indices into the inequality rows, insertion order
  auto stack_active = [&]() {
    Mat m(me + static_cast<int>(active.size()), n);
    if (me > 0) m.topRows(me) = qp.eq_jac;
    for (size_t j = 0; j < active.size(); ++j) {
      m.row(me + static_cast<int>(j)) = qp.ineq_jac.row(active[j]);
    }
    return m;
  };

  KktFactors kkt;
  kkt.factor(h_llt, stack_active());
  if (!kkt.ok) {
    sol.status = QpStatus::numerical_error;
    return sol;
  }

  // Equality-constrained minimizer: Hx + c + A'nu = 0, Ax = b.
  {
    Vec z, w;
    kkt.solve(-qp.gradient, z, w);
    if (me > 0) {
      // Shift to satisfy Ax = b: x = z0 + correction through the Schur system.
      const Vec resid = qp.eq_rhs - qp.eq_jac * z;
      const Vec dw = kkt.s_llt.solve(resid);
      sol.x = z + h_llt.solve(qp.eq_jac.transpose() * dw);
      sol.eq_mult = w - dw;
    } else {
      sol.x = z;
    }
    if (!sol.x.allFinite()) {
      sol.status = QpStatus::numerical_error;
      return sol;
    }
  }

  const int max_changes =
      settings.max_changes > 0 ? settings.max_changes : 10 * (n + me + mi) + 100;

  Vec viol = mi > 0 ? Vec(qp.ineq_jac * sol.x - qp.ineq_rhs) : Vec();

  for (sol.iterations = 0; sol.iterations < max_changes; ++sol.iterations) {
    // Most violated inactive inequality; ties by lowest index.
    int p = -1;
    double worst = 0.0;
    for (int i = 0; i < mi; ++i) {
      if (std::find(active.begin(), active.end(), i) != active.end()) continue;
      const double tol = settings.feas_tol * (1.0 + std::abs(qp.ineq_rhs[i]));
      if (viol[i] > tol && viol[i] > worst) {
        worst = viol[i];
        p = i;
      }
    }
    if (p < 0) {
      sol.status = QpStatus::optimal;
      return sol;
    }

    const Vec a_p = qp.ineq_jac.row(p).transpose();
    double v_p = viol[p];
    double lambda_p = 0.0;

    // Inner loop: drive the violation of p to zero, dropping dual-blocking
    // constraints on the way.
    bool added = false;
    while (sol.iterations < max_changes) {
      Vec z, w;
      kkt.solve(a_p, z, w);
      const double zdot = a_p.dot(z);
      const bool dependent = z.lpNorm<Eigen::Infinity>() <=
                             settings.dep_tol * (1.0 + a_p.lpNorm<Eigen::Infinity>());

      const double t_full = (!dependent && zdot > 0.0) ? v_p / zdot : kInf;

      // Dual blocking step: first active inequality whose multiplier hits zero.
      double t_dual = kInf;
      int drop_pos = -1;
      for (size_t j = 0; j < active.size(); ++j) {
        const double rate = w[me + static_cast<int>(j)];
        if (rate > settings.dep_tol) {
          const double t = sol.ineq_mult[active[j]] / rate;
          if (t < t_dual) {
            t_dual = t;
            drop_pos = static_cast<int>(j);
          } else if (t == t_dual && drop_pos >= 0 &&
                     active[j] < active[drop_pos]) {
            drop_pos = static_cast<int>(j);
          }
        }
      }

      const double t = std::min(t_full, t_dual);
      if (t == kInf) {
        sol.status = QpStatus::infeasible;
        return sol;
      }

      if (t > 0.0) {
        sol.x -= t * z;
        if (me > 0) sol.eq_mult -= t * w.head(me);
        for (size_t j = 0; j < active.size(); ++j) {
          sol.ineq_mult[active[j]] -= t * w[me + static_cast<int>(j)];
        }
        lambda_p += t;
        v_p -= t * zdot;
      }

      if (t_full <= t_dual) {
        active.push_back(p);
        sol.ineq_mult[p] = lambda_p;
        added = true;
      } else {
        sol.ineq_mult[active[drop_pos]] = 0.0;
        active.erase(active.begin() + drop_pos);
      }
      ++sol.iterations;
      kkt.factor(h_llt, stack_active());
      if (!kkt.ok) {
        sol.status = QpStatus::numerical_error;
        return sol;
      }
      if (added) break;
    }
    if (!added && sol.iterations >= max_changes) break;
    viol = qp.ineq_jac * sol.x - qp.ineq_rhs;
  }

  sol.status = QpStatus::max_iter;
  return sol;
}

}  // namespace nnmpc
