#include "nnmpc/sensitivity.hpp"

#include <algorithm>
#include <cmath>

#include "nnmpc/errors.hpp"

namespace nnmpc {

ActiveSet extract_active_set(const ParametricNlp& nlp, const OcpSolution& sol,
                             double tol_g, double tol_mult) {
  if (sol.status != SolveStatus::converged) {
    throw std::invalid_argument("active set requires a converged solution");
  }
  ActiveSet out;
  const Vec g = nlp.ineq_value(sol.decision);
  for (int i = 0; i < nlp.num_ineq(); ++i) {
    if (std::abs(g[i]) <= tol_g * nlp.ineq_scale(i)) {
      if (sol.ineq_mult[i] >= tol_mult) {
        out.active.push_back(i);
      } else {
        out.weakly_active.push_back(i);
      }
    }
  }
  return out;
}

Mat kkt_matrix(const ParametricNlp& nlp, const OcpSolution& sol,
               const ActiveSet& act) {
  const int n = nlp.dim();
  const int me = nlp.num_eq();
  const int ma = static_cast<int>(act.active.size());
  const int nz = n + me + ma;

  const Mat hess = nlp.lagrangian_hessian(sol.decision, sol.eq_mult, sol.ineq_mult);
  const Mat eq_jac = nlp.eq_jacobian(sol.decision);
  const Mat ineq_jac = nlp.ineq_jacobian(sol.decision);

  Mat kkt = Mat::Zero(nz, nz);
  kkt.topLeftCorner(n, n) = hess;
  if (me > 0) {
    kkt.block(n, 0, me, n) = eq_jac;
    kkt.block(0, n, n, me) = eq_jac.transpose();
  }
  for (int j = 0; j < ma; ++j) {
    kkt.block(n + me + j, 0, 1, n) = ineq_jac.row(act.active[j]);
    kkt.block(0, n + me + j, n, 1) = ineq_jac.row(act.active[j]).transpose();
  }
  return kkt;
}

SensitivityResult solve_sensitivity(const ParametricNlp& nlp, const OcpSolution& sol,
                                    const ActiveSet& act) {
  SensitivityResult res;
  res.degenerate = !act.weakly_active.empty();

  const int n = nlp.dim();
  const int me = nlp.num_eq();
  const int ma = static_cast<int>(act.active.size());
  const int np = nlp.param_dim();

  const Mat kkt = kkt_matrix(nlp, sol, act);
  Eigen::PartialPivLU<Mat> lu(kkt);
  const double rcond = lu.rcond();
  res.condition_estimate = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!(rcond > 1e-12)) res.degenerate = true;

  // -dC/dp, stacked like C = [grad_xi L; e; g_active].
  Mat rhs = Mat::Zero(n + me + ma, np);
  rhs.topRows(n) =
      -nlp.stationarity_param_jacobian(sol.decision, sol.eq_mult, sol.ineq_mult);
  if (me > 0) rhs.middleRows(n, me) = -nlp.eq_param_jacobian(sol.decision);
  if (ma > 0) {
    const Mat gp = nlp.ineq_param_jacobian(sol.decision);
    for (int j = 0; j < ma; ++j) rhs.row(n + me + j) = -gp.row(act.active[j]);
  }

  res.dz_dp = lu.solve(rhs);
  if (!res.dz_dp.allFinite()) res.degenerate = true;

  if (!res.degenerate) {
    res.du0_dx = res.dz_dp.middleRows(nlp.output_offset(), nlp.output_dim());
  }
  return res;
}

Mat control_law_jacobian(const OcpSpec& spec, const Vec& x, const SqpSettings& settings) {
  NlpInstance nlp(spec, x);
  const OcpSolution sol = SqpSolver(settings).solve(nlp);
  if (sol.status != SolveStatus::converged) return {};
  const SensitivityResult sens =
      solve_sensitivity(nlp, sol, extract_active_set(nlp, sol));
  return sens.degenerate ? Mat{} : sens.du0_dx;
}

}  // namespace nnmpc
