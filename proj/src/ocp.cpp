#include "nnmpc/ocp.hpp"

#include <cmath>
#include <limits>

#include "nnmpc/errors.hpp"

namespace nnmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_symmetric_psd(const Mat& m, const char* name, bool strict) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument(std::string(name) + " must be square");
  }
  if ((m - m.transpose()).lpNorm<Eigen::Infinity>() > 1e-10 * (1.0 + m.norm())) {
    throw std::invalid_argument(std::string(name) + " must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  const double min_eig = es.eigenvalues().minCoeff();
  if (strict ? !(min_eig > 0.0) : min_eig < -1e-10) {
    throw std::invalid_argument(std::string(name) +
                                (strict ? " must be positive definite"
                                        : " must be positive semidefinite"));
  }
}

}  // namespace

Mat ParametricNlp::stationarity_param_jacobian(const Vec&, const Vec&, const Vec&) const {
  return Mat::Zero(dim(), param_dim());
}

Mat ParametricNlp::eq_param_jacobian(const Vec&) const {
  return Mat::Zero(num_eq(), param_dim());
}

Mat ParametricNlp::ineq_param_jacobian(const Vec&) const {
  return Mat::Zero(num_ineq(), param_dim());
}

double ParametricNlp::ineq_scale(int) const { return 1.0; }

Vec ParametricNlp::default_initial_guess() const { return Vec::Zero(dim()); }

void OcpSpec::validate() const {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  const int nx = state_dim();
  const int nu = input_dim();
  if (q.rows() != nx || p_term.rows() != nx || r.rows() != nu) {
    throw std::invalid_argument("weight matrix dimensions do not match the model");
  }
  check_symmetric_psd(q, "Q", false);
  check_symmetric_psd(p_term, "P", false);
  check_symmetric_psd(r, "R", true);
  if (state_lower.size() != nx || state_upper.size() != nx ||
      input_lower.size() != nu || input_upper.size() != nu) {
    throw std::invalid_argument("bound vector dimensions do not match the model");
  }
  if ((state_lower.array() > state_upper.array()).any() ||
      (input_lower.array() > input_upper.array()).any()) {
    throw std::invalid_argument("lower bounds must not exceed upper bounds");
  }
}

OcpSpec default_pendulum_spec() {
  OcpSpec spec{make_pendulum_model(),
               20,
               Vec{{10.0, 1.0}}.asDiagonal(),
               Mat::Constant(1, 1, 0.1),
               Vec{{10.0, 1.0}}.asDiagonal(),
               Vec{{-2.0 * M_PI, -1.0}},
               Vec{{2.0 * M_PI, 1.0}},
               Vec{{-15.0}},
               Vec{{15.0}}};
  spec.validate();
  return spec;
}

NlpInstance::NlpInstance(OcpSpec spec, Vec initial_state)
    : spec_(std::move(spec)), x_init_(std::move(initial_state)) {
  spec_.validate();
  const int nx = spec_.state_dim();
  const int nu = spec_.input_dim();
  const int n = spec_.horizon;
  if (x_init_.size() != nx) {
    throw std::invalid_argument("initial state dimension mismatch");
  }
  n_xi_ = (n + 1) * nx + n * nu;
  n_eq_ = (n + 1) * nx;

  cost_hess_ = Mat::Zero(n_xi_, n_xi_);
  for (int k = 0; k < n; ++k) {
    cost_hess_.block(state_offset(k), state_offset(k), nx, nx) = 2.0 * spec_.q;
    cost_hess_.block(input_offset(k), input_offset(k), nu, nu) = 2.0 * spec_.r;
  }
  cost_hess_.block(state_offset(n), state_offset(n), nx, nx) = 2.0 * spec_.p_term;

  // State bounds on stages 1..N, input bounds on stages 0..N-1; upper before
  // lower per dimension, infinite bounds skipped.
  for (int k = 1; k <= n; ++k) {
    for (int i = 0; i < nx; ++i) {
      const int var = state_offset(k) + i;
      if (std::isfinite(spec_.state_upper[i])) {
        bounds_.push_back({var, 1.0, spec_.state_upper[i]});
      }
      if (std::isfinite(spec_.state_lower[i])) {
        bounds_.push_back({var, -1.0, spec_.state_lower[i]});
      }
    }
  }
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < nu; ++i) {
      const int var = input_offset(k) + i;
      if (std::isfinite(spec_.input_upper[i])) {
        bounds_.push_back({var, 1.0, spec_.input_upper[i]});
      }
      if (std::isfinite(spec_.input_lower[i])) {
        bounds_.push_back({var, -1.0, spec_.input_lower[i]});
      }
    }
  }

  ineq_jac_ = Mat::Zero(static_cast<int>(bounds_.size()), n_xi_);
  for (size_t i = 0; i < bounds_.size(); ++i) {
    ineq_jac_(static_cast<int>(i), bounds_[i].variable) = bounds_[i].sign;
  }
}

void NlpInstance::set_param(const Vec& p) {
  if (p.size() != spec_.state_dim()) {
    throw std::invalid_argument("parameter dimension mismatch");
  }
  x_init_ = p;
}

double NlpInstance::cost(const Vec& xi) const {
  const int nx = spec_.state_dim();
  const int nu = spec_.input_dim();
  double total = 0.0;
  for (int k = 0; k < spec_.horizon; ++k) {
    const auto xk = xi.segment(state_offset(k), nx);
    const auto uk = xi.segment(input_offset(k), nu);
    total += xk.dot(spec_.q * xk) + uk.dot(spec_.r * uk);
  }
  const auto xn = xi.segment(state_offset(spec_.horizon), nx);
  total += xn.dot(spec_.p_term * xn);
  return total;
}

Vec NlpInstance::cost_grad(const Vec& xi) const { return cost_hess_ * xi; }

Vec NlpInstance::eq_violation(const Vec& xi) const {
  const int nx = spec_.state_dim();
  const int nu = spec_.input_dim();
  Vec e(n_eq_);
  e.head(nx) = xi.head(nx) - x_init_;
  for (int k = 0; k < spec_.horizon; ++k) {
    const Vec xk = xi.segment(state_offset(k), nx);
    const Vec uk = xi.segment(input_offset(k), nu);
    e.segment((k + 1) * nx, nx) =
        xi.segment(state_offset(k + 1), nx) - spec_.model.step(xk, uk);
  }
  return e;
}

Mat NlpInstance::eq_jacobian(const Vec& xi) const {
  const int nx = spec_.state_dim();
  const int nu = spec_.input_dim();
  Mat jac = Mat::Zero(n_eq_, n_xi_);
  jac.block(0, 0, nx, nx).setIdentity();
  Mat a(nx, nx), b(nx, nu);
  for (int k = 0; k < spec_.horizon; ++k) {
    const Vec xk = xi.segment(state_offset(k), nx);
    const Vec uk = xi.segment(input_offset(k), nu);
    spec_.model.step_jacobians(xk, uk, a, b);
    const int row = (k + 1) * nx;
    jac.block(row, state_offset(k), nx, nx) = -a;
    jac.block(row, state_offset(k + 1), nx, nx).setIdentity();
    jac.block(row, input_offset(k), nx, nu) = -b;
  }
  return jac;
}

Vec NlpInstance::ineq_value(const Vec& xi) const {
  Vec g(static_cast<int>(bounds_.size()));
  for (size_t i = 0; i < bounds_.size(); ++i) {
    const BoundRow& row = bounds_[i];
    g[static_cast<int>(i)] = row.sign * (xi[row.variable] - row.bound);
  }
  return g;
}

Mat NlpInstance::lagrangian_hessian(const Vec& xi, const Vec& eq_mult,
                                    const Vec& /*ineq_mult*/) const {
  // Bounds are affine, so only the dynamics equalities add curvature. The
  // second derivative of nu'f is taken by central differences of the analytic
  // step Jacobians.
  const int nx = spec_.state_dim();
  const int nu = spec_.input_dim();
  const int nv = nx + nu;
  const double delta = 1e-6;

  Mat hess = cost_hess_;
  Mat a(nx, nx), b(nx, nu), jac_t_nu(nv, 2);
  for (int k = 0; k < spec_.horizon; ++k) {
    const Vec nu_k = eq_mult.segment((k + 1) * nx, nx);
    if (nu_k.lpNorm<Eigen::Infinity>() == 0.0) continue;
    Vec v(nv);
    v << xi.segment(state_offset(k), nx), xi.segment(input_offset(k), nu);

    Mat curv(nv, nv);
    for (int c = 0; c < nv; ++c) {
      Vec vp = v, vm = v;
      vp[c] += delta;
      vm[c] -= delta;
      Vec grad_p(nv), grad_m(nv);
      spec_.model.step_jacobians(vp.head(nx), vp.tail(nu), a, b);
      grad_p.head(nx) = a.transpose() * nu_k;
      grad_p.tail(nu) = b.transpose() * nu_k;
      spec_.model.step_jacobians(vm.head(nx), vm.tail(nu), a, b);
      grad_m.head(nx) = a.transpose() * nu_k;
      grad_m.tail(nu) = b.transpose() * nu_k;
      curv.col(c) = (grad_p - grad_m) / (2.0 * delta);
    }
    curv = 0.5 * (curv + curv.transpose());

    // e_{k+1} = x_{k+1} - f(x_k, u_k): the f term enters with a minus sign.
    hess.block(state_offset(k), state_offset(k), nx, nx) -= curv.topLeftCorner(nx, nx);
    hess.block(state_offset(k), input_offset(k), nx, nu) -= curv.topRightCorner(nx, nu);
    hess.block(input_offset(k), state_offset(k), nu, nx) -= curv.bottomLeftCorner(nu, nx);
    hess.block(input_offset(k), input_offset(k), nu, nu) -= curv.bottomRightCorner(nu, nu);
  }
  return hess;
}

Mat NlpInstance::eq_param_jacobian(const Vec&) const {
  Mat jac = Mat::Zero(n_eq_, param_dim());
  jac.topLeftCorner(param_dim(), param_dim()) = -Mat::Identity(param_dim(), param_dim());
  return jac;
}

double NlpInstance::ineq_scale(int i) const {
  return std::max(1.0, std::abs(bounds_[static_cast<size_t>(i)].bound));
}

Vec NlpInstance::default_initial_guess() const {
  // Zero-input rollout projected into the state box after every step: close
  // to feasible near stable regions, bounded where the open-loop dynamics
  // diverge. Falls back to a constant-state guess on numerical failure.
  const int nx = spec_.state_dim();
  Vec xi = Vec::Zero(n_xi_);
  xi.head(nx) = x_init_;
  const Vec u0 = Vec::Zero(spec_.input_dim());
  for (int k = 0; k < spec_.horizon; ++k) {
    Vec next;
    try {
      next = spec_.model.step(xi.segment(state_offset(k), nx), u0);
    } catch (const NumericalError&) {
      next = x_init_;
    }
    for (int i = 0; i < nx; ++i) {
      if (std::isfinite(spec_.state_upper[i])) next[i] = std::min(next[i], spec_.state_upper[i]);
      if (std::isfinite(spec_.state_lower[i])) next[i] = std::max(next[i], spec_.state_lower[i]);
      if (!std::isfinite(next[i])) next[i] = x_init_[i];
    }
    xi.segment(state_offset(k + 1), nx) = next;
  }
  return xi;
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "ok";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::infeasible: return "infeasible";
  }
  return "unknown";
}

double kkt_residual(const ParametricNlp& nlp, const Vec& xi, const Vec& ineq_mult,
                    const Vec& eq_mult) {
  if (xi.size() != nlp.dim() || ineq_mult.size() != nlp.num_ineq() ||
      eq_mult.size() != nlp.num_eq()) {
    throw std::invalid_argument("kkt_residual: dimension mismatch");
  }
  Vec stat = nlp.cost_grad(xi);
  if (nlp.num_eq() > 0) stat += nlp.eq_jacobian(xi).transpose() * eq_mult;
  if (nlp.num_ineq() > 0) stat += nlp.ineq_jacobian(xi).transpose() * ineq_mult;
  double res = stat.lpNorm<Eigen::Infinity>();

  if (nlp.num_eq() > 0) {
    res = std::max(res, nlp.eq_violation(xi).lpNorm<Eigen::Infinity>());
  }
  if (nlp.num_ineq() > 0) {
    const Vec g = nlp.ineq_value(xi);
    res = std::max(res, g.maxCoeff());                    // primal violation
    res = std::max(res, -ineq_mult.minCoeff());           // dual violation
    res = std::max(res, (ineq_mult.array() * g.array()).abs().maxCoeff());
  }
  return std::max(res, 0.0);
}

SqpSolver::SqpSolver(SqpSettings settings) : settings_(settings) {}

namespace {

double merit_infeasibility(const Vec& e, const Vec& g) {
  double total = e.cwiseAbs().sum();
  for (int i = 0; i < g.size(); ++i) total += std::max(0.0, g[i]);
  return total;
}

// Retries the QP with a small diagonal shift when the Hessian is only
// semidefinite (the Cholesky start of the active-set method needs PD).
QpSolution solve_subproblem(QpProblem qp) {
  QpSolution s = solve_qp(qp);
  double shift = 1e-10 * (1.0 + qp.hessian.lpNorm<Eigen::Infinity>());
  for (int tries = 0; s.status == QpStatus::numerical_error && tries < 4; ++tries) {
    qp.hessian.diagonal().array() += shift;
    shift *= 100.0;
    s = solve_qp(qp);
  }
  return s;
}

// Relaxed subproblem for infeasible linearizations: one slack per inequality
// row, penalized in l1 with weight mu (elastic mode). The equalities stay
// hard; in the multiple-shooting structure they are always consistent.
// Returns the step, the original-row multipliers, and the residual slacks.
struct ElasticStep {
  Vec step;
  Vec eq_mult;
  Vec ineq_mult;
  Vec slack;
  bool ok = false;
};

ElasticStep solve_elastic(const QpProblem& qp, double mu) {
  const int n = static_cast<int>(qp.hessian.rows());
  const int mi = static_cast<int>(qp.ineq_jac.rows());

  QpProblem relaxed;
  relaxed.hessian = Mat::Zero(n + mi, n + mi);
  relaxed.hessian.topLeftCorner(n, n) = qp.hessian;
  relaxed.hessian.bottomRightCorner(mi, mi) = 1e-6 * mu * Mat::Identity(mi, mi);
  relaxed.gradient = Vec::Zero(n + mi);
  relaxed.gradient.head(n) = qp.gradient;
  relaxed.gradient.tail(mi).setConstant(mu);
  relaxed.eq_jac = Mat::Zero(qp.eq_jac.rows(), n + mi);
  relaxed.eq_jac.leftCols(n) = qp.eq_jac;
  relaxed.eq_rhs = qp.eq_rhs;
  relaxed.ineq_jac = Mat::Zero(2 * mi, n + mi);
  relaxed.ineq_jac.topLeftCorner(mi, n) = qp.ineq_jac;
  relaxed.ineq_jac.topRightCorner(mi, mi) = -Mat::Identity(mi, mi);
  relaxed.ineq_jac.bottomRightCorner(mi, mi) = -Mat::Identity(mi, mi);
  relaxed.ineq_rhs = Vec::Zero(2 * mi);
  relaxed.ineq_rhs.head(mi) = qp.ineq_rhs;

  const QpSolution s = solve_qp(relaxed);
  ElasticStep out;
  if (s.status != QpStatus::optimal) return out;
  out.step = s.x.head(n);
  out.slack = s.x.tail(mi);
  out.eq_mult = s.eq_mult;
  out.ineq_mult = s.ineq_mult.head(mi);
  out.ok = true;
  return out;
}

}  // namespace

OcpSolution SqpSolver::solve(ParametricNlp& nlp,
                             const std::optional<Vec>& warm_start) const {
  const int n = nlp.dim();
  OcpSolution sol;
  sol.decision = warm_start ? *warm_start : nlp.default_initial_guess();
  if (sol.decision.size() != n) {
    throw std::invalid_argument("warm start dimension mismatch");
  }
  sol.eq_mult = Vec::Zero(nlp.num_eq());
  sol.ineq_mult = Vec::Zero(nlp.num_ineq());

  double penalty = 1.0;
  double prev_infeas = std::numeric_limits<double>::infinity();
  bool prev_elastic = false;

  for (int it = 0; it < settings_.max_iter; ++it) {
    sol.iterations = it;
    const Vec e = nlp.eq_violation(sol.decision);
    const Vec g = nlp.ineq_value(sol.decision);
    const Vec grad = nlp.cost_grad(sol.decision);

    // Restoration made no headway on the constraint violation: the point is
    // (locally) infeasible and further elastic steps only inflate penalties.
    const double current_infeas = merit_infeasibility(e, g);
    if (prev_elastic && current_infeas > 1e-8 &&
        current_infeas > prev_infeas - 1e-12 * (1.0 + prev_infeas)) {
      sol.status = SolveStatus::infeasible;
      break;
    }
    prev_infeas = current_infeas;
    prev_elastic = false;

    QpProblem qp;
    qp.hessian = nlp.cost_hessian(sol.decision);
    qp.gradient = grad;
    qp.eq_jac = nlp.eq_jacobian(sol.decision);
    qp.eq_rhs = -e;
    qp.ineq_jac = nlp.ineq_jacobian(sol.decision);
    qp.ineq_rhs = -g;

    QpSolution qps = solve_subproblem(qp);
    Vec step;
    if (qps.status == QpStatus::optimal) {
      step = qps.x;
      sol.eq_mult = qps.eq_mult;
      sol.ineq_mult = qps.ineq_mult;
    } else if (qps.status == QpStatus::infeasible && nlp.num_ineq() > 0) {
      // The linearization is infeasible; take an elastic restoration step
      // that trades constraint violation against the same l1 penalty. The
      // elastic weight is held fixed so restoration can settle.
      const double mu_elastic = std::max(penalty, 1e3);
      const ElasticStep elastic = solve_elastic(qp, mu_elastic);
      if (!elastic.ok) {
        sol.status = SolveStatus::max_iter;
        sol.kkt_residual = kkt_residual(nlp, sol.decision, sol.ineq_mult, sol.eq_mult);
        break;
      }
      step = elastic.step;
      sol.eq_mult = elastic.eq_mult;
      sol.ineq_mult = elastic.ineq_mult;
      penalty = std::max(penalty, mu_elastic);
      prev_elastic = true;
      if (step.lpNorm<Eigen::Infinity>() <=
              1e-8 * (1.0 + sol.decision.lpNorm<Eigen::Infinity>()) &&
          elastic.slack.lpNorm<Eigen::Infinity>() > 1e-8) {
        // Stationary point of the constraint violation: locally infeasible.
        sol.status = SolveStatus::infeasible;
        sol.kkt_residual = kkt_residual(nlp, sol.decision, sol.ineq_mult, sol.eq_mult);
        break;
      }
    } else {
      sol.status = qps.status == QpStatus::infeasible ? SolveStatus::infeasible
                                                      : SolveStatus::max_iter;
      sol.kkt_residual = kkt_residual(nlp, sol.decision, sol.ineq_mult, sol.eq_mult);
      break;
    }

    sol.kkt_residual = kkt_residual(nlp, sol.decision, sol.ineq_mult, sol.eq_mult);
    if (sol.kkt_residual <= settings_.kkt_tol) {
      sol.status = SolveStatus::converged;
      break;
    }

    if (!prev_elastic) {
      // Elastic multipliers sit at the elastic weight itself; ratcheting the
      // merit penalty from them would grow it without bound.
      double mult_norm = 0.0;
      if (sol.eq_mult.size() > 0) mult_norm = sol.eq_mult.lpNorm<Eigen::Infinity>();
      if (sol.ineq_mult.size() > 0) {
        mult_norm = std::max(mult_norm, sol.ineq_mult.lpNorm<Eigen::Infinity>());
      }
      penalty = std::max(penalty, 1.1 * mult_norm + 1.0);
    }

    const double infeas = merit_infeasibility(e, g);
    // Linearized infeasibility after the step (zero for a plain QP step, the
    // residual slack for an elastic one).
    double lin_infeas = 0.0;
    if (nlp.num_ineq() > 0) {
      const Vec g_lin = g + qp.ineq_jac * step;
      for (int i = 0; i < g_lin.size(); ++i) lin_infeas += std::max(0.0, g_lin[i]);
    }
    const double merit0 = nlp.cost(sol.decision) + penalty * infeas;
    const double descent =
        std::min(0.0, grad.dot(step) - penalty * (infeas - lin_infeas));

    double alpha = 1.0;
    bool accepted = false;
    double merit_trial = merit0;
    for (int ls = 0; ls < settings_.max_line_search; ++ls) {
      const Vec trial = sol.decision + alpha * step;
      const Vec e_t = nlp.eq_violation(trial);
      const Vec g_t = nlp.ineq_value(trial);
      merit_trial = nlp.cost(trial) + penalty * merit_infeasibility(e_t, g_t);
      if (std::isfinite(merit_trial) &&
          merit_trial <= merit0 + settings_.armijo_coeff * alpha * descent) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      sol.status = SolveStatus::max_iter;
      break;
    }
    sol.decision += alpha * step;
    sol.merit_trace.push_back({penalty, merit0, merit_trial, alpha});
  }

  if (sol.status == SolveStatus::converged) {
    // keep converged residual
  } else {
    sol.kkt_residual = kkt_residual(nlp, sol.decision, sol.ineq_mult, sol.eq_mult);
  }
  sol.input = sol.decision.segment(nlp.output_offset(), nlp.output_dim());
  return sol;
}

MpcController::MpcController(OcpSpec spec, SqpSettings settings)
    : nlp_(spec, Vec::Zero(spec.state_dim())), solver_(settings) {}

Vec MpcController::compute(const Vec& x) {
  nlp_.set_param(x);

  std::optional<Vec> warm;
  if (has_warm_) {
    const OcpSpec& spec = nlp_.spec();
    const int nx = spec.state_dim();
    const int nu = spec.input_dim();
    const int n = spec.horizon;
    Vec shifted = last_.decision;
    for (int k = 0; k < n; ++k) {
      shifted.segment(nlp_.state_offset(k), nx) =
          last_.decision.segment(nlp_.state_offset(k + 1), nx);
    }
    for (int k = 0; k + 1 < n; ++k) {
      shifted.segment(nlp_.input_offset(k), nu) =
          last_.decision.segment(nlp_.input_offset(k + 1), nu);
    }
    try {
      shifted.segment(nlp_.state_offset(n), nx) = spec.model.step(
          last_.decision.segment(nlp_.state_offset(n), nx),
          last_.decision.segment(nlp_.input_offset(n - 1), nu));
    } catch (const NumericalError&) {
      shifted.segment(nlp_.state_offset(n), nx) =
          last_.decision.segment(nlp_.state_offset(n), nx);
    }
    shifted.head(nx) = x;
    warm = std::move(shifted);
  }

  OcpSolution sol = solver_.solve(nlp_, warm);
  if (sol.status != SolveStatus::converged) {
    throw NumericalError(std::string("mpc law failed to converge (status ") +
                         to_string(sol.status) +
                         ", kkt residual " + std::to_string(sol.kkt_residual) + ")");
  }
  last_ = std::move(sol);
  has_warm_ = true;
  return last_.input;
}

}  // namespace nnmpc
