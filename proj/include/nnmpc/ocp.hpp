#pragma once

#include <limits>
#include <memory>
#include <optional>
#include <vector>

#include "nnmpc/model.hpp"
#include "nnmpc/qp.hpp"

namespace nnmpc {

/// Parametric nonlinear program
///   min_xi  c(xi, p)   s.t.  e(xi, p) = 0,  g(xi, p) <= 0
/// with smooth data. The solver and the sensitivity machinery only see this
/// interface; the optimal control problem below is one implementation.
class ParametricNlp {
 public:
  virtual ~ParametricNlp() = default;

  virtual int dim() const = 0;
  virtual int num_eq() const = 0;
  virtual int num_ineq() const = 0;
  virtual int param_dim() const = 0;

  virtual const Vec& param() const = 0;
  virtual void set_param(const Vec& p) = 0;

  virtual double cost(const Vec& xi) const = 0;
  virtual Vec cost_grad(const Vec& xi) const = 0;
  virtual Mat cost_hessian(const Vec& xi) const = 0;

  virtual Vec eq_violation(const Vec& xi) const = 0;
  virtual Mat eq_jacobian(const Vec& xi) const = 0;

  virtual Vec ineq_value(const Vec& xi) const = 0;
  virtual Mat ineq_jacobian(const Vec& xi) const = 0;

  /// Hessian of the Lagrangian c + nu'e + lambda'g w.r.t. xi.
  virtual Mat lagrangian_hessian(const Vec& xi, const Vec& eq_mult,
                                 const Vec& ineq_mult) const = 0;

  /// Derivatives of the KKT data w.r.t. the parameter; zero by default.
  virtual Mat stationarity_param_jacobian(const Vec& xi, const Vec& eq_mult,
                                          const Vec& ineq_mult) const;
  virtual Mat eq_param_jacobian(const Vec& xi) const;
  virtual Mat ineq_param_jacobian(const Vec& xi) const;

  /// Magnitude scale of inequality i, used to scale active-set tolerances.
  virtual double ineq_scale(int i) const;

  /// Rows of the decision vector reported as the solution output (the
  /// first-input block for the optimal control problem).
  virtual int output_offset() const { return 0; }
  virtual int output_dim() const { return dim(); }

  /// Initial iterate when no warm start is supplied.
  virtual Vec default_initial_guess() const;
};

/// Weights, bounds, horizon and model of the finite-horizon optimal control
/// problem. Immutable once validated; shareable across threads.
struct OcpSpec {
  DiscreteModel model;
  int horizon = 20;  // N
  Mat q;             // state stage weight, n_x x n_x, symmetric PSD
  Mat r;             // input stage weight, n_u x n_u, symmetric PD
  Mat p_term;        // terminal weight, n_x x n_x, symmetric PSD
  Vec state_lower, state_upper;  // per-dimension, +-inf allowed
  Vec input_lower, input_upper;

  void validate() const;
  int state_dim() const { return model.state_dim(); }
  int input_dim() const { return model.input_dim(); }
};

/// Default pendulum controller setup: Q = P = diag(10, 1), R = 0.1,
/// |x1| <= 2*pi, |x2| <= 1, |u| <= 15, N = 20 at h = 0.1 s.
OcpSpec default_pendulum_spec();

/// One-sided bound row g_i(xi) = sign * xi[variable] - sign * bound <= 0.
struct BoundRow {
  int variable;
  double sign;  // +1 upper bound, -1 lower bound
  double bound;
};

/// The OCP written as a dense NLP in the stacked decision vector
/// xi = [x_0 .. x_N, u_0 .. u_{N-1}], parameterized by the measured state.
/// Dynamics and the initial condition enter as equalities, bounds as
/// one-sided inequalities on the stages k >= 1 (states) and k >= 0 (inputs);
/// the measured state is pinned by the x_0 equality alone so the problem
/// stays solvable when the plant has left the state box.
class NlpInstance final : public ParametricNlp {
 public:
  NlpInstance(OcpSpec spec, Vec initial_state);

  int dim() const override { return n_xi_; }
  int num_eq() const override { return n_eq_; }
  int num_ineq() const override { return static_cast<int>(bounds_.size()); }
  int param_dim() const override { return spec_.state_dim(); }

  const Vec& param() const override { return x_init_; }
  void set_param(const Vec& p) override;

  double cost(const Vec& xi) const override;
  Vec cost_grad(const Vec& xi) const override;
  Mat cost_hessian(const Vec& xi) const override { return cost_hess_; }

  Vec eq_violation(const Vec& xi) const override;
  Mat eq_jacobian(const Vec& xi) const override;

  Vec ineq_value(const Vec& xi) const override;
  Mat ineq_jacobian(const Vec& xi) const override { return ineq_jac_; }

  Mat lagrangian_hessian(const Vec& xi, const Vec& eq_mult,
                         const Vec& ineq_mult) const override;

  Mat eq_param_jacobian(const Vec& xi) const override;
  double ineq_scale(int i) const override;

  int output_offset() const override { return (spec_.horizon + 1) * spec_.state_dim(); }
  int output_dim() const override { return spec_.input_dim(); }

  Vec default_initial_guess() const override;

  const OcpSpec& spec() const { return spec_; }
  const std::vector<BoundRow>& bound_rows() const { return bounds_; }
  int state_offset(int k) const { return k * spec_.state_dim(); }
  int input_offset(int k) const {
    return (spec_.horizon + 1) * spec_.state_dim() + k * spec_.input_dim();
  }

 private:
  OcpSpec spec_;
  Vec x_init_;
  int n_xi_;
  int n_eq_;
  Mat cost_hess_;
  Mat ineq_jac_;
  std::vector<BoundRow> bounds_;
};

enum class SolveStatus { converged, max_iter, infeasible };

const char* to_string(SolveStatus s);

/// Merit bookkeeping of one accepted SQP step (for diagnostics and the
/// monotonicity checks in the tests).
struct MeritRecord {
  double penalty;
  double before;
  double after;
  double step_length;
};

struct OcpSolution {
  Vec decision;    // xi*
  Vec eq_mult;     // nu*
  Vec ineq_mult;   // lambda* >= 0
  Vec input;       // u_0* (output block of xi*)
  SolveStatus status = SolveStatus::max_iter;
  double kkt_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  std::vector<MeritRecord> merit_trace;
};

struct SqpSettings {
  double kkt_tol = 1e-8;
  int max_iter = 100;
  double armijo_coeff = 1e-4;
  int max_line_search = 40;
};

/// Max-norm KKT residual: stationarity, primal feasibility, dual feasibility
/// and complementarity of (xi, lambda, nu).
double kkt_residual(const ParametricNlp& nlp, const Vec& xi, const Vec& ineq_mult,
                    const Vec& eq_mult);

/// Sequential quadratic programming with the exact quadratic-cost Hessian,
/// linearized constraints, a dense active-set QP subproblem and an l1-merit
/// backtracking line search.
class SqpSolver {
 public:
  explicit SqpSolver(SqpSettings settings = {});

  OcpSolution solve(ParametricNlp& nlp,
                    const std::optional<Vec>& warm_start = std::nullopt) const;

  const SqpSettings& settings() const { return settings_; }

 private:
  SqpSettings settings_;
};

/// The implicit control law: solves the OCP at the measured state and applies
/// the first input, keeping a shifted copy of the last solution as the warm
/// start for the next call. Single-threaded use; one instance per rollout.
class MpcController {
 public:
  explicit MpcController(OcpSpec spec, SqpSettings settings = {});

  /// u = kappa(x). Throws NumericalError when the solver fails to converge.
  Vec compute(const Vec& x);

  const OcpSolution& last_solution() const { return last_; }
  NlpInstance& nlp() { return nlp_; }
  void reset() { has_warm_ = false; }

 private:
  NlpInstance nlp_;
  SqpSolver solver_;
  OcpSolution last_;
  bool has_warm_ = false;
};

}  // namespace nnmpc
