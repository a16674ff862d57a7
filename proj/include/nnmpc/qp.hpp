#pragma once

#include <Eigen/Dense>

#include "nnmpc/model.hpp"

namespace nnmpc {

/// Strictly convex dense quadratic program
///   min  1/2 x'Hx + c'x
///   s.t. A x  = b        (equalities)
///        G x <= h        (inequalities)
struct QpProblem {
  Mat hessian;   // H, symmetric positive definite
  Vec gradient;  // c
  Mat eq_jac;    // A (may have zero rows)
  Vec eq_rhs;    // b
  Mat ineq_jac;  // G (may have zero rows)
  Vec ineq_rhs;  // h
};

enum class QpStatus { optimal, infeasible, max_iter, numerical_error };

struct QpSolution {
  Vec x;
  Vec eq_mult;    // multipliers of A x = b (free sign)
  Vec ineq_mult;  // multipliers of G x <= h (>= 0, zero when inactive)
  QpStatus status = QpStatus::numerical_error;
  int iterations = 0;  // active-set changes
};

struct QpSettings {
  double feas_tol = 1e-11;   // violation threshold for adding a constraint
  double dep_tol = 1e-12;    // step-direction norm below which the new
                             // constraint normal counts as dependent
  int max_changes = 0;       // 0 -> 10 * (n + m) heuristic
};

/// Dual active-set solve. Starts from the equality-constrained minimizer and
/// adds violated inequalities one at a time; each active-set change re-solves
/// the dense KKT system through a Cholesky factorization of H and of the
/// active-constraint Schur complement. Ties in blocking constraints are broken
/// by lowest index. Requires H positive definite and A of full row rank.
QpSolution solve_qp(const QpProblem& qp, const QpSettings& settings = {});

}  // namespace nnmpc
