#pragma once

#include <vector>

#include "nnmpc/ocp.hpp"

namespace nnmpc {

/// Partition of the inequality constraints at a converged solution.
/// `active` holds constraints tight with a clearly positive multiplier;
/// `weakly_active` holds tight constraints whose multiplier vanishes
/// (strict complementarity fails there, so one-sided derivatives would be
/// needed and the point is treated as degenerate downstream).
struct ActiveSet {
  std::vector<int> active;         // sorted, duplicate-free
  std::vector<int> weakly_active;  // sorted, disjoint from active
};

ActiveSet extract_active_set(const ParametricNlp& nlp, const OcpSolution& sol,
                             double tol_g = 1e-6, double tol_mult = 1e-6);

/// Jacobian dC/dz of the implicit active-set KKT system
///   C(z, p) = [grad_xi L; e; g_active] = 0,   z = [xi; nu; lambda_active]
/// i.e. the bordered matrix [hess L, M'; M, 0] with M the stacked equality
/// and active-inequality Jacobians.
Mat kkt_matrix(const ParametricNlp& nlp, const OcpSolution& sol,
               const ActiveSet& act);

struct SensitivityResult {
  Mat dz_dp;                  // (dim + num_eq + |active|) x param_dim
  Mat du0_dx;                 // output block of dz_dp (empty when degenerate)
  double condition_estimate = 0.0;
  bool degenerate = false;
};

/// Solves (dC/dz) (dz/dp) = -dC/dp for the parametric sensitivity of the
/// primal-dual solution and extracts the output-block rows. Marks the result
/// degenerate when strict complementarity fails at the solution or the KKT
/// matrix is close to singular (condition estimate above 1e12).
SensitivityResult solve_sensitivity(const ParametricNlp& nlp, const OcpSolution& sol,
                                    const ActiveSet& act);

/// Convenience wrapper: d kappa / d x at one state, solving the OCP first.
/// Returns an empty matrix when the solve fails or the point is degenerate.
Mat control_law_jacobian(const OcpSpec& spec, const Vec& x,
                         const SqpSettings& settings = {});

}  // namespace nnmpc
