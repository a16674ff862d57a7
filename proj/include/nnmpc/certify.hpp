#pragma once

#include <optional>
#include <string>

#include "nnmpc/dataset.hpp"
#include "nnmpc/mlp.hpp"

namespace nnmpc {

/// Largest singular value by power iteration on W'W (seeded start vector,
/// tolerance 1e-10, at most 10000 sweeps).
double spectral_norm(const Mat& w);

/// Certified global Lipschitz upper bound of the network: the product of the
/// layer spectral norms (tanh is 1-Lipschitz, the output layer is linear).
double lipschitz_nn_upper(const MlpParams& params);

/// Sampled lower bound: the largest input-Jacobian spectral norm over
/// uniformly drawn domain points. Tightness diagnostic for the upper bound.
double lipschitz_nn_lower_sampled(const MlpParams& params, const GridSpec& domain,
                                  int n_samples, uint64_t seed);

struct LipschitzEstimate {
  double upper = 0.0;
  double lower = 0.0;
  std::string method;
};

/// Heuristic Lipschitz estimate of the control law from the dataset: the
/// largest stored-Jacobian spectral norm cross-checked against the largest
/// pairwise difference quotient, inflated by a safety factor for the upper
/// value. Always labeled as an estimate, never a certificate.
LipschitzEstimate lipschitz_mpc_estimate(const Dataset& data,
                                         double safety_factor = 1.5);

/// delta = (epsilon - epsilon_d) / (l_mpc + l_nn). Throws
/// BoundInfeasibleError when epsilon_d >= epsilon and std::invalid_argument
/// when the Lipschitz sum is not positive.
double required_delta(double epsilon, double epsilon_d, double l_mpc, double l_nn);

struct BoundReport {
  double epsilon = 0.0;
  double epsilon_d = 0.0;
  LipschitzEstimate l_mpc;
  LipschitzEstimate l_nn;
  double delta_required = std::numeric_limits<double>::quiet_NaN();
  double delta_actual = 0.0;
  bool certified = false;
  std::optional<std::string> infeasible_reason;  // set when epsilon_d >= epsilon
  std::optional<double> empirical_max_error;     // probe result, when requested
  int probe_points = 0;
  int probe_failures = 0;
};

struct CertifyOptions {
  double epsilon = 5.0;
  int probe_factor = 0;  // 0 -> no empirical probe; else per-axis multiplier
  int probe_density = 0; // direct per-axis count; overrides probe_factor
  double mpc_safety_factor = 1.5;
  int lipschitz_samples = 2000;
  uint64_t lipschitz_seed = 0;
  int workers = 0;
  SqpSettings solver;
};

/// Assembles the full report: epsilon_d, both Lipschitz estimates, required
/// vs achieved covering radius, the verdict, and optionally the empirically
/// probed worst error over a denser grid with fresh OCP solves.
BoundReport certify(const MlpParams& net, const Dataset& data, const GridSpec& domain,
                    const OcpSpec& spec, const CertifyOptions& options);

void save_bound_report(const BoundReport& report, const std::filesystem::path& path);
std::string format_bound_report(const BoundReport& report);

}  // namespace nnmpc
