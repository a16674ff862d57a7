#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "nnmpc/mlp.hpp"
#include "nnmpc/ocp.hpp"

namespace nnmpc {

/// What closes the loop: the exact MPC, its network imitation, or the MPC
/// with a bounded additive input disturbance (worst-case probing with a
/// seeded random direction of magnitude epsilon at every step).
enum class ControllerKind { mpc, nn, mpc_disturbed };

struct SimOptions {
  ControllerKind kind = ControllerKind::mpc;
  Vec x0;
  int steps = 45;
  const MlpParams* net = nullptr;      // required for ControllerKind::nn
  double disturbance_epsilon = 0.0;    // required for mpc_disturbed
  uint64_t disturbance_seed = 0;
  SqpSettings solver;
};

struct Trajectory {
  double step_length = 0.0;
  std::vector<double> time;             // steps + 1 entries
  std::vector<Vec> states;              // steps + 1 entries
  std::vector<Vec> inputs;              // applied inputs, steps entries
  std::vector<Vec> reference_inputs;    // fresh MPC solution at each visited state
  std::vector<double> divergence;       // ||reference - applied|| per step
};

/// Rolls the plant forward under the chosen controller. States are never
/// clamped; constraint violations are measured afterwards, not prevented.
/// For network and disturbed runs the exact MPC is re-solved at every visited
/// state (with its own warm-start chain) to fill the reference series.
/// Throws NumericalError with the step index if the MPC fails mid-run.
Trajectory simulate_closed_loop(const OcpSpec& spec, const SimOptions& options);

/// (violation percentage over steps, worst violation magnitude), measured on
/// the states produced by each step against the given state box.
std::pair<double, double> violation_stats(const Trajectory& traj, const Vec& lower,
                                          const Vec& upper);

/// Per-step ||kappa(x) - applied|| series and its maximum.
std::pair<std::vector<double>, double> input_divergence(const Trajectory& traj);

struct ClMetrics {
  double violation_pct = 0.0;
  double max_violation = 0.0;
  double max_input_divergence = 0.0;
  std::vector<double> divergence_series;
  double terminal_state_norm = 0.0;
};

ClMetrics compute_metrics(const Trajectory& traj, const OcpSpec& spec);

/// Columns: t, x1..xn, u_applied, u_mpc_ref, divergence, violation_mag.
void save_trajectory_csv(const Trajectory& traj, const OcpSpec& spec,
                         const std::filesystem::path& path);
Trajectory load_trajectory_csv(const std::filesystem::path& path, int n_x, int n_u);

void save_metrics(const ClMetrics& metrics, const std::filesystem::path& path);

}  // namespace nnmpc
