#include <doctest.h>

#include <filesystem>

#include "nnmpc/errors.hpp"
#include "nnmpc/simulate.hpp"

using namespace nnmpc;

namespace {

OcpSpec quick_spec(int horizon = 8) {
  OcpSpec spec = default_pendulum_spec();
  spec.horizon = horizon;
  return spec;
}

}  // namespace

TEST_CASE("mpc keeps the upright equilibrium at zero input") {
  SimOptions opt;
  opt.kind = ControllerKind::mpc;
  opt.x0 = Vec::Zero(2);
  opt.steps = 10;
  const Trajectory traj = simulate_closed_loop(quick_spec(), opt);
  REQUIRE(traj.states.size() == 11);
  for (const Vec& x : traj.states) CHECK(x.lpNorm<Eigen::Infinity>() <= 1e-8);
  for (const Vec& u : traj.inputs) CHECK(u.lpNorm<Eigen::Infinity>() <= 1e-8);
  // reference inputs coincide with the applied ones for the exact MPC
  for (size_t k = 0; k < traj.inputs.size(); ++k) {
    CHECK((traj.inputs[k] - traj.reference_inputs[k]).norm() == 0.0);
    CHECK(traj.divergence[k] == 0.0);
  }
}

TEST_CASE("time stamps advance by the model step") {
  SimOptions opt;
  opt.kind = ControllerKind::mpc;
  opt.x0 = Vec{{0.3, 0.0}};
  opt.steps = 5;
  const OcpSpec spec = quick_spec();
  const Trajectory traj = simulate_closed_loop(spec, opt);
  for (size_t k = 0; k < traj.time.size(); ++k) {
    CHECK(traj.time[k] ==
          doctest::Approx(k * spec.model.step_length()).epsilon(1e-15));
  }
}

TEST_CASE("violation stats of a hand-built trajectory") {
  Trajectory traj;
  traj.states.push_back(Vec{{0.0, 0.0}});
  for (int k = 0; k < 10; ++k) {
    traj.states.push_back(Vec{{0.0, k == 3 ? 1.5 : 0.0}});
    traj.inputs.push_back(Vec{{0.0}});
    traj.reference_inputs.push_back(Vec{{0.0}});
    traj.divergence.push_back(0.0);
  }
  const auto [pct, mag] =
      violation_stats(traj, Vec{{-2.0 * M_PI, -1.0}}, Vec{{2.0 * M_PI, 1.0}});
  CHECK(pct == doctest::Approx(10.0));
  CHECK(mag == doctest::Approx(0.5));
}

TEST_CASE("trajectory inside the box has zero violations") {
  Trajectory traj;
  traj.states.assign(6, Vec{{0.1, -0.2}});
  traj.inputs.assign(5, Vec{{0.0}});
  traj.reference_inputs.assign(5, Vec{{0.0}});
  traj.divergence.assign(5, 0.0);
  const auto [pct, mag] = violation_stats(traj, Vec{{-1.0, -1.0}}, Vec{{1.0, 1.0}});
  CHECK(pct == 0.0);
  CHECK(mag == 0.0);
}

TEST_CASE("constant offset controller shows a constant divergence") {
  // A zero network applies u = 0 everywhere; the reference is kappa(x).
  const OcpSpec spec = quick_spec();
  const MlpParams zero_net = MlpParams::zeros({2, 1});
  SimOptions opt;
  opt.kind = ControllerKind::nn;
  opt.net = &zero_net;
  // stay in the small-excursion regime: a free-falling pendulum soon reaches
  // states from which no input sequence can restore the velocity box, and the
  // reference MPC is rightly infeasible there
  opt.x0 = Vec{{0.1, 0.0}};
  opt.steps = 3;
  const Trajectory traj = simulate_closed_loop(spec, opt);
  for (size_t k = 0; k < traj.inputs.size(); ++k) {
    CHECK(traj.inputs[k][0] == 0.0);
    CHECK(traj.divergence[k] ==
          doctest::Approx(std::abs(traj.reference_inputs[k][0])));
  }
  const auto [series, worst] = input_divergence(traj);
  CHECK(series.size() == 3);
  CHECK(worst > 0.0);  // away from the origin the MPC pushes back
}

TEST_CASE("disturbed runs inject exactly epsilon at every step") {
  const OcpSpec spec = quick_spec();
  SimOptions opt;
  opt.kind = ControllerKind::mpc_disturbed;
  opt.x0 = Vec{{0.2, 0.1}};
  opt.steps = 8;
  opt.disturbance_epsilon = 0.25;
  opt.disturbance_seed = 99;
  const Trajectory traj = simulate_closed_loop(spec, opt);
  for (size_t k = 0; k < traj.inputs.size(); ++k) {
    CHECK((traj.inputs[k] - traj.reference_inputs[k]).norm() ==
          doctest::Approx(0.25).epsilon(1e-12));
    CHECK(traj.divergence[k] == doctest::Approx(0.25).epsilon(1e-12));
  }

  // seeded: identical reruns
  const Trajectory again = simulate_closed_loop(spec, opt);
  for (size_t k = 0; k < traj.inputs.size(); ++k) {
    CHECK((traj.inputs[k] - again.inputs[k]).norm() == 0.0);
  }
}

TEST_CASE("metrics flow through compute_metrics") {
  const OcpSpec spec = quick_spec();
  SimOptions opt;
  opt.kind = ControllerKind::mpc;
  opt.x0 = Vec{{0.3, 0.0}};
  opt.steps = 12;
  const Trajectory traj = simulate_closed_loop(spec, opt);
  const ClMetrics m = compute_metrics(traj, spec);
  CHECK(m.violation_pct >= 0.0);
  CHECK(m.violation_pct <= 100.0);
  CHECK(m.max_violation >= 0.0);
  CHECK(m.max_input_divergence == 0.0);
  CHECK(m.divergence_series.size() == 12);
  CHECK(m.terminal_state_norm == doctest::Approx(traj.states.back().norm()));
}

TEST_CASE("trajectory csv round trip") {
  const OcpSpec spec = quick_spec();
  SimOptions opt;
  opt.kind = ControllerKind::mpc;
  opt.x0 = Vec{{0.25, -0.1}};
  opt.steps = 5;
  const Trajectory traj = simulate_closed_loop(spec, opt);

  const auto dir = std::filesystem::temp_directory_path() / "nnmpc_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "traj.csv";
  save_trajectory_csv(traj, spec, path);
  const Trajectory back = load_trajectory_csv(path, 2, 1);
  REQUIRE(back.states.size() == traj.states.size());
  REQUIRE(back.inputs.size() == traj.inputs.size());
  for (size_t k = 0; k < traj.states.size(); ++k) {
    CHECK((back.states[k] - traj.states[k]).lpNorm<Eigen::Infinity>() == 0.0);
  }
  for (size_t k = 0; k < traj.inputs.size(); ++k) {
    CHECK((back.inputs[k] - traj.inputs[k]).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(back.divergence[k] == traj.divergence[k]);
  }
}

TEST_CASE("simulation option validation") {
  SimOptions opt;
  opt.kind = ControllerKind::nn;
  opt.x0 = Vec::Zero(2);
  opt.steps = 3;
  CHECK_THROWS_AS(simulate_closed_loop(quick_spec(), opt), std::invalid_argument);
  opt.kind = ControllerKind::mpc;
  opt.steps = 0;
  CHECK_THROWS_AS(simulate_closed_loop(quick_spec(), opt), std::invalid_argument);
  opt.steps = 3;
  opt.x0 = Vec::Zero(3);
  CHECK_THROWS_AS(simulate_closed_loop(quick_spec(), opt), std::invalid_argument);
}
