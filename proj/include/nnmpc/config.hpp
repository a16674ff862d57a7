#pragma once

#include <filesystem>
#include <string>

#include "nnmpc/certify.hpp"
#include "nnmpc/dataset.hpp"
#include "nnmpc/mlp.hpp"
#include "nnmpc/ocp.hpp"

namespace nnmpc {

/// Everything a run needs, read from one strict JSON document. Unknown keys
/// are rejected; missing keys fall back to the pendulum defaults below, so an
/// empty document reproduces the stock pendulum study.
struct RunConfig {
  // model
  PendulumParams pendulum;
  double step_length = 0.1;

  // ocp
  int horizon = 20;
  Vec q_diag{{10.0, 1.0}};
  Vec r_diag{{0.1}};
  Vec p_diag{{10.0, 1.0}};
  Vec state_lower{{-2.0 * M_PI, -1.0}};
  Vec state_upper{{2.0 * M_PI, 1.0}};
  Vec input_lower{{-15.0}};
  Vec input_upper{{15.0}};
  double kkt_tol = 1e-8;
  int max_sqp_iter = 100;

  // grid
  GridSpec grid{Vec{{-2.0 * M_PI, -1.0}}, Vec{{2.0 * M_PI, 1.0}}, {25, 14}};

  // training
  int epochs = 2000;
  double learning_rate = 1e-3;
  int batch_size = 0;  // full batch
  std::vector<int> hidden = {10, 10};
  double lambda_mse = 1.0;
  double lambda_sens = 3.0;
  double lambda_reg = 0.05;
  int validation_points = 500;

  // certification
  double epsilon = 5.0;
  int probe_factor = 4;

  // simulation
  Vec x0{{M_PI, 0.0}};
  int sim_steps = 45;
  double disturbance_epsilon = 0.5;

  uint64_t seed = 1;
  std::string out_dir = "runs/pendulum";

  OcpSpec make_ocp_spec() const;
  SqpSettings make_sqp_settings() const;
  TrainConfig make_train_config(bool sensitivity_regularized) const;
  CertifyOptions make_certify_options(bool with_probe, int workers) const;

  // Fixed fan-out of the master seed to the stages.
  uint64_t dataset_seed() const { return seed; }
  uint64_t init_seed() const { return seed + 100; }
  uint64_t shuffle_seed() const { return seed + 101; }
  uint64_t validation_seed() const { return seed + 200; }
  uint64_t lipschitz_seed() const { return seed + 300; }
  uint64_t disturbance_seed() const { return seed + 400; }
};

RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
std::string dump_config(const RunConfig& cfg);

/// FNV-1a hash of the canonical config dump; stamped into artifact
/// provenance so stale outputs are detectable.
std::string config_hash(const RunConfig& cfg);

}  // namespace nnmpc
