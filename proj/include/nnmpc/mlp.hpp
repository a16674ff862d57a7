#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "nnmpc/dataset.hpp"

namespace nnmpc {

/// Feed-forward tanh network: affine layers with tanh on every hidden layer
/// and a linear output layer.
struct MlpParams {
  std::vector<Mat> weights;  // W_j, sizes[j+1] x sizes[j]
  std::vector<Vec> biases;

  static MlpParams zeros(const std::vector<int>& layer_sizes);
  /// Fan-scaled uniform (Glorot) initialization from a fixed seed.
  static MlpParams glorot(const std::vector<int>& layer_sizes, uint64_t seed);

  std::vector<int> layer_sizes() const;
  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  int num_layers() const { return static_cast<int>(weights.size()); }
  void validate() const;
};

Vec mlp_forward(const MlpParams& params, const Vec& x);

/// Exact input Jacobian W_m D_{m-1} W_{m-1} ... D_1 W_1 with
/// D_j = diag(1 - tanh^2) at the pre-activations.
Mat mlp_input_jacobian(const MlpParams& params, const Vec& x);

struct TrainConfig {
  double lambda_mse = 1.0;   // lambda_1
  double lambda_sens = 3.0;  // lambda_2
  double lambda_reg = 0.05;  // lambda_3, weights only
  double learning_rate = 1e-3;
  int epochs = 2000;
  int batch_size = 0;  // 0 -> full batch
  uint64_t init_seed = 0;
  uint64_t shuffle_seed = 0;
  std::vector<int> hidden = {10, 10};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::optional<double> epsilon_d_target;  // early stop, off by default
};

/// Mean squared output error over the converged samples.
double loss_mse(const MlpParams& params, const Dataset& data);

/// Mean squared Frobenius mismatch of the input Jacobians over the samples
/// that carry one; 0 when none do.
double loss_sens(const MlpParams& params, const Dataset& data);

/// Squared Frobenius norm of all weight matrices (biases excluded).
double loss_weight_reg(const MlpParams& params);

/// lambda_3 * reg + lambda_1 * mse + lambda_2 * sens.
double loss_full(const MlpParams& params, const Dataset& data, const TrainConfig& cfg);

struct MlpGrads {
  std::vector<Mat> d_weights;
  std::vector<Vec> d_biases;

  static MlpGrads zeros_like(const MlpParams& params);
};

/// Exact gradient of loss_full over the given sample indices, including the
/// Jacobian-matching term: input tangents are propagated forward alongside
/// the activations and their adjoints are propagated back, which carries the
/// required second-order information through the tanh layers.
MlpGrads grad_loss(const MlpParams& params, const Dataset& data,
                   const std::vector<int>& batch, const TrainConfig& cfg);

struct EpochRecord {
  double total, mse, sens, reg;
};

struct TrainReport {
  std::vector<EpochRecord> history;  // one record per epoch
  double final_epsilon_d = 0.0;
  double final_r2 = std::numeric_limits<double>::quiet_NaN();
  double wall_time_s = 0.0;
};

/// Adam training from a seeded Glorot initialization (or an explicit one).
/// Pure function of (data, validation, cfg, init): fixed seeds reproduce the
/// returned parameters bit for bit. Throws NumericalError if the loss turns
/// non-finite.
std::pair<MlpParams, TrainReport> train(
    const Dataset& data, const Dataset* validation, const TrainConfig& cfg,
    const std::optional<MlpParams>& init = std::nullopt);

/// Largest training-point output error max_i ||u_i - net(x_i)||.
double epsilon_d(const MlpParams& params, const Dataset& data);

/// Pooled coefficient of determination on a labeled validation set.
double r2_score(const MlpParams& params, const Dataset& validation);

void save_mlp(const MlpParams& params, const std::filesystem::path& path,
              const Provenance& provenance = {});
MlpParams load_mlp(const std::filesystem::path& path);

void save_loss_history(const TrainReport& report, const std::filesystem::path& path);

}  // namespace nnmpc
