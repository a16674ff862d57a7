#include "nnmpc/mlp.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "nnmpc/errors.hpp"
#include "nnmpc/version.hpp"

namespace nnmpc {

using ordered_json = nlohmann::ordered_json;

MlpParams MlpParams::zeros(const std::vector<int>& layer_sizes) {
  if (layer_sizes.size() < 2) {
    throw std::invalid_argument("network needs at least input and output layers");
  }
  MlpParams p;
  for (size_t j = 0; j + 1 < layer_sizes.size(); ++j) {
    p.weights.push_back(Mat::Zero(layer_sizes[j + 1], layer_sizes[j]));
    p.biases.push_back(Vec::Zero(layer_sizes[j + 1]));
  }
  return p;
}

MlpParams MlpParams::glorot(const std::vector<int>& layer_sizes, uint64_t seed) {
  MlpParams p = zeros(layer_sizes);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (size_t j = 0; j < p.weights.size(); ++j) {
    const double bound =
        std::sqrt(6.0 / (layer_sizes[j] + layer_sizes[j + 1]));
    Mat& w = p.weights[j];
    for (int r = 0; r < w.rows(); ++r) {
      for (int c = 0; c < w.cols(); ++c) w(r, c) = bound * unit(rng);
    }
  }
  return p;
}

std::vector<int> MlpParams::layer_sizes() const {
  std::vector<int> sizes;
  sizes.push_back(static_cast<int>(weights.front().cols()));
  for (const Mat& w : weights) sizes.push_back(static_cast<int>(w.rows()));
  return sizes;
}

void MlpParams::validate() const {
  if (weights.empty() || weights.size() != biases.size()) {
    throw std::invalid_argument("network: weights/biases mismatch");
  }
  for (size_t j = 0; j < weights.size(); ++j) {
    if (biases[j].size() != weights[j].rows()) {
      throw std::invalid_argument("network: bias length mismatch in layer " +
                                  std::to_string(j));
    }
    if (j > 0 && weights[j].cols() != weights[j - 1].rows()) {
      throw std::invalid_argument("network: chained dimensions broken at layer " +
                                  std::to_string(j));
    }
  }
}

Vec mlp_forward(const MlpParams& params, const Vec& x) {
  if (x.size() != params.input_dim()) {
    throw std::invalid_argument("network input dimension mismatch");
  }
  Vec z = x;
  const int m = params.num_layers();
  for (int j = 0; j < m; ++j) {
    z = params.weights[static_cast<size_t>(j)] * z + params.biases[static_cast<size_t>(j)];
    if (j + 1 < m) z = z.array().tanh();
  }
  return z;
}

Mat mlp_input_jacobian(const MlpParams& params, const Vec& x) {
  if (x.size() != params.input_dim()) {
    throw std::invalid_argument("network input dimension mismatch");
  }
  const int m = params.num_layers();
  Vec z = x;
  Mat jac = params.weights[0];
  for (int j = 0; j + 1 < m; ++j) {
    const Vec a = params.weights[static_cast<size_t>(j)] * z +
                  params.biases[static_cast<size_t>(j)];
    z = a.array().tanh();
    const Vec d = 1.0 - z.array().square();  // tanh'
    jac = d.asDiagonal() * jac;
    jac = params.weights[static_cast<size_t>(j + 1)] * jac;
  }
  return jac;
}

double loss_mse(const MlpParams& params, const Dataset& data) {
  double total = 0.0;
  int count = 0;
  for (const Sample& s : data.samples) {
    if (!s.converged()) continue;
    total += (s.u - mlp_forward(params, s.x)).squaredNorm();
    ++count;
  }
  return count > 0 ? total / count : 0.0;
}

double loss_sens(const MlpParams& params, const Dataset& data) {
  double total = 0.0;
  int count = 0;
  for (const Sample& s : data.samples) {
    if (!s.converged() || !s.jac) continue;
    total += (*s.jac - mlp_input_jacobian(params, s.x)).squaredNorm();
    ++count;
  }
  return count > 0 ? total / count : 0.0;
}

double loss_weight_reg(const MlpParams& params) {
  double total = 0.0;
  for (const Mat& w : params.weights) total += w.squaredNorm();
  return total;
}

double loss_full(const MlpParams& params, const Dataset& data, const TrainConfig& cfg) {
  return cfg.lambda_reg * loss_weight_reg(params) +
         cfg.lambda_mse * loss_mse(params, data) +
         cfg.lambda_sens * loss_sens(params, data);
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads g;
  for (size_t j = 0; j < params.weights.size(); ++j) {
    g.d_weights.push_back(Mat::Zero(params.weights[j].rows(), params.weights[j].cols()));
    g.d_biases.push_back(Vec::Zero(params.biases[j].size()));
  }
  return g;
}

MlpGrads grad_loss(const MlpParams& params, const Dataset& data,
                   const std::vector<int>& batch, const TrainConfig& cfg) {
  params.validate();
  const int m = params.num_layers();
  const int nx = params.input_dim();

  MlpGrads grads = MlpGrads::zeros_like(params);

  int mse_count = 0;
  int sens_count = 0;
  const bool want_sens = cfg.lambda_sens != 0.0;
  for (int idx : batch) {
    const Sample& s = data.samples[static_cast<size_t>(idx)];
    if (!s.converged()) continue;
    ++mse_count;
    if (want_sens && s.jac) ++sens_count;
  }
  if (mse_count == 0) return grads;

  const double w_mse = cfg.lambda_mse / mse_count;
  const double w_sens = sens_count > 0 ? cfg.lambda_sens / sens_count : 0.0;

  // Per-sample storage: activations z_j, tanh slopes s_j, tangents per input
  // direction (t_j) and their pre-activation values (tau_j).
  std::vector<Vec> z(static_cast<size_t>(m) + 1);
  std::vector<Vec> slope(static_cast<size_t>(m));  // only hidden layers used
  std::vector<std::vector<Vec>> tan(static_cast<size_t>(m) + 1);
  std::vector<std::vector<Vec>> tau(static_cast<size_t>(m) + 1);

  for (int idx : batch) {
    const Sample& s = data.samples[static_cast<size_t>(idx)];
    if (!s.converged()) continue;
    const bool sample_sens = want_sens && s.jac.has_value() && w_sens > 0.0;
    const int nt = sample_sens ? nx : 0;

    // Forward pass with tangent bundle.
    z[0] = s.x;
    tan[0].assign(static_cast<size_t>(nt), Vec());
    for (int r = 0; r < nt; ++r) tan[0][static_cast<size_t>(r)] = Vec::Unit(nx, r);
    for (int j = 0; j < m; ++j) {
      const Mat& w = params.weights[static_cast<size_t>(j)];
      const Vec a = w * z[static_cast<size_t>(j)] + params.biases[static_cast<size_t>(j)];
      tau[static_cast<size_t>(j) + 1].assign(static_cast<size_t>(nt), Vec());
      tan[static_cast<size_t>(j) + 1].assign(static_cast<size_t>(nt), Vec());
      for (int r = 0; r < nt; ++r) {
        tau[static_cast<size_t>(j) + 1][static_cast<size_t>(r)] =
            w * tan[static_cast<size_t>(j)][static_cast<size_t>(r)];
      }
      if (j + 1 < m) {
        z[static_cast<size_t>(j) + 1] = a.array().tanh();
        slope[static_cast<size_t>(j) + 1] =
            1.0 - z[static_cast<size_t>(j) + 1].array().square();
        for (int r = 0; r < nt; ++r) {
          tan[static_cast<size_t>(j) + 1][static_cast<size_t>(r)] =
              slope[static_cast<size_t>(j) + 1].asDiagonal() *
              tau[static_cast<size_t>(j) + 1][static_cast<size_t>(r)];
        }
      } else {
        z[static_cast<size_t>(j) + 1] = a;
        for (int r = 0; r < nt; ++r) {
          tan[static_cast<size_t>(j) + 1][static_cast<size_t>(r)] =
              tau[static_cast<size_t>(j) + 1][static_cast<size_t>(r)];
        }
      }
    }

    // Seed adjoints from the two data terms.
    Vec z_bar = 2.0 * w_mse * (z[static_cast<size_t>(m)] - s.u);
    std::vector<Vec> t_bar(static_cast<size_t>(nt));
    for (int r = 0; r < nt; ++r) {
      t_bar[static_cast<size_t>(r)] =
          2.0 * w_sens *
          (tan[static_cast<size_t>(m)][static_cast<size_t>(r)] - s.jac->col(r));
    }

    // Reverse pass.
    for (int j = m - 1; j >= 0; --j) {
      Vec a_bar;
      std::vector<Vec> tau_bar(static_cast<size_t>(nt));
      if (j == m - 1) {
        a_bar = z_bar;
        for (int r = 0; r < nt; ++r) tau_bar[static_cast<size_t>(r)] = t_bar[static_cast<size_t>(r)];
      } else {
        const Vec& sl = slope[static_cast<size_t>(j) + 1];
        a_bar = sl.asDiagonal() * z_bar;
        // t_j = s_j .* tau_j couples the tangents back into the
        // pre-activation adjoint through the tanh second derivative.
        const Vec ddact = -2.0 * z[static_cast<size_t>(j) + 1].array() * sl.array();
        for (int r = 0; r < nt; ++r) {
          const Vec& tb = t_bar[static_cast<size_t>(r)];
          tau_bar[static_cast<size_t>(r)] = sl.asDiagonal() * tb;
          a_bar.array() += ddact.array() *
                           tau[static_cast<size_t>(j) + 1][static_cast<size_t>(r)].array() *
                           tb.array();
        }
      }

      Mat& dw = grads.d_weights[static_cast<size_t>(j)];
      dw.noalias() += a_bar * z[static_cast<size_t>(j)].transpose();
      grads.d_biases[static_cast<size_t>(j)] += a_bar;
      for (int r = 0; r < nt; ++r) {
        dw.noalias() += tau_bar[static_cast<size_t>(r)] *
                        tan[static_cast<size_t>(j)][static_cast<size_t>(r)].transpose();
      }

      if (j > 0) {
        const Mat& w = params.weights[static_cast<size_t>(j)];
        z_bar = w.transpose() * a_bar;
        for (int r = 0; r < nt; ++r) {
          t_bar[static_cast<size_t>(r)] = w.transpose() * tau_bar[static_cast<size_t>(r)];
        }
      }
    }
  }

  // l2 term on the weights; independent of the batch.
  for (size_t j = 0; j < params.weights.size(); ++j) {
    grads.d_weights[j] += 2.0 * cfg.lambda_reg * params.weights[j];
  }
  return grads;
}

std::pair<MlpParams, TrainReport> train(const Dataset& data, const Dataset* validation,
                                        const TrainConfig& cfg,
                                        const std::optional<MlpParams>& init) {
  if (data.converged_count() < 1) {
    throw std::invalid_argument("training needs at least one converged sample");
  }
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");

  const auto t0 = std::chrono::steady_clock::now();

  MlpParams params;
  if (init) {
    params = *init;
    params.validate();
  } else {
    std::vector<int> sizes;
    sizes.push_back(data.n_x);
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(data.n_u);
    params = MlpParams::glorot(sizes, cfg.init_seed);
    // Scale the first layer's columns by the per-input data half-range.
    // Plain Glorot saturates the tanh units when an input spans several
    // units, and saturated hidden layers leave plain MSE training stuck on a
    // plateau; this keeps the initial pre-activations O(1) without changing
    // the network class (it still maps raw states).
    for (int j = 0; j < data.n_x; ++j) {
      double half_range = 0.0;
      for (const Sample& s : data.samples) {
        if (s.converged()) half_range = std::max(half_range, std::abs(s.x[j]));
      }
      if (half_range > 1.0) params.weights[0].col(j) /= half_range;
    }
  }

  std::vector<int> indices;
  for (size_t i = 0; i < data.samples.size(); ++i) {
    if (data.samples[i].converged()) indices.push_back(static_cast<int>(i));
  }
  const int n_samples = static_cast<int>(indices.size());
  const int batch_size =
      cfg.batch_size > 0 ? std::min(cfg.batch_size, n_samples) : n_samples;

  MlpGrads m1 = MlpGrads::zeros_like(params);
  MlpGrads m2 = MlpGrads::zeros_like(params);
  long adam_t = 0;
  std::mt19937_64 rng(cfg.shuffle_seed);

  TrainReport report;
  report.history.reserve(static_cast<size_t>(cfg.epochs));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch_size < n_samples) {
      std::shuffle(indices.begin(), indices.end(), rng);
    }
    for (int start = 0; start < n_samples; start += batch_size) {
      const int end = std::min(start + batch_size, n_samples);
      const std::vector<int> batch(indices.begin() + start, indices.begin() + end);
      const MlpGrads g = grad_loss(params, data, batch, cfg);
      ++adam_t;
      const double corr1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t));
      const double corr2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t));
      for (size_t j = 0; j < params.weights.size(); ++j) {
        m1.d_weights[j] = cfg.beta1 * m1.d_weights[j] + (1.0 - cfg.beta1) * g.d_weights[j];
        m2.d_weights[j] =
            cfg.beta2 * m2.d_weights[j] +
            (1.0 - cfg.beta2) * g.d_weights[j].cwiseProduct(g.d_weights[j]);
        params.weights[j].array() -=
            cfg.learning_rate * (m1.d_weights[j].array() / corr1) /
            ((m2.d_weights[j].array() / corr2).sqrt() + cfg.adam_eps);

        m1.d_biases[j] = cfg.beta1 * m1.d_biases[j] + (1.0 - cfg.beta1) * g.d_biases[j];
        m2.d_biases[j] = cfg.beta2 * m2.d_biases[j] +
                         (1.0 - cfg.beta2) * g.d_biases[j].cwiseProduct(g.d_biases[j]);
        params.biases[j].array() -=
            cfg.learning_rate * (m1.d_biases[j].array() / corr1) /
            ((m2.d_biases[j].array() / corr2).sqrt() + cfg.adam_eps);
      }
    }

    EpochRecord rec;
    rec.mse = loss_mse(params, data);
    rec.sens = loss_sens(params, data);
    rec.reg = loss_weight_reg(params);
    rec.total = cfg.lambda_reg * rec.reg + cfg.lambda_mse * rec.mse +
                cfg.lambda_sens * rec.sens;
    if (!std::isfinite(rec.total)) {
      throw NumericalError("training diverged at epoch " + std::to_string(epoch) +
                           " (non-finite loss)");
    }
    report.history.push_back(rec);

    if (cfg.epsilon_d_target && epsilon_d(params, data) <= *cfg.epsilon_d_target) {
      break;
    }
  }

  report.final_epsilon_d = epsilon_d(params, data);
  if (validation && validation->converged_count() > 0) {
    report.final_r2 = r2_score(params, *validation);
  }
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(params), std::move(report)};
}

double epsilon_d(const MlpParams& params, const Dataset& data) {
  double worst = 0.0;
  for (const Sample& s : data.samples) {
    if (!s.converged()) continue;
    worst = std::max(worst, (s.u - mlp_forward(params, s.x)).norm());
  }
  return worst;
}

double r2_score(const MlpParams& params, const Dataset& validation) {
  Vec mean = Vec::Zero(validation.n_u);
  int count = 0;
  for (const Sample& s : validation.samples) {
    if (!s.converged()) continue;
    mean += s.u;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("r2_score: empty validation set");
  mean /= count;

  double ss_res = 0.0, ss_tot = 0.0;
  for (const Sample& s : validation.samples) {
    if (!s.converged()) continue;
    ss_res += (s.u - mlp_forward(params, s.x)).squaredNorm();
    ss_tot += (s.u - mean).squaredNorm();
  }
  if (ss_tot == 0.0) {
    return ss_res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  }
  return 1.0 - ss_res / ss_tot;
}

void save_mlp(const MlpParams& params, const std::filesystem::path& path,
              const Provenance& provenance) {
  params.validate();
  ordered_json j;
  j["layer_sizes"] = params.layer_sizes();
  ordered_json acts = ordered_json::array();
  for (int i = 0; i + 1 < params.num_layers(); ++i) acts.push_back("tanh");
  acts.push_back("linear");
  j["activations"] = std::move(acts);
  ordered_json ws = ordered_json::array();
  for (const Mat& w : params.weights) {
    ordered_json rows = ordered_json::array();
    for (int r = 0; r < w.rows(); ++r) {
      ordered_json row = ordered_json::array();
      for (int c = 0; c < w.cols(); ++c) row.push_back(w(r, c));
      rows.push_back(std::move(row));
    }
    ws.push_back(std::move(rows));
  }
  j["weights"] = std::move(ws);
  ordered_json bs = ordered_json::array();
  for (const Vec& b : params.biases) {
    ordered_json arr = ordered_json::array();
    for (int i = 0; i < b.size(); ++i) arr.push_back(b[i]);
    bs.push_back(std::move(arr));
  }
  j["biases"] = std::move(bs);
  j["provenance"] = {{"spec_hash", provenance.spec_hash},
                     {"version", provenance.version.empty() ? kVersion : provenance.version},
                     {"seed", provenance.seed}};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

MlpParams load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  ordered_json j = ordered_json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed checkpoint " + path.string());

  MlpParams params;
  try {
    const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
    const auto acts = j.at("activations").get<std::vector<std::string>>();
    if (acts.size() + 1 != sizes.size()) {
      throw ConfigError("checkpoint: activation count mismatch");
    }
    for (size_t i = 0; i < acts.size(); ++i) {
      const bool last = (i + 1 == acts.size());
      if ((last && acts[i] != "linear") || (!last && acts[i] != "tanh")) {
        throw ConfigError("checkpoint: unsupported activation '" + acts[i] + "'");
      }
    }
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    for (size_t l = 0; l < ws.size(); ++l) {
      const auto& rows = ws[l];
      Mat w(rows.size(), rows[0].size());
      for (size_t r = 0; r < rows.size(); ++r) {
        for (size_t c = 0; c < rows[r].size(); ++c) {
          w(static_cast<int>(r), static_cast<int>(c)) = rows[r][c].get<double>();
        }
      }
      Vec b(bs[l].size());
      for (size_t i = 0; i < bs[l].size(); ++i) b[static_cast<int>(i)] = bs[l][i].get<double>();
      params.weights.push_back(std::move(w));
      params.biases.push_back(std::move(b));
    }
  } catch (const ordered_json::exception& e) {
    throw ConfigError("checkpoint " + path.string() + ": " + e.what());
  }
  params.validate();
  const auto sizes = j["layer_sizes"].get<std::vector<int>>();
  if (params.layer_sizes() != sizes) {
    throw ConfigError("checkpoint: layer_sizes do not match stored matrices");
  }
  return params;
}

void save_loss_history(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << "epoch,total,mse,sens,reg\n";
  char buf[160];
  for (size_t i = 0; i < report.history.size(); ++i) {
    const EpochRecord& r = report.history[i];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", i, r.total,
                  r.mse, r.sens, r.reg);
    out << buf;
  }
}

}  // namespace nnmpc
