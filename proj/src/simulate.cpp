#include "nnmpc/simulate.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nnmpc/errors.hpp"

namespace nnmpc {

using ordered_json = nlohmann::ordered_json;

Trajectory simulate_closed_loop(const OcpSpec& spec, const SimOptions& options) {
  spec.validate();
  if (options.steps < 1) throw std::invalid_argument("simulate: steps must be >= 1");
  if (options.x0.size() != spec.state_dim()) {
    throw std::invalid_argument("simulate: x0 dimension mismatch");
  }
  if (options.kind == ControllerKind::nn && options.net == nullptr) {
    throw std::invalid_argument("simulate: network controller without a network");
  }

  const double h = spec.model.step_length();
  Trajectory traj;
  traj.step_length = h;
  traj.states.push_back(options.x0);
  traj.time.push_back(0.0);

  MpcController reference(spec, options.solver);
  std::mt19937_64 rng(options.disturbance_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Vec x = options.x0;
  for (int k = 0; k < options.steps; ++k) {
    Vec u_ref;
    try {
      u_ref = reference.compute(x);
    } catch (const NumericalError& e) {
      throw NumericalError("mpc failed at step " + std::to_string(k) + ": " + e.what());
    }

    Vec u = u_ref;
    switch (options.kind) {
      case ControllerKind::mpc:
        break;
      case ControllerKind::nn:
        u = mlp_forward(*options.net, x);
        break;
      case ControllerKind::mpc_disturbed: {
        // Random direction on the unit sphere scaled to exactly epsilon.
        Vec dir(spec.input_dim());
        double norm = 0.0;
        while (norm == 0.0) {
          for (int i = 0; i < dir.size(); ++i) dir[i] = gauss(rng);
          norm = dir.norm();
        }
        u = u_ref + options.disturbance_epsilon * dir / norm;
        break;
      }
    }

    traj.inputs.push_back(u);
    traj.reference_inputs.push_back(u_ref);
    traj.divergence.push_back((u_ref - u).norm());

    x = spec.model.step(x, u);
    traj.states.push_back(x);
    traj.time.push_back((k + 1) * h);
  }
  return traj;
}

std::pair<double, double> violation_stats(const Trajectory& traj, const Vec& lower,
                                          const Vec& upper) {
  const int steps = static_cast<int>(traj.inputs.size());
  if (steps == 0) return {0.0, 0.0};
  int violating = 0;
  double worst = 0.0;
  for (int k = 1; k <= steps; ++k) {
    const Vec& x = traj.states[static_cast<size_t>(k)];
    double mag = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      if (std::isfinite(upper[i])) mag = std::max(mag, x[i] - upper[i]);
      if (std::isfinite(lower[i])) mag = std::max(mag, lower[i] - x[i]);
    }
    if (mag > 0.0) ++violating;
    worst = std::max(worst, mag);
  }
  return {100.0 * violating / steps, worst};
}

std::pair<std::vector<double>, double> input_divergence(const Trajectory& traj) {
  double worst = 0.0;
  for (double d : traj.divergence) worst = std::max(worst, d);
  return {traj.divergence, worst};
}

ClMetrics compute_metrics(const Trajectory& traj, const OcpSpec& spec) {
  ClMetrics m;
  const auto [pct, mag] = violation_stats(traj, spec.state_lower, spec.state_upper);
  m.violation_pct = pct;
  m.max_violation = mag;
  auto [series, worst] = input_divergence(traj);
  m.divergence_series = std::move(series);
  m.max_input_divergence = worst;
  m.terminal_state_norm = traj.states.back().norm();
  return m;
}

void save_trajectory_csv(const Trajectory& traj, const OcpSpec& spec,
                         const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  const int nx = spec.state_dim();
  const int nu = spec.input_dim();

  out << "t";
  for (int i = 0; i < nx; ++i) out << ",x" << (i + 1);
  for (int i = 0; i < nu; ++i) out << ",u_applied" << (nu > 1 ? std::to_string(i + 1) : "");
  for (int i = 0; i < nu; ++i) out << ",u_mpc_ref" << (nu > 1 ? std::to_string(i + 1) : "");
  out << ",divergence,violation_mag\n";

  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };

  for (size_t k = 0; k < traj.states.size(); ++k) {
    emit(traj.time[k]);
    const Vec& x = traj.states[k];
    for (int i = 0; i < nx; ++i) {
      out << ",";
      emit(x[i]);
    }
    const bool has_input = k < traj.inputs.size();
    for (int i = 0; i < nu; ++i) {
      out << ",";
      if (has_input) emit(traj.inputs[k][i]);
    }
    for (int i = 0; i < nu; ++i) {
      out << ",";
      if (has_input) emit(traj.reference_inputs[k][i]);
    }
    out << ",";
    if (has_input) emit(traj.divergence[k]);
    out << ",";
    double mag = 0.0;
    for (int i = 0; i < nx; ++i) {
      if (std::isfinite(spec.state_upper[i])) mag = std::max(mag, x[i] - spec.state_upper[i]);
      if (std::isfinite(spec.state_lower[i])) mag = std::max(mag, spec.state_lower[i] - x[i]);
    }
    emit(mag);
    out << "\n";
  }
}

Trajectory load_trajectory_csv(const std::filesystem::path& path, int n_x, int n_u) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  Trajectory traj;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty trajectory " + path.string());
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    // allow the trailing empty divergence column of the terminal row
    const size_t expected = 1 + static_cast<size_t>(n_x) + 2 * static_cast<size_t>(n_u) + 2;
    if (fields.size() != expected) {
      throw ConfigError("line " + std::to_string(line_no) + " of " + path.string() +
                        ": expected " + std::to_string(expected) + " columns");
    }
    size_t c = 0;
    traj.time.push_back(std::stod(fields[c++]));
    Vec x(n_x);
    for (int i = 0; i < n_x; ++i) x[i] = std::stod(fields[c++]);
    traj.states.push_back(std::move(x));
    if (!fields[c].empty()) {
      Vec u(n_u), ref(n_u);
      for (int i = 0; i < n_u; ++i) u[i] = std::stod(fields[c++]);
      for (int i = 0; i < n_u; ++i) ref[i] = std::stod(fields[c++]);
      traj.inputs.push_back(std::move(u));
      traj.reference_inputs.push_back(std::move(ref));
      traj.divergence.push_back(std::stod(fields[c++]));
    }
  }
  if (traj.time.size() >= 2) traj.step_length = traj.time[1] - traj.time[0];
  return traj;
}

void save_metrics(const ClMetrics& m, const std::filesystem::path& path) {
  ordered_json j;
  j["violation_pct"] = m.violation_pct;
  j["max_violation"] = m.max_violation;
  j["max_input_divergence"] = m.max_input_divergence;
  j["terminal_state_norm"] = m.terminal_state_norm;
  j["divergence_series"] = m.divergence_series;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace nnmpc
