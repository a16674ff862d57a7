#include "nnmpc/certify.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "nnmpc/errors.hpp"

namespace nnmpc {

using ordered_json = nlohmann::ordered_json;

double spectral_norm(const Mat& w) {
  if (w.size() == 0) return 0.0;
  const int n = static_cast<int>(w.cols());
  std::mt19937_64 rng(0x5eed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = unit(rng);
  const double vnorm = v.norm();
  if (vnorm == 0.0) return 0.0;
  v /= vnorm;

  double sigma = 0.0;
  for (int it = 0; it < 10000; ++it) {
    Vec y = w.transpose() * (w * v);
    const double ynorm = y.norm();
    if (ynorm == 0.0) return 0.0;
    v = y / ynorm;
    const double next = (w * v).norm();
    if (std::abs(next - sigma) <= 1e-10 * std::max(1.0, next)) return next;
    sigma = next;
  }
  return sigma;
}

double lipschitz_nn_upper(const MlpParams& params) {
  params.validate();
  double bound = 1.0;
  for (const Mat& w : params.weights) bound *= spectral_norm(w);
  return bound;
}

double lipschitz_nn_lower_sampled(const MlpParams& params, const GridSpec& domain,
                                  int n_samples, uint64_t seed) {
  double best = 0.0;
  for (const Vec& x : sample_uniform(domain, n_samples, seed)) {
    best = std::max(best, spectral_norm(mlp_input_jacobian(params, x)));
  }
  return best;
}

LipschitzEstimate lipschitz_mpc_estimate(const Dataset& data, double safety_factor) {
  double jac_max = -1.0;
  double quotient_max = 0.0;
  std::vector<const Sample*> ok;
  for (const Sample& s : data.samples) {
    if (!s.converged()) continue;
    ok.push_back(&s);
    if (s.jac) jac_max = std::max(jac_max, spectral_norm(*s.jac));
  }
  if (ok.empty()) throw std::invalid_argument("lipschitz estimate of an empty dataset");

  for (size_t i = 0; i < ok.size(); ++i) {
    for (size_t j = i + 1; j < ok.size(); ++j) {
      const double dx = (ok[i]->x - ok[j]->x).norm();
      if (dx <= 0.0) continue;
      quotient_max = std::max(quotient_max, (ok[i]->u - ok[j]->u).norm() / dx);
    }
  }

  LipschitzEstimate est;
  std::ostringstream method;
  if (jac_max >= 0.0) {
    est.lower = std::max(jac_max, quotient_max);
    method << "max sample-jacobian spectral norm (" << jac_max
           << ") cross-checked by pairwise difference quotients (" << quotient_max
           << "), safety factor " << safety_factor;
  } else {
    est.lower = quotient_max;
    method << "pairwise difference quotients only (no stored jacobians), safety factor "
           << safety_factor;
  }
  est.upper = safety_factor * est.lower;
  est.method = method.str();
  return est;
}

double required_delta(double epsilon, double epsilon_d, double l_mpc, double l_nn) {
  if (!(epsilon_d < epsilon)) {
    throw BoundInfeasibleError("epsilon_d (" + std::to_string(epsilon_d) +
                               ") >= epsilon (" + std::to_string(epsilon) +
                               "): this dataset cannot certify the requested bound");
  }
  const double lsum = l_mpc + l_nn;
  if (!(lsum > 0.0)) {
    throw std::invalid_argument("required_delta: Lipschitz sum must be positive");
  }
  return (epsilon - epsilon_d) / lsum;
}

BoundReport certify(const MlpParams& net, const Dataset& data, const GridSpec& domain,
                    const OcpSpec& spec, const CertifyOptions& options) {
  BoundReport report;
  report.epsilon = options.epsilon;
  report.epsilon_d = epsilon_d(net, data);
  report.l_nn.upper = lipschitz_nn_upper(net);
  report.l_nn.lower = lipschitz_nn_lower_sampled(net, domain, options.lipschitz_samples,
                                                 options.lipschitz_seed);
  report.l_nn.method = "layer spectral-norm product (upper), sampled jacobian norms (lower)";
  report.l_mpc = lipschitz_mpc_estimate(data, options.mpc_safety_factor);

  report.delta_actual = covering_radius(data, domain, 200);

  try {
    report.delta_required = required_delta(report.epsilon, report.epsilon_d,
                                           report.l_mpc.upper, report.l_nn.upper);
    report.certified = report.delta_actual <= report.delta_required;
  } catch (const BoundInfeasibleError&) {
    report.infeasible_reason = "epsilon_d >= epsilon";
    report.certified = false;
  }

  // Probe grid: explicit per-axis count, or the training grid scaled per
  // axis by probe_factor (25 * factor per axis when the dataset is gridless).
  std::vector<int> probe_counts;
  if (options.probe_density >= 2) {
    probe_counts.assign(static_cast<size_t>(domain.dim()), options.probe_density);
  } else if (options.probe_factor > 0) {
    if (data.grid) {
      probe_counts = data.grid->counts;
      for (int& c : probe_counts) c *= options.probe_factor;
    } else {
      probe_counts.assign(static_cast<size_t>(domain.dim()), 25 * options.probe_factor);
    }
  }

  if (!probe_counts.empty()) {
    GridSpec probe = domain;
    probe.counts = probe_counts;
    const std::vector<Vec> points = seed_grid(probe);
    report.probe_points = static_cast<int>(points.size());

    std::vector<double> err(points.size(), -1.0);
    std::atomic<size_t> next{0};
    std::atomic<int> failures{0};
    auto run = [&]() {
      NlpInstance nlp(spec, Vec::Zero(spec.state_dim()));
      const SqpSolver solver(options.solver);
      for (size_t i = next.fetch_add(1); i < points.size(); i = next.fetch_add(1)) {
        nlp.set_param(points[i]);
        const OcpSolution sol = solver.solve(nlp);
        if (sol.status != SolveStatus::converged) {
          failures.fetch_add(1);
          continue;
        }
        err[i] = (sol.input - mlp_forward(net, points[i])).norm();
      }
    };
    int workers = options.workers > 0
                      ? options.workers
                      : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::max(1, std::min<int>(workers, static_cast<int>(points.size())));
    if (workers == 1) {
      run();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(run);
      for (std::thread& t : pool) t.join();
    }
    report.probe_failures = failures.load();
    double worst = 0.0;
    for (double e : err) worst = std::max(worst, e);
    report.empirical_max_error = worst;
  }
  return report;
}

void save_bound_report(const BoundReport& r, const std::filesystem::path& path) {
  ordered_json j;
  j["epsilon"] = r.epsilon;
  j["epsilon_d"] = r.epsilon_d;
  j["l_mpc"] = {{"upper", r.l_mpc.upper},
                {"lower", r.l_mpc.lower},
                {"method", r.l_mpc.method},
                {"heuristic", true}};
  j["l_nn"] = {{"upper", r.l_nn.upper},
               {"lower", r.l_nn.lower},
               {"method", r.l_nn.method},
               {"heuristic", false}};
  if (std::isnan(r.delta_required)) {
    j["delta_required"] = nullptr;
  } else {
    j["delta_required"] = r.delta_required;
  }
  j["delta_actual"] = r.delta_actual;
  j["certified"] = r.certified;
  if (r.infeasible_reason) j["infeasible_reason"] = *r.infeasible_reason;
  if (r.empirical_max_error) {
    j["empirical_max_error"] = *r.empirical_max_error;
    j["probe_points"] = r.probe_points;
    j["probe_failures"] = r.probe_failures;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

std::string format_bound_report(const BoundReport& r) {
  std::ostringstream os;
  os << "certification summary\n";
  os << "  epsilon (target)        " << r.epsilon << "\n";
  os << "  epsilon_D (train max)   " << r.epsilon_d << "\n";
  os << "  L_NN  upper / lower     " << r.l_nn.upper << " / " << r.l_nn.lower << "\n";
  os << "  L_MPC upper / lower     " << r.l_mpc.upper << " / " << r.l_mpc.lower
     << "  (heuristic)\n";
  if (std::isnan(r.delta_required)) {
    os << "  delta required          n/a (" << r.infeasible_reason.value_or("infeasible")
       << ")\n";
  } else {
    os << "  delta required          " << r.delta_required << "\n";
  }
  os << "  delta actual (covering) " << r.delta_actual << "\n";
  if (r.empirical_max_error) {
    os << "  probed max error        " << *r.empirical_max_error << " over "
       << r.probe_points << " points";
    if (r.probe_failures > 0) os << " (" << r.probe_failures << " solves failed)";
    os << "\n";
  }
  os << "  verdict                 " << (r.certified ? "CERTIFIED" : "not certified")
     << "\n";
  return os.str();
}

}  // namespace nnmpc
