#include "nnmpc/dataset.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "nnmpc/errors.hpp"
#include "nnmpc/sensitivity.hpp"
#include "nnmpc/version.hpp"

namespace nnmpc {

using ordered_json = nlohmann::ordered_json;

void GridSpec::validate() const {
  const int d = dim();
  if (d == 0 || upper.size() != d || static_cast<int>(counts.size()) != d) {
    throw std::invalid_argument("grid: inconsistent dimensions");
  }
  for (int i = 0; i < d; ++i) {
    if (counts[static_cast<size_t>(i)] < 2) {
      throw std::invalid_argument("grid: counts must be >= 2");
    }
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] < upper[i])) {
      throw std::invalid_argument("grid: bounds must be finite with lower < upper");
    }
  }
}

long GridSpec::total_points() const {
  long total = 1;
  for (int c : counts) total *= c;
  return total;
}

Vec GridSpec::spacing() const {
  Vec s(dim());
  for (int i = 0; i < dim(); ++i) {
    s[i] = (upper[i] - lower[i]) / (counts[static_cast<size_t>(i)] - 1);
  }
  return s;
}

std::vector<Vec> seed_grid(const GridSpec& grid) {
  grid.validate();
  const int d = grid.dim();
  const Vec h = grid.spacing();
  std::vector<Vec> points;
  points.reserve(static_cast<size_t>(grid.total_points()));

  std::vector<int> idx(static_cast<size_t>(d), 0);
  while (true) {
    Vec p(d);
    for (int i = 0; i < d; ++i) {
      const int c = grid.counts[static_cast<size_t>(i)];
      p[i] = idx[static_cast<size_t>(i)] == c - 1
                 ? grid.upper[i]
                 : grid.lower[i] + h[i] * idx[static_cast<size_t>(i)];
    }
    points.push_back(std::move(p));
    int axis = d - 1;
    while (axis >= 0 && ++idx[static_cast<size_t>(axis)] ==
                            grid.counts[static_cast<size_t>(axis)]) {
      idx[static_cast<size_t>(axis)] = 0;
      --axis;
    }
    if (axis < 0) break;
  }
  return points;
}

int Dataset::converged_count() const {
  int n = 0;
  for (const Sample& s : samples) n += s.converged() ? 1 : 0;
  return n;
}

int Dataset::labeled_jacobian_count() const {
  int n = 0;
  for (const Sample& s : samples) n += (s.converged() && s.jac) ? 1 : 0;
  return n;
}

Dataset generate(const std::vector<Vec>& points, const OcpSpec& spec,
                 const GenerateOptions& options, const Provenance& provenance) {
  spec.validate();
  if (points.empty()) throw std::invalid_argument("generate: no points");

  Dataset ds;
  ds.n_x = spec.state_dim();
  ds.n_u = spec.input_dim();
  ds.provenance = provenance;
  if (ds.provenance.version.empty()) ds.provenance.version = kVersion;
  ds.samples.resize(points.size());

  int workers = options.workers > 0
                    ? options.workers
                    : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::max(1, std::min<int>(workers, static_cast<int>(points.size())));

  std::atomic<size_t> next{0};
  auto run = [&]() {
    NlpInstance nlp(spec, Vec::Zero(spec.state_dim()));
    const SqpSolver solver(options.solver);
    for (size_t i = next.fetch_add(1); i < points.size(); i = next.fetch_add(1)) {
      Sample& s = ds.samples[i];
      s.x = points[i];
      nlp.set_param(s.x);
      const OcpSolution sol = solver.solve(nlp);
      s.status = sol.status;
      s.kkt_residual = sol.kkt_residual;
      if (!s.converged()) continue;
      s.u = sol.input;
      if (options.with_sensitivities) {
        const SensitivityResult sens =
            solve_sensitivity(nlp, sol, extract_active_set(nlp, sol));
        if (!sens.degenerate) s.jac = sens.du0_dx;
      }
    }
  };

  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (std::thread& t : pool) t.join();
  }

  const int failed = static_cast<int>(points.size()) - ds.converged_count();
  if (failed > options.max_failure_fraction * static_cast<double>(points.size())) {
    throw NumericalError("dataset generation: " + std::to_string(failed) + " of " +
                         std::to_string(points.size()) +
                         " solves failed; check the domain and solver settings");
  }
  return ds;
}

double covering_radius(const Dataset& ds, const GridSpec& domain, int probe_density) {
  domain.validate();
  std::vector<const Vec*> sites;
  for (const Sample& s : ds.samples) {
    if (s.converged()) sites.push_back(&s.x);
  }
  if (sites.empty()) throw std::invalid_argument("covering radius of an empty dataset");

  double analytic = -1.0;
  if (ds.grid && ds.grid->total_points() == static_cast<long>(sites.size())) {
    analytic = 0.5 * ds.grid->spacing().norm();
  }

  double probed = -1.0;
  if (probe_density >= 2) {
    GridSpec probe = domain;
    probe.counts.assign(static_cast<size_t>(domain.dim()), probe_density);
    for (const Vec& p : seed_grid(probe)) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec* s : sites) best = std::min(best, (p - *s).norm());
      probed = std::max(probed, best);
    }
  }

  if (analytic < 0.0 && probed < 0.0) {
    throw std::invalid_argument("covering radius: need a full grid or probe_density >= 2");
  }
  return std::max(analytic, probed);
}

namespace {

ordered_json vec_to_json(const Vec& v) {
  ordered_json arr = ordered_json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

ordered_json mat_to_json(const Mat& m) {
  ordered_json rows = ordered_json::array();
  for (int r = 0; r < m.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Vec vec_from_json(const ordered_json& arr) {
  Vec v(static_cast<int>(arr.size()));
  for (size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
  return v;
}

Mat mat_from_json(const ordered_json& rows) {
  const int nr = static_cast<int>(rows.size());
  const int nc = nr > 0 ? static_cast<int>(rows[0].size()) : 0;
  Mat m(nr, nc);
  for (int r = 0; r < nr; ++r) {
    for (int c = 0; c < nc; ++c) m(r, c) = rows[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
  }
  return m;
}

SolveStatus status_from_string(const std::string& s, int line) {
  if (s == "ok") return SolveStatus::converged;
  if (s == "max_iter") return SolveStatus::max_iter;
  if (s == "infeasible") return SolveStatus::infeasible;
  throw ConfigError("line " + std::to_string(line) + ": unknown status '" + s + "'");
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");

  ordered_json header;
  header["n_x"] = ds.n_x;
  header["n_u"] = ds.n_u;
  if (ds.grid) {
    ordered_json g;
    g["lower"] = vec_to_json(ds.grid->lower);
    g["upper"] = vec_to_json(ds.grid->upper);
    g["counts"] = ds.grid->counts;
    header["grid"] = std::move(g);
  } else {
    header["grid"] = nullptr;
  }
  header["provenance"] = {{"spec_hash", ds.provenance.spec_hash},
                          {"version", ds.provenance.version},
                          {"seed", ds.provenance.seed}};
  out << header.dump() << "\n";

  for (const Sample& s : ds.samples) {
    ordered_json row;
    row["x"] = vec_to_json(s.x);
    if (s.converged()) {
      row["u"] = vec_to_json(s.u);
      if (s.jac) row["jac"] = mat_to_json(*s.jac);
    }
    row["status"] = to_string(s.status);
    row["kkt"] = s.kkt_residual;
    out << row.dump() << "\n";
  }
  if (!out) throw ConfigError("failed while writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());

  Dataset ds;
  std::string line;
  int line_no = 0;
  auto parse = [&](const std::string& text) {
    ordered_json j = ordered_json::parse(text, nullptr, false);
    if (j.is_discarded()) {
      throw ConfigError("line " + std::to_string(line_no) + ": malformed JSON");
    }
    return j;
  };

  if (!std::getline(in, line)) throw ConfigError("empty dataset file " + path.string());
  ++line_no;
  const ordered_json header = parse(line);
  try {
    ds.n_x = header.at("n_x").get<int>();
    ds.n_u = header.at("n_u").get<int>();
    if (!header.at("grid").is_null()) {
      GridSpec g;
      g.lower = vec_from_json(header["grid"].at("lower"));
      g.upper = vec_from_json(header["grid"].at("upper"));
      g.counts = header["grid"].at("counts").get<std::vector<int>>();
      g.validate();
      ds.grid = std::move(g);
    }
    const auto& prov = header.at("provenance");
    ds.provenance.spec_hash = prov.at("spec_hash").get<std::string>();
    ds.provenance.version = prov.at("version").get<std::string>();
    ds.provenance.seed = prov.at("seed").get<uint64_t>();
  } catch (const ordered_json::exception& e) {
    throw ConfigError("line 1: bad header: " + std::string(e.what()));
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const ordered_json j = parse(line);
    Sample s;
    try {
      s.x = vec_from_json(j.at("x"));
      s.status = status_from_string(j.at("status").get<std::string>(), line_no);
      s.kkt_residual = j.at("kkt").get<double>();
      if (j.contains("u")) s.u = vec_from_json(j["u"]);
      if (j.contains("jac")) s.jac = mat_from_json(j["jac"]);
    } catch (const ordered_json::exception& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (s.x.size() != ds.n_x) {
      throw ConfigError("line " + std::to_string(line_no) + ": state dimension " +
                        std::to_string(s.x.size()) + " does not match header n_x=" +
                        std::to_string(ds.n_x));
    }
    if (s.converged() && s.u.size() != ds.n_u) {
      throw ConfigError("line " + std::to_string(line_no) + ": input dimension mismatch");
    }
    if (s.jac && (s.jac->rows() != ds.n_u || s.jac->cols() != ds.n_x)) {
      throw ConfigError("line " + std::to_string(line_no) + ": jacobian shape mismatch");
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<Vec> sample_uniform(const GridSpec& domain, int count, uint64_t seed) {
  domain.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vec> points;
  points.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    Vec p(domain.dim());
    for (int d = 0; d < domain.dim(); ++d) {
      p[d] = domain.lower[d] + (domain.upper[d] - domain.lower[d]) * unit(rng);
    }
    points.push_back(std::move(p));
  }
  return points;
}

}  // namespace nnmpc
