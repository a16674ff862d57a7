#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nnmpc/ocp.hpp"

namespace nnmpc {

/// Axis-aligned box with per-dimension point counts; doubles as the
/// certification domain description.
struct GridSpec {
  Vec lower;
  Vec upper;
  std::vector<int> counts;

  void validate() const;
  int dim() const { return static_cast<int>(lower.size()); }
  long total_points() const;
  Vec spacing() const;  // (upper - lower) / (counts - 1)
};

/// Cartesian product of the per-dimension linspaces (endpoints included),
/// row-major: the last dimension varies fastest.
std::vector<Vec> seed_grid(const GridSpec& grid);

struct Sample {
  Vec x;
  Vec u;                    // label kappa(x); meaningful only when converged
  std::optional<Mat> jac;   // d kappa / d x; absent when degenerate or not requested
  SolveStatus status = SolveStatus::max_iter;
  double kkt_residual = std::numeric_limits<double>::infinity();

  bool converged() const { return status == SolveStatus::converged; }
};

struct Provenance {
  std::string spec_hash;
  std::string version;
  uint64_t seed = 0;
};

struct Dataset {
  int n_x = 0;
  int n_u = 0;
  std::optional<GridSpec> grid;
  Provenance provenance;
  std::vector<Sample> samples;

  int converged_count() const;
  int labeled_jacobian_count() const;
};

struct GenerateOptions {
  bool with_sensitivities = true;
  int workers = 0;  // 0 -> hardware concurrency
  double max_failure_fraction = 0.05;
  SqpSettings solver;
};

/// Labels each point with an independent cold-started OCP solve (and its
/// control-law Jacobian when requested). Fan-out across a worker pool;
/// results are merged in input order, so worker count never changes the
/// dataset. Throws NumericalError when more than max_failure_fraction of the
/// solves fail.
Dataset generate(const std::vector<Vec>& points, const OcpSpec& spec,
                 const GenerateOptions& options = {},
                 const Provenance& provenance = {});

/// Largest distance from any point of the domain to its nearest converged
/// sample. Full grids admit the analytic half-cell-diagonal value; otherwise
/// (and additionally) a dense probe grid with probe_density points per
/// dimension is scanned. Returns the larger value when both are available.
double covering_radius(const Dataset& ds, const GridSpec& domain, int probe_density);

/// JSON-lines persistence: one header line (dimensions, grid, provenance)
/// followed by one sample per line. Lossless round-trip.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Uniform random states in the domain box (fixed seed -> fixed set);
/// used for validation sets and Lipschitz sampling.
std::vector<Vec> sample_uniform(const GridSpec& domain, int count, uint64_t seed);

}  // namespace nnmpc
