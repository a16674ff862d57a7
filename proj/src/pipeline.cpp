#include "nnmpc/pipeline.hpp"

#include <chrono>
#include <fstream>

#include <nlohmann/json.hpp>

#include "nnmpc/errors.hpp"
#include "nnmpc/simulate.hpp"
#include "nnmpc/version.hpp"

namespace nnmpc {

using ordered_json = nlohmann::ordered_json;

namespace artifact {
std::string checkpoint(const std::string& v) { return "checkpoint_" + v + ".json"; }
std::string train_report(const std::string& v) { return "train_report_" + v + ".json"; }
std::string loss_history(const std::string& v) { return "loss_history_" + v + ".csv"; }
std::string bound_report(const std::string& v) { return "bound_report_" + v + ".json"; }
std::string trajectory(const std::string& c) { return "traj_" + c + ".csv"; }
std::string metrics(const std::string& c) { return "metrics_" + c + ".json"; }
}  // namespace artifact

namespace {

class StageRunner {
 public:
  StageRunner(const RunConfig& cfg, const PipelineIo& io, std::string stage)
      : cfg_(cfg), io_(io), stage_(std::move(stage)), start_(clock::now()) {
    std::filesystem::create_directories(io_.out_dir);
  }

  std::filesystem::path path(const std::string& name) const { return io_.out_dir / name; }

  bool cached(const std::vector<std::string>& artifacts) const {
    if (io_.force) return false;
    for (const std::string& a : artifacts) {
      if (!std::filesystem::exists(path(a))) return false;
    }
    // Only trust existing outputs that were produced by this exact config.
    const auto manifest_path = path(artifact::manifest);
    if (!std::filesystem::exists(manifest_path)) return false;
    std::ifstream in(manifest_path);
    ordered_json m = ordered_json::parse(in, nullptr, false);
    if (m.is_discarded() || !m.contains("config_hash")) return false;
    return m["config_hash"].get<std::string>() == config_hash(cfg_);
  }

  StageResult finish(std::vector<std::string> artifacts, bool cache_hit) {
    StageResult res;
    res.artifacts = std::move(artifacts);
    res.cache_hit = cache_hit;
    res.wall_time_s =
        std::chrono::duration<double>(clock::now() - start_).count();
    update_manifest(res);
    return res;
  }

 private:
  using clock = std::chrono::steady_clock;

  void update_manifest(const StageResult& res) const {
    const auto manifest_path = path(artifact::manifest);
    ordered_json m;
    if (std::filesystem::exists(manifest_path)) {
      std::ifstream in(manifest_path);
      m = ordered_json::parse(in, nullptr, false);
      if (m.is_discarded()) m = ordered_json::object();
    }
    const std::string hash = config_hash(cfg_);
    if (!m.contains("config_hash") || m["config_hash"] != hash) {
      // New config: stale stage entries no longer describe the outputs.
      m = ordered_json::object();
      m["config_hash"] = hash;
      m["version"] = kVersion;
      m["stages"] = ordered_json::object();
    }
    m["version"] = kVersion;
    ordered_json entry;
    entry["artifacts"] = res.artifacts;
    entry["wall_time_s"] = res.wall_time_s;
    entry["cache_hit"] = res.cache_hit;
    m["stages"][stage_] = std::move(entry);
    std::ofstream out(manifest_path, std::ios::binary);
    out << m.dump(2) << "\n";
  }

  const RunConfig& cfg_;
  const PipelineIo& io_;
  std::string stage_;
  clock::time_point start_;
};

Provenance make_provenance(const RunConfig& cfg, uint64_t seed) {
  return Provenance{config_hash(cfg), kVersion, seed};
}

Dataset require_dataset(const StageRunner& runner, const char* name) {
  const auto p = runner.path(name);
  if (!std::filesystem::exists(p)) {
    throw ConfigError("missing " + p.string() + "; run gen-data first");
  }
  return load_dataset(p);
}

Dataset load_or_make_validation(const RunConfig& cfg, const PipelineIo& io,
                                const StageRunner& runner, std::ostream& log) {
  const auto p = runner.path(artifact::validation);
  if (std::filesystem::exists(p) && !io.force) {
    Dataset v = load_dataset(p);
    if (v.provenance.spec_hash == config_hash(cfg)) return v;
  }
  log << "labeling validation set (" << cfg.validation_points << " points)\n";
  GenerateOptions opt;
  opt.with_sensitivities = false;
  opt.workers = io.workers;
  opt.solver = cfg.make_sqp_settings();
  Dataset v = generate(sample_uniform(cfg.grid, cfg.validation_points,
                                      cfg.validation_seed()),
                       cfg.make_ocp_spec(), opt,
                       make_provenance(cfg, cfg.validation_seed()));
  save_dataset(v, p);
  return v;
}

void check_variant(const std::string& variant) {
  if (variant != "nominal" && variant != "sensreg") {
    throw ConfigError("unknown variant '" + variant + "' (expected nominal|sensreg)");
  }
}

}  // namespace

StageResult cmd_gen_data(const RunConfig& cfg, const PipelineIo& io,
                         bool with_sensitivities) {
  StageRunner runner(cfg, io, "gen-data");
  std::ostream& log = *io.log;
  const std::vector<std::string> artifacts{artifact::dataset};
  if (runner.cached(artifacts)) {
    log << "gen-data: cached dataset is up to date\n";
    return runner.finish(artifacts, true);
  }

  const std::vector<Vec> points = seed_grid(cfg.grid);
  log << "gen-data: solving " << points.size() << " optimal control problems\n";
  GenerateOptions opt;
  opt.with_sensitivities = with_sensitivities;
  opt.workers = io.workers;
  opt.solver = cfg.make_sqp_settings();
  Dataset ds = generate(points, cfg.make_ocp_spec(), opt,
                        make_provenance(cfg, cfg.dataset_seed()));
  ds.grid = cfg.grid;

  const int failed = static_cast<int>(ds.samples.size()) - ds.converged_count();
  const int degenerate = ds.converged_count() - ds.labeled_jacobian_count();
  log << "gen-data: " << ds.converged_count() << "/" << ds.samples.size()
      << " converged";
  if (failed > 0) log << ", " << failed << " excluded (failed solves)";
  if (with_sensitivities && degenerate > 0) {
    log << ", " << degenerate << " without sensitivities (degenerate)";
  }
  log << "\n";

  save_dataset(ds, runner.path(artifact::dataset));
  return runner.finish(artifacts, false);
}

StageResult cmd_train(const RunConfig& cfg, const PipelineIo& io,
                      const std::string& variant) {
  check_variant(variant);
  StageRunner runner(cfg, io, "train-" + variant);
  std::ostream& log = *io.log;
  const std::vector<std::string> artifacts{artifact::checkpoint(variant),
                                           artifact::train_report(variant),
                                           artifact::loss_history(variant)};
  if (runner.cached(artifacts)) {
    log << "train: cached checkpoint for '" << variant << "' is up to date\n";
    return runner.finish(artifacts, true);
  }

  const Dataset data = require_dataset(runner, artifact::dataset);
  const Dataset validation = load_or_make_validation(cfg, io, runner, log);

  log << "train: variant " << variant << ", " << cfg.epochs << " epochs on "
      << data.converged_count() << " samples\n";
  const TrainConfig tc = cfg.make_train_config(variant == "sensreg");
  auto [params, report] = train(data, &validation, tc);
  log << "train: final epsilon_D " << report.final_epsilon_d << ", validation R2 "
      << report.final_r2 << "\n";

  save_mlp(params, runner.path(artifact::checkpoint(variant)),
           make_provenance(cfg, tc.init_seed));
  save_loss_history(report, runner.path(artifact::loss_history(variant)));

  ordered_json tr;
  tr["variant"] = variant;
  tr["epochs"] = report.history.size();
  tr["final_epsilon_d"] = report.final_epsilon_d;
  tr["final_r2"] = report.final_r2;
  tr["wall_time_s"] = report.wall_time_s;
  std::ofstream out(runner.path(artifact::train_report(variant)), std::ios::binary);
  out << tr.dump(2) << "\n";

  return runner.finish(artifacts, false);
}

std::pair<StageResult, BoundReport> cmd_certify(const RunConfig& cfg,
                                                const PipelineIo& io,
                                                const std::string& variant,
                                                bool with_probe) {
  check_variant(variant);
  StageRunner runner(cfg, io, "certify-" + variant +
                                  (with_probe ? "-probed" : ""));
  std::ostream& log = *io.log;

  const Dataset data = require_dataset(runner, artifact::dataset);
  const auto ckpt = runner.path(artifact::checkpoint(variant));
  if (!std::filesystem::exists(ckpt)) {
    throw ConfigError("missing " + ckpt.string() + "; run train --variant " + variant);
  }
  const MlpParams net = load_mlp(ckpt);

  if (with_probe) {
    log << "certify: probing a " << cfg.probe_factor
        << "x denser grid with fresh solves\n";
  }
  const BoundReport report =
      certify(net, data, cfg.grid, cfg.make_ocp_spec(),
              cfg.make_certify_options(with_probe, io.workers));
  save_bound_report(report, runner.path(artifact::bound_report(variant)));
  log << format_bound_report(report);

  return {runner.finish({artifact::bound_report(variant)}, false), report};
}

StageResult cmd_simulate(const RunConfig& cfg, const PipelineIo& io,
                         const std::string& controller) {
  if (controller != "mpc" && controller != "nominal" && controller != "sensreg" &&
      controller != "disturbed") {
    throw ConfigError("unknown controller '" + controller +
                      "' (expected mpc|nominal|sensreg|disturbed)");
  }
  StageRunner runner(cfg, io, "simulate-" + controller);
  std::ostream& log = *io.log;
  const std::vector<std::string> artifacts{artifact::trajectory(controller),
                                           artifact::metrics(controller)};
  if (runner.cached(artifacts)) {
    log << "simulate: cached trajectory for '" << controller << "' is up to date\n";
    return runner.finish(artifacts, true);
  }

  SimOptions opt;
  opt.x0 = cfg.x0;
  opt.steps = cfg.sim_steps;
  opt.solver = cfg.make_sqp_settings();

  MlpParams net;
  if (controller == "nominal" || controller == "sensreg") {
    const auto ckpt = runner.path(artifact::checkpoint(controller));
    if (!std::filesystem::exists(ckpt)) {
      throw ConfigError("missing " + ckpt.string() + "; run train --variant " +
                        controller);
    }
    net = load_mlp(ckpt);
    opt.kind = ControllerKind::nn;
    opt.net = &net;
  } else if (controller == "disturbed") {
    opt.kind = ControllerKind::mpc_disturbed;
    opt.disturbance_epsilon = cfg.disturbance_epsilon;
    opt.disturbance_seed = cfg.disturbance_seed();
  }

  const OcpSpec spec = cfg.make_ocp_spec();
  log << "simulate: controller " << controller << ", " << cfg.sim_steps
      << " steps of " << spec.model.step_length() << " s\n";
  const Trajectory traj = simulate_closed_loop(spec, opt);
  const ClMetrics m = compute_metrics(traj, spec);
  log << "simulate: violations " << m.violation_pct << "% (max " << m.max_violation
      << "), max divergence " << m.max_input_divergence << ", terminal |x| "
      << m.terminal_state_norm << "\n";

  save_trajectory_csv(traj, spec, runner.path(artifact::trajectory(controller)));
  save_metrics(m, runner.path(artifact::metrics(controller)));
  return runner.finish(artifacts, false);
}

}  // namespace nnmpc
