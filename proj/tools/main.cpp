// Command line front end: gen-data, train, certify, simulate, report.
// Exit codes: 0 success, 2 config error, 3 numerical failure,
// 4 certification infeasible (epsilon_d >= epsilon).

#include <CLI11.hpp>
#include <iostream>

#include "nnmpc/errors.hpp"
#include "nnmpc/pipeline.hpp"
#include "nnmpc/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitInfeasible = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  int64_t seed = -1;
  int workers = 0;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration JSON");
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args.seed, "master seed (overrides config)");
  cmd->add_option("--workers", args.workers, "parallel workers (0 = all cores)");
  cmd->add_flag("--force", args.force, "recompute even when cached outputs exist");
}

nnmpc::RunConfig make_config(const CommonArgs& args) {
  nnmpc::RunConfig cfg;
  if (!args.config_path.empty()) {
    cfg = nnmpc::load_config(args.config_path);
  }
  if (args.seed >= 0) cfg.seed = static_cast<uint64_t>(args.seed);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

nnmpc::PipelineIo make_io(const CommonArgs& args, const nnmpc::RunConfig& cfg) {
  nnmpc::PipelineIo io;
  io.out_dir = cfg.out_dir;
  io.workers = args.workers;
  io.force = args.force;
  return io;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imitation-MPC toolkit: dataset generation, sensitivity-regularized "
               "training, Lipschitz error-bound certification and closed-loop study"};
  app.set_version_flag("--version", nnmpc::kVersion);
  app.require_subcommand(1);

  CommonArgs args;

  auto* gen = app.add_subcommand("gen-data", "label a state grid with OCP solves");
  bool no_sens = false;
  add_common(gen, args);
  gen->add_flag("--no-sens", no_sens, "skip control-law Jacobians");

  auto* train = app.add_subcommand("train", "train an imitation network");
  std::string variant = "sensreg";
  add_common(train, args);
  train->add_option("--variant", variant, "nominal | sensreg")->capture_default_str();

  auto* certify = app.add_subcommand("certify", "evaluate the worst-case error bound");
  std::string cert_variant = "sensreg";
  bool probe = false;
  add_common(certify, args);
  certify->add_option("--variant", cert_variant, "nominal | sensreg")->capture_default_str();
  certify->add_flag("--probe", probe, "probe a denser grid with fresh OCP solves");

  auto* simulate = app.add_subcommand("simulate", "closed-loop rollout");
  std::string controller = "mpc";
  add_common(simulate, args);
  simulate->add_option("--controller", controller, "mpc | nominal | sensreg | disturbed")
      ->capture_default_str();

  auto* report = app.add_subcommand("report", "figures and summary tables");
  add_common(report, args);

  CLI11_PARSE(app, argc, argv);

  try {
    const nnmpc::RunConfig cfg = make_config(args);
    const nnmpc::PipelineIo io = make_io(args, cfg);

    if (gen->parsed()) {
      nnmpc::cmd_gen_data(cfg, io, !no_sens);
    } else if (train->parsed()) {
      nnmpc::cmd_train(cfg, io, variant);
    } else if (certify->parsed()) {
      const auto [stage, bound] = nnmpc::cmd_certify(cfg, io, cert_variant, probe);
      if (bound.infeasible_reason) {
        std::cerr << "certification infeasible: " << *bound.infeasible_reason << "\n";
        return kExitInfeasible;
      }
    } else if (simulate->parsed()) {
      nnmpc::cmd_simulate(cfg, io, controller);
    } else if (report->parsed()) {
      nnmpc::cmd_report(cfg, io);
    }
  } catch (const nnmpc::BoundInfeasibleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const nnmpc::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nnmpc::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
