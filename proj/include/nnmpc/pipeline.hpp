#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "nnmpc/certify.hpp"
#include "nnmpc/config.hpp"

namespace nnmpc {

struct PipelineIo {
  std::filesystem::path out_dir;
  int workers = 0;   // 0 -> hardware concurrency
  bool force = false;
  std::ostream* log = &std::cout;
};

struct StageResult {
  std::vector<std::string> artifacts;  // paths relative to out_dir
  double wall_time_s = 0.0;
  bool cache_hit = false;
};

// Stage commands behind the CLI. Idempotent: when the expected artifacts
// exist and the manifest carries the same config hash, the stage is skipped
// (cache hit) unless forced.

StageResult cmd_gen_data(const RunConfig& cfg, const PipelineIo& io,
                         bool with_sensitivities = true);

/// variant: "nominal" (MSE only) or "sensreg" (full loss). Generates and
/// caches the labeled validation set on first use; both variants share it
/// along with the initialization seed.
StageResult cmd_train(const RunConfig& cfg, const PipelineIo& io,
                      const std::string& variant);

std::pair<StageResult, BoundReport> cmd_certify(const RunConfig& cfg,
                                                const PipelineIo& io,
                                                const std::string& variant,
                                                bool with_probe);

/// controller: "mpc", "nominal", "sensreg" or "disturbed".
StageResult cmd_simulate(const RunConfig& cfg, const PipelineIo& io,
                         const std::string& controller);

StageResult cmd_report(const RunConfig& cfg, const PipelineIo& io);

/// Artifact names used by the stages (relative to out_dir).
namespace artifact {
inline constexpr const char* dataset = "dataset.jsonl";
inline constexpr const char* validation = "validation.jsonl";
std::string checkpoint(const std::string& variant);
std::string train_report(const std::string& variant);
std::string loss_history(const std::string& variant);
std::string bound_report(const std::string& variant);
std::string trajectory(const std::string& controller);
std::string metrics(const std::string& controller);
inline constexpr const char* fig1 = "fig1.svg";
inline constexpr const char* fig2_data = "fig2_data.csv";
inline constexpr const char* tables = "tables.md";
inline constexpr const char* manifest = "manifest.json";
}  // namespace artifact

}  // namespace nnmpc
