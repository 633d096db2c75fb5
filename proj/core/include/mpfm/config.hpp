// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mpfm/data.hpp"
#include "mpfm/trainer.hpp"

namespace mpfm {

/// Dataset files used instead of the synthetic generator.
struct DataPaths {
  std::filesystem::path train_normal;
  std::filesystem::path train_anomaly;
  std::filesystem::path test;
};

/// One experiment document. Run r of a repeated experiment uses training
/// seed `seed + r` and data seed `data.seed + r`.
struct RunConfig {
  TrainConfig train = TrainConfig::benchmark();
  SyntheticSpec data = SyntheticSpec::benchmark();
  std::optional<DataPaths> paths;
  std::uint64_t seed = 0;
  std::size_t repeat = 1;
  std::filesystem::path out = "mpfm-run";
  /// Extra lambda values evaluated after the main run (empty: none).
  std::vector<double> lambda_sweep;
  /// Score and report an untrained (k-means-only) model alongside each run.
  bool compare_untrained = true;
  /// Reverse-trajectory steps used by the `sample` command.
  std::size_t sample_steps = 16;
  std::size_t sample_count = 100;
};

/// Parses a JSON document. Unknown keys, wrong types, and invalid values all
/// raise ConfigError naming the offending key.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON of every field (defaults included).
std::string to_json(const RunConfig& config);

/// FNV-1a 64 of the canonical JSON, as 16 hex digits.
std::string config_digest(const RunConfig& config);

/// Applies one `--mode` override: literal-mimr, batch-marginal, per-sample-t,
/// one-step-psi, or endpoint=<prior|noise|assigned_mean|assigned_sample>.
void apply_mode(RunConfig& config, const std::string& mode);

/// One JSON object per line for the metrics stream.
std::string metrics_json(const IterationMetrics& m);

}  // namespace mpfm
