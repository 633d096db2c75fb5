// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mpfm/config.hpp"
#include "mpfm/model_io.hpp"
#include "mpfm/scoring.hpp"

namespace mpfm {

/// Mann-Whitney AUC with average ranks for ties: the fraction of
/// (positive, negative) pairs ordered correctly, ties counting one half.
/// Throws UndefinedMetric unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct HeadAucs {
  double global = 0.0;
  double local = 0.0;
  double normal = 0.0;  // of -S_n, the direction in which it enters S
  double residual = 0.0;
};

struct EvalReport {
  double auc = 0.0;
  std::size_t count = 0;
  std::size_t positives = 0;
  HeadAucs heads;
  std::string config_digest;
  std::uint64_t seed = 0;
  /// Combined-score AUC of the k-means-only model (negative if not computed).
  double untrained_auc = -1.0;
};

EvalReport evaluate_scores(std::span<const ScoreBreakdown> scores);

/// Header `sample_id,S_g,S_a,S_n,S_r,S,label`, one row per sample.
void write_scores(std::span<const ScoreBreakdown> scores, std::ostream& out);

struct ExperimentReport {
  std::vector<EvalReport> runs;
  double mean_auc = 0.0;
  /// Sample standard deviation over runs (0 for a single run).
  double std_auc = 0.0;
  double mean_untrained_auc = -1.0;
};

/// Mean and sample standard deviation of the run AUCs.
ExperimentReport summarize(std::vector<EvalReport> runs);

/// One seeded run: generate or load data, train, score the test split.
struct RunArtifacts {
  ModelBundle model;
  std::vector<ScoreBreakdown> scores;
  EvalReport report;
  std::vector<IterationMetrics> history;
};

/// Runs repeat r of the experiment in memory. When `run_dir` is non-empty,
/// the model, scores, metrics stream, and report are written there.
RunArtifacts run_once(const RunConfig& config, std::size_t repeat_index, const std::filesystem::path& run_dir = {});

/// All repeats, writing artifacts under config.out; when config.lambda_sweep is
/// non-empty one extra report per lambda value follows under out/lambda_<v>.
struct ExperimentResult {
  ExperimentReport main;
  std::vector<std::pair<double, ExperimentReport>> sweep;
};

ExperimentResult run_experiment(const RunConfig& config, bool write_artifacts = true);

std::string report_json(const EvalReport& r);
std::string report_json(const ExperimentReport& r);

/// Data for repeat r: generated from the spec (seed offset by r) or loaded
/// from config.paths.
SyntheticData experiment_data(const RunConfig& config, std::size_t repeat_index);

}  // namespace mpfm
