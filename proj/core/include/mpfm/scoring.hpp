// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpfm/autodiff.hpp"
#include "mpfm/flow.hpp"
#include "mpfm/mlp.hpp"
#include "mpfm/rng.hpp"
#include "mpfm/tensor.hpp"

namespace mpfm {

/// One data point: P x C patches, their mean, and a 0/1 label.
struct FeatureSample {
  std::int64_t id = 0;
  int label = 0;
  Tensor patches;  // P x C
  std::vector<double> pooled;

  static FeatureSample make(std::int64_t id, Tensor patches, int label);
  std::size_t patch_count() const { return patches.rows(); }
  std::size_t channels() const { return patches.cols(); }
};

/// How a sample becomes the flow input z.
enum class Pooling { Mean, Flatten };
std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& name);

std::size_t embedding_dim(Pooling pooling, std::size_t patches, std::size_t channels);
std::vector<double> embed(const FeatureSample& sample, Pooling pooling);

/// Samples stacked for vectorized scoring. All samples share P and C.
struct SampleBatch {
  std::vector<std::int64_t> ids;
  std::vector<int> labels;
  Tensor pooled;    // n x C
  Tensor embedded;  // n x d
  Tensor patches;   // (n P) x C
  std::size_t patch_count = 0;

  std::size_t size() const { return ids.size(); }
};

SampleBatch make_batch(std::span<const FeatureSample> samples, Pooling pooling);
SampleBatch make_batch(std::span<const FeatureSample* const> samples, Pooling pooling);

enum class BinaryLoss { Logistic, Deviation };
std::string to_string(BinaryLoss b);
BinaryLoss binary_loss_from_string(const std::string& name);

/// Target used when training the pooled-normality head.
enum class NormalTarget { Normality, Label };
std::string to_string(NormalTarget t);
NormalTarget normal_target_from_string(const std::string& name);

/// head_a: C -> 1 per patch, head_n: C -> 1 on the pooled patch, head_r: d -> 1
/// on the standardized residual, and an affine calibration of S_g.
struct ScoringHeads {
  MLP head_a;
  MLP head_n;
  MLP head_r;
  double gain = 0.0;
  double bias = 0.0;

  /// Hidden layers are random; every final layer and the calibration start at
  /// zero, so all untrained scoring losses equal log 2.
  static ScoringHeads create(std::size_t channels, std::size_t dim, const std::vector<std::size_t>& hidden,
                             Activation act, Rng& rng);
  /// Same, with separate hidden sizes for the patch head.
  static ScoringHeads create(std::size_t channels, std::size_t dim, const std::vector<std::size_t>& local_hidden,
                             const std::vector<std::size_t>& hidden, Activation act, Rng& rng);
  friend bool operator==(const ScoringHeads&, const ScoringHeads&) = default;
};

struct BoundHeads {
  BoundHeads(const ScoringHeads& heads, bool trainable);

  BoundMLP head_a;
  BoundMLP head_n;
  BoundMLP head_r;
  ad::Var gain;  // 1 x 1
  ad::Var bias;  // 1 x 1
};

/// Number of patches averaged by the local head: ceil(fraction * P), at least 1.
std::size_t top_count(double fraction, std::size_t patches);

/// Columns of per-sample scores (n x 1 each) from one graph evaluation.
struct HeadScores {
  ad::Var transformed;  // n x d, psi(z)
  ad::Var s_g;
  ad::Var s_a;
  ad::Var s_n;
  ad::Var s_r;
};

HeadScores forward_scores(const BoundFlow& flow, const BoundHeads& heads, const SampleBatch& batch,
                          double top_fraction);

struct ScoreBreakdown {
  std::int64_t id = 0;
  int label = 0;
  double s_g = 0.0;
  double s_a = 0.0;
  double s_n = 0.0;
  double s_r = 0.0;
  double s = 0.0;
};

/// S_g + S_a + S_r - S_n, in that order.
double combine(double s_g, double s_a, double s_n, double s_r);

struct ScoringOptions {
  double top_fraction = 0.10;
  Pooling pooling = Pooling::Mean;
};

std::vector<ScoreBreakdown> score_batch(const FlowModel& model, const ScoringHeads& heads,
                                        std::span<const FeatureSample> samples, const ScoringOptions& options = {});
ScoreBreakdown combined_score(const FlowModel& model, const ScoringHeads& heads, const FeatureSample& sample,
                              const ScoringOptions& options = {});

double score_global(const FlowModel& model, const FeatureSample& sample, Pooling pooling = Pooling::Mean);
double score_local(const ScoringHeads& heads, const FeatureSample& sample, double top_fraction = 0.10);
double score_normal(const ScoringHeads& heads, const FeatureSample& sample);
double score_residual(const FlowModel& model, const ScoringHeads& heads, const FeatureSample& sample,
                      Pooling pooling = Pooling::Mean);

/// Logistic: softplus(raw) - y raw. Deviation: (1 - y)|raw| + y max(0, margin - raw).
double binary_score_loss(double raw, int label, BinaryLoss kind = BinaryLoss::Logistic);
/// Batch mean of the per-sample loss; raw is n x 1.
ad::Var binary_score_loss(const ad::Var& raw, std::span<const int> labels, BinaryLoss kind = BinaryLoss::Logistic);

inline constexpr double kDeviationMargin = 5.0;

/// Per-head training losses for a labeled batch.
struct ScoringLosses {
  ad::Var global;    // L_Mg on the calibrated S_g
  ad::Var local;     // L_Ma
  ad::Var normal;    // L_Mn
  ad::Var residual;  // L_Mr
  HeadScores scores;
};

struct ScoringLossOptions {
  double top_fraction = 0.10;
  BinaryLoss loss = BinaryLoss::Logistic;
  NormalTarget normal_target = NormalTarget::Normality;
};

ScoringLosses scoring_losses(const BoundFlow& flow, const BoundHeads& heads, const SampleBatch& batch,
                             const ScoringLossOptions& options = {});

}  // namespace mpfm
