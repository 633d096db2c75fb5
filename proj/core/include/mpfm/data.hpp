// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mpfm/scoring.hpp"

namespace mpfm {

enum class Split { TrainNormal, TrainAnomaly, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& name);

struct Dataset {
  Split split = Split::Test;
  std::size_t channels = 0;
  std::vector<FeatureSample> samples;
  std::string provenance;

  /// Throws InvalidInput on shape, label, or id-uniqueness violations.
  void validate() const;
  friend bool operator==(const Dataset& a, const Dataset& b);
};

/// Per-patch anomaly generator: `defect_patches` distinct patches receive
/// magnitude * direction. With `balanced` the sign alternates between
/// patches, so an even count leaves the pooled mean unchanged.
struct DefectGenerator {
  std::vector<double> direction;  // unit length after normalization; C entries
  double magnitude = 8.0;
  std::size_t defect_patches = 1;
  bool balanced = false;
};

/// Test anomalies of the open-set split: a held-out mode fraction (samples
/// whose patches come from a mode absent from training) and, for the rest,
/// patch defects from a generator disjoint from the seen one.
struct UnseenGenerator {
  double held_out_fraction = 0.3;
  std::vector<double> held_out_center;  // empty: centroid of the normal modes
  DefectGenerator defects;
};

struct SyntheticSpec {
  std::size_t channels = 8;
  std::size_t patches = 16;
  std::size_t modes = 4;
  double mode_distance = 10.0;
  double mode_spread = 1.0;
  /// Explicit mode centers (modes x channels); empty: a regular simplex with
  /// pairwise distance mode_distance.
  std::vector<std::vector<double>> centers;

  DefectGenerator seen;
  UnseenGenerator unseen;

  std::size_t train_normal = 2000;
  std::size_t train_anomaly = 10;
  std::size_t test_normal = 500;
  std::size_t test_anomaly = 200;
  std::uint64_t seed = 0;

  /// The default benchmark: C = 8, P = 16, four modes 10 apart, unit spread.
  /// Seen and unseen defects are balanced pairs, invisible to the pooled
  /// feature, so only the patch head can detect them.
  static SyntheticSpec benchmark();

  /// Mode centers after defaulting.
  std::vector<std::vector<double>> mode_centers() const;
  void validate() const;
};

struct SyntheticData {
  Dataset train_normal;
  Dataset train_anomaly;
  Dataset test;
};

/// Deterministic given spec.seed. Sample ids are unique across the three
/// splits.
SyntheticData generate(const SyntheticSpec& spec);

/// Text format: a version line `# mpfm-dataset v1 split=<split>`, a header
/// `sample_id,patch_id,label,f0,...`, then one row per patch sorted by
/// (sample_id, patch_id), values written with 17 significant digits.
void write_dataset(const Dataset& data, std::ostream& out);
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// 17 significant digits, enough to parse back to exactly v.
std::string format_double(double v);

}  // namespace mpfm
