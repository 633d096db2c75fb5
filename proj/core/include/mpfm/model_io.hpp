// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "mpfm/flow.hpp"
#include "mpfm/scoring.hpp"
#include "mpfm/snapshot.hpp"

namespace mpfm {

/// Everything needed to score new samples.
struct ModelBundle {
  FlowModel flow;
  ScoringHeads heads;
  ScoringOptions scoring;

  friend bool operator==(const ModelBundle& a, const ModelBundle& b);
};

Snapshot to_snapshot(const ModelBundle& bundle);
ModelBundle from_snapshot(const Snapshot& snap);

void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

}  // namespace mpfm
