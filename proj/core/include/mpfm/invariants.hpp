// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mpfm {

struct InvariantResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick self-check of the closed-form identities and numeric contracts on
/// seeded random inputs. Used by `mpfm check`.
std::vector<InvariantResult> run_invariant_suite(std::uint64_t seed = 0);

}  // namespace mpfm
