#pragma once

#include <string>
#include <vector>

#include "ssf/common.hpp"

namespace ssf {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Mechanism invariants runnable without a test harness: window partition /
// reverse roundtrips, shifted-window mask exactness, softmax normalization,
// patch-merging shape contract.
std::vector<CheckResult> run_selftest();

}  // namespace ssf
