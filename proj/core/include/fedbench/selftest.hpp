#pragma once

#include <string>
#include <vector>

namespace fedbench {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Runs the built-in property and oracle suites (gradient vs finite
/// differences, aggregator brute-force equivalence, unanimity, attack
/// feasibility, Shapley axioms, flip semantics, partition properties).
std::vector<CheckResult> run_selftest();

}  // namespace fedbench
