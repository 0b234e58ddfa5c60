#pragma once

#include <string>
#include <vector>

// Self-contained property suites. Each named property runs a batch of
// seeded random instances and reports its worst-case violation; the CLI
// prints one PASS/FAIL line per property.

namespace gapest::verify {

struct PropertyResult {
  std::string name;
  double worst = 0.0;  // worst violation magnitude over all instances
  double tolerance = 0.0;
  bool pass = false;
};

/// Suites: "linalg", "theorems", "calibration", "estimators", "all".
/// Throws std::invalid_argument on an unknown suite name.
///
/// `mutate_pinch` is a test fixture: it swaps the pinching operator for a
/// deliberately sign-flipped variant so the suite runner's failure path
/// can be exercised; the pinching property must then report FAIL.
std::vector<PropertyResult> run_suite(const std::string& suite,
                                      bool mutate_pinch = false);

/// True iff every property passed.
bool all_pass(const std::vector<PropertyResult>& results);

}  // namespace gapest::verify
