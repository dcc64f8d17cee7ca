#pragma once

#include <string>
#include <vector>

namespace objbridge {

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return max_rel_error < tolerance; }
};

// Finite-difference checks for every backward rule: per-layer at 1e-4,
// composite policy forwards (tiny config) at 1e-3, `seeds` instances each.
std::vector<GradCheckResult> run_gradient_suite(int seeds = 10);

}  // namespace objbridge
