#pragma once

#include <ostream>

#include "somn/gradcheck.hpp"

namespace somn {

struct GradSuiteResult {
    double max_rel_err = 0.0;
    int checked = 0;
    int skipped = 0;
    std::string worst_case;
};

// Central-finite-difference verification of every tape primitive plus the
// full dual-branch loss, on randomized shapes, 64-bit. One round per seed;
// per-case lines go to `log` when given.
GradSuiteResult run_gradient_suite(int seeds, std::ostream* log = nullptr);

}  // namespace somn
