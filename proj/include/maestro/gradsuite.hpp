#pragma once

#include <string>
#include <vector>

#include "maestro/gradcheck.hpp"

namespace maestro {

struct GradSuiteEntry {
    std::string path;
    double max_rel_err = 0.0;
    double limit = 1e-4;
    bool pass = false;
};

/// Finite-difference audit of every block's forward path (and the spectral
/// mask parameters), 64-bit, central differences. One entry per path; each
/// runs `inputs_per_path` random inputs and keeps the worst error.
std::vector<GradSuiteEntry> run_gradient_suite(std::size_t inputs_per_path = 10,
                                               double eps = 1e-4, double limit = 1e-4);

} // namespace maestro
