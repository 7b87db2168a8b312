#pragma once

#include <functional>
#include <string>

#include "maestro/graph.hpp"

namespace maestro {

/// Builds a scalar-valued graph from a leaf holding x. Called repeatedly
/// with perturbed copies of x, so it must be deterministic in x.
using ScalarFn = std::function<ad::Node*(ad::Graph&, ad::Node*)>;

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t worst_coord = 0;
    double analytic_at_worst = 0.0;
    double fd_at_worst = 0.0;
};

/// Compares the reverse-mode gradient of f at x against central finite
/// differences, coordinate by coordinate. Relative error uses
/// |analytic - fd| / max(1, |analytic|). eps must lie in [1e-7, 1e-3].
GradCheckResult gradient_check(const ScalarFn& f, const Tensor& x, double eps);

} // namespace maestro
