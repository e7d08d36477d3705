#pragma once

#include <string>
#include <vector>

#include "mosaic_sr/gradcheck.hpp"

namespace msr {

enum class GradcheckScope { op, layer, model };

GradcheckScope parse_scope(const std::string& s);
std::string to_string(GradcheckScope s);

/// Max relative error allowed by default: 1e-5 for ops and layers, 1e-4 for
/// the end-to-end model (which is checked on a sampled subset of entries).
double default_tolerance(GradcheckScope s);

struct GradcheckSuiteOptions {
    double tol = 0.0;  // 0 selects default_tolerance(scope)
    double corrupt = 0.0;
    std::uint64_t seed = 1;
};

/// Finite-difference checks of every differentiable op, every layer, or a
/// tiny end-to-end model (width 8, 2 groups of 1 block, 16 x 12 x 12 input).
std::vector<GradcheckReport> run_gradcheck_suite(GradcheckScope scope,
                                                 const GradcheckSuiteOptions& options = {});

}  // namespace msr
