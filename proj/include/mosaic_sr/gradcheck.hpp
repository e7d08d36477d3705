#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mosaic_sr/tensor.hpp"

namespace msr {

struct GradcheckOptions {
    double eps = 1e-6;
    double tol = 1e-5;
    // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor);
    // keeps near-zero gradient entries from amplifying round-off.
    double abs_floor = 1e-3;
    // 0 checks every element; otherwise a seeded random subset per input.
    std::size_t max_checks_per_input = 0;
    std::uint64_t seed = 0;
    // Negative control: scales the first analytic entry by (1 + corrupt).
    double corrupt = 0.0;
};

struct GradcheckReport {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    bool passed = false;
};

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of a scalar function against central
/// differences for every input that requires grad.
GradcheckReport gradcheck(const std::string& name, const ScalarFn& f,
                          const std::vector<Tensor<double>>& inputs,
                          const GradcheckOptions& options = {});

GradcheckReport gradcheck(const std::string& name,
                          const std::function<Tensor<double>(const Tensor<double>&)>& f,
                          const Tensor<double>& x, const GradcheckOptions& options = {});

}  // namespace msr
