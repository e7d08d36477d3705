#include "mosaic_sr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace msr {

GradcheckReport gradcheck(const std::string& name, const ScalarFn& f,
                          const std::vector<Tensor<double>>& inputs,
                          const GradcheckOptions& options) {
    for (const auto& t : inputs) {
        if (!t.is_leaf()) throw std::invalid_argument("gradcheck: inputs must be leaf tensors");
    }
    std::vector<Tensor<double>> xs = inputs;
    for (auto& t : xs) t.zero_grad();

    Tensor<double> y = f(xs);
    if (y.numel() != 1) {
        throw DimensionError("gradcheck: function must be scalar-valued, got " + y.shape().str());
    }
    y.backward();

    GradcheckReport report;
    report.name = name;
    std::mt19937_64 rng(options.seed);
    bool first_entry = true;

    for (auto& x : xs) {
        if (!x.requires_grad()) continue;
        std::vector<double> analytic(x.numel(), 0.0);
        if (!x.grad().empty()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
        if (options.corrupt != 0.0 && first_entry) analytic[0] *= 1.0 + options.corrupt;
        first_entry = false;

        std::vector<std::size_t> idx(x.numel());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (options.max_checks_per_input > 0 && idx.size() > options.max_checks_per_input) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(options.max_checks_per_input);
            std::sort(idx.begin(), idx.end());
            // The corrupted entry is always among those checked.
            if (options.corrupt != 0.0 && idx.front() != 0) idx.front() = 0;
        }

        NoGradGuard no_grad;
        auto values = x.mutable_data();
        for (std::size_t i : idx) {
            const double saved = values[i];
            values[i] = saved + options.eps;
            const double plus = f(xs).item();
            values[i] = saved - options.eps;
            const double minus = f(xs).item();
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * options.eps);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.abs_floor});
            const double err = std::abs(analytic[i] - numeric) / denom;
            if (!(err <= report.max_rel_error)) report.max_rel_error = err;  // NaN propagates
            ++report.checked;
        }
    }
    report.passed = report.checked > 0 && report.max_rel_error <= options.tol;
    return report;
}

GradcheckReport gradcheck(const std::string& name,
                          const std::function<Tensor<double>(const Tensor<double>&)>& f,
                          const Tensor<double>& x, const GradcheckOptions& options) {
    return gradcheck(
        name, [&f](const std::vector<Tensor<double>>& xs) { return f(xs[0]); }, {x}, options);
}

}  // namespace msr
