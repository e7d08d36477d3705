#pragma once

#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosaic_sr/mosaic.hpp"
#include "mosaic_sr/tensor.hpp"

namespace msr {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over elements where mask is nonzero (all when the
/// mask is undefined). Returns +inf when MSE is 0.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0, const Tensor<T>& mask = {});

/// Mean SSIM over every position where a window x window uniform window fits
/// (population moments, C1 = (0.01 peak)^2, C2 = (0.03 peak)^2). Box sums
/// come from integral images.
double ssim_plane(std::span<const double> a, std::span<const double> b, int height, int width, int window = 7,
                  double peak = 1.0);

namespace reference {
/// Direct sliding-window SSIM, kept as the test oracle.
double ssim_plane(std::span<const double> a, std::span<const double> b, int height, int width, int window = 7,
                  double peak = 1.0);
}  // namespace reference

struct ImageMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
};

/// PSNR over the live cells of the mosaic; SSIM averaged over the
/// per-wavelength subsampled planes.
ImageMetrics evaluate_mosaic(const MosaicImage& pred, const MosaicImage& gt);

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;  // population; NaN when undefined (infinite samples)
};

MetricSummary summarize(const std::vector<double>& values);

struct EvalReport {
    struct Entry {
        std::string name;
        ImageMetrics metrics;
    };
    std::string method;
    std::vector<Entry> per_image;

    MetricSummary psnr() const;
    MetricSummary ssim() const;

    /// Infinite values are written as the string "+inf", undefined ones as null.
    nlohmann::json to_json() const;
    std::string to_csv() const;
};

}  // namespace msr
