#include "mosaic_sr/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace msr {

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak, const Tensor<T>& mask) {
    if (a.shape() != b.shape()) throw shape_mismatch("psnr", a.shape(), b.shape());
    if (mask.defined() && mask.shape() != a.shape()) throw shape_mismatch("psnr mask", a.shape(), mask.shape());
    auto x = a.data(), y = b.data();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (mask.defined() && mask.data()[i] == T(0)) continue;
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        sum += d * d;
        ++count;
    }
    if (count == 0) throw std::invalid_argument("psnr: mask selects no elements");
    const double mse = sum / static_cast<double>(count);
    if (mse == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(peak * peak / mse);
}

template double psnr(const Tensor<float>&, const Tensor<float>&, double, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&, double, const Tensor<double>&);

namespace {

void check_plane(std::span<const double> a, std::span<const double> b, int h, int w, int window) {
    if (window < 1) throw std::invalid_argument("ssim: window must be positive");
    if (h < window || w < window) {
        throw DimensionError("ssim: plane " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                             std::to_string(window) + "x" + std::to_string(window) + " window");
    }
    const std::size_t n = static_cast<std::size_t>(h) * w;
    if (a.size() != n || b.size() != n) throw DimensionError("ssim: plane buffers do not match their dimensions");
}

double ssim_from_moments(double mu_a, double mu_b, double var_a, double var_b, double cov, double c1, double c2) {
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
}

}  // namespace

double ssim_plane(std::span<const double> a, std::span<const double> b, int h, int w, int window, double peak) {
    check_plane(a, b, h, w, window);
    const int W1 = w + 1;
    std::vector<double> ia((h + 1) * W1, 0.0), ib(ia.size(), 0.0), iaa(ia.size(), 0.0), ibb(ia.size(), 0.0),
        iab(ia.size(), 0.0);
    for (int y = 0; y < h; ++y) {
        double ra = 0, rb = 0, raa = 0, rbb = 0, rab = 0;
        for (int x = 0; x < w; ++x) {
            const double va = a[static_cast<std::size_t>(y) * w + x], vb = b[static_cast<std::size_t>(y) * w + x];
            ra += va;
            rb += vb;
            raa += va * va;
            rbb += vb * vb;
            rab += va * vb;
            const int up = y * W1 + x + 1, here = (y + 1) * W1 + x + 1;
            ia[here] = ia[up] + ra;
            ib[here] = ib[up] + rb;
            iaa[here] = iaa[up] + raa;
            ibb[here] = ibb[up] + rbb;
            iab[here] = iab[up] + rab;
        }
    }
    auto box = [&](const std::vector<double>& I, int y, int x) {
        return I[(y + window) * W1 + x + window] - I[y * W1 + x + window] - I[(y + window) * W1 + x] + I[y * W1 + x];
    };
    const double n = static_cast<double>(window) * window;
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    double total = 0.0;
    for (int y = 0; y + window <= h; ++y)
        for (int x = 0; x + window <= w; ++x) {
            const double mu_a = box(ia, y, x) / n, mu_b = box(ib, y, x) / n;
            const double var_a = box(iaa, y, x) / n - mu_a * mu_a;
            const double var_b = box(ibb, y, x) / n - mu_b * mu_b;
            const double cov = box(iab, y, x) / n - mu_a * mu_b;
            total += ssim_from_moments(mu_a, mu_b, var_a, var_b, cov, c1, c2);
        }
    return total / (static_cast<double>(h - window + 1) * (w - window + 1));
}

double reference::ssim_plane(std::span<const double> a, std::span<const double> b, int h, int w, int window,
                             double peak) {
    check_plane(a, b, h, w, window);
    const double n = static_cast<double>(window) * window;
    const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
    double total = 0.0;
    for (int y = 0; y + window <= h; ++y)
        for (int x = 0; x + window <= w; ++x) {
            double mu_a = 0, mu_b = 0;
            for (int dy = 0; dy < window; ++dy)
                for (int dx = 0; dx < window; ++dx) {
                    mu_a += a[static_cast<std::size_t>(y + dy) * w + x + dx];
                    mu_b += b[static_cast<std::size_t>(y + dy) * w + x + dx];
                }
            mu_a /= n;
            mu_b /= n;
            double var_a = 0, var_b = 0, cov = 0;
            for (int dy = 0; dy < window; ++dy)
                for (int dx = 0; dx < window; ++dx) {
                    const double da = a[static_cast<std::size_t>(y + dy) * w + x + dx] - mu_a;
                    const double db = b[static_cast<std::size_t>(y + dy) * w + x + dx] - mu_b;
                    var_a += da * da;
                    var_b += db * db;
                    cov += da * db;
                }
            total += ssim_from_moments(mu_a, mu_b, var_a / n, var_b / n, cov / n, c1, c2);
        }
    return total / (static_cast<double>(h - window + 1) * (w - window + 1));
}

ImageMetrics evaluate_mosaic(const MosaicImage& pred, const MosaicImage& gt) {
    if (!(pred.pattern == gt.pattern)) {
        throw std::invalid_argument("evaluate_mosaic: pattern " + pred.pattern.name + " vs " + gt.pattern.name);
    }
    if (pred.data.shape() != gt.data.shape()) throw shape_mismatch("evaluate_mosaic", pred.data.shape(), gt.data.shape());
    const MosaicPattern& p = gt.pattern;
    ImageMetrics m;
    m.psnr = psnr(pred.data, gt.data, 1.0, p.live_mask(gt.height(), gt.width()));

    const int h = gt.height() / p.tile_h, w = gt.width() / p.tile_w;
    std::vector<double> pa(static_cast<std::size_t>(h) * w), pb(pa.size());
    auto x = pred.data.data(), y = gt.data.data();
    double total = 0.0;
    int planes = 0;
    for (int ty = 0; ty < p.tile_h; ++ty)
        for (int tx = 0; tx < p.tile_w; ++tx) {
            if (p.cell(ty, tx) == kDead) continue;
            for (int r = 0; r < h; ++r)
                for (int c = 0; c < w; ++c) {
                    const std::size_t src = static_cast<std::size_t>(r * p.tile_h + ty) * gt.width() + c * p.tile_w + tx;
                    pa[static_cast<std::size_t>(r) * w + c] = x[src];
                    pb[static_cast<std::size_t>(r) * w + c] = y[src];
                }
            total += ssim_plane(pa, pb, h, w);
            ++planes;
        }
    m.ssim = total / planes;
    return m;
}

MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    if (values.empty()) return {std::nan(""), std::nan("")};
    for (double v : values) {
        if (std::isinf(v)) return {v, std::nan("")};
        s.mean += v;
    }
    s.mean /= static_cast<double>(values.size());
    for (double v : values) s.std += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(values.size()));
    return s;
}

MetricSummary EvalReport::psnr() const {
    std::vector<double> v;
    for (const auto& e : per_image) v.push_back(e.metrics.psnr);
    return summarize(v);
}

MetricSummary EvalReport::ssim() const {
    std::vector<double> v;
    for (const auto& e : per_image) v.push_back(e.metrics.ssim);
    return summarize(v);
}

namespace {

nlohmann::json number(double v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
    return v;
}

std::string csv_number(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
    auto images = nlohmann::json::array();
    for (const auto& e : per_image) {
        images.push_back({{"name", e.name}, {"psnr", number(e.metrics.psnr)}, {"ssim", number(e.metrics.ssim)}});
    }
    const auto p = psnr(), s = ssim();
    return {{"method", method},
            {"count", per_image.size()},
            {"per_image", images},
            {"psnr", {{"mean", number(p.mean)}, {"std", number(p.std)}}},
            {"ssim", {{"mean", number(s.mean)}, {"std", number(s.std)}}}};
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "name,psnr,ssim\n";
    for (const auto& e : per_image) out << e.name << ',' << csv_number(e.metrics.psnr) << ',' << csv_number(e.metrics.ssim) << '\n';
    const auto p = psnr(), s = ssim();
    out << "mean," << csv_number(p.mean) << ',' << csv_number(s.mean) << '\n';
    out << "std," << csv_number(p.std) << ',' << csv_number(s.std) << '\n';
    return out.str();
}

}  // namespace msr
