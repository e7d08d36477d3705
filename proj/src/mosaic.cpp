#include "mosaic_sr/mosaic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace msr {

MosaicPattern MosaicPattern::bayer() {
    return {"bayer", 2, 2, 4, {0, 1, 2, 3}};
}

MosaicPattern MosaicPattern::ms4x4() {
    MosaicPattern p{"ms4x4", 4, 4, 14, {}};
    for (int i = 0; i < 14; ++i) p.cell_map.push_back(i);
    p.cell_map.push_back(kDead);
    p.cell_map.push_back(kDead);
    return p;
}

MosaicPattern MosaicPattern::from_name(const std::string& name, const nlohmann::json& cell_map) {
    MosaicPattern p;
    if (name == "bayer") p = bayer();
    else if (name == "ms4x4") p = ms4x4();
    else throw std::invalid_argument("unknown pattern '" + name + "' (expected bayer or ms4x4)");
    if (!cell_map.is_null()) {
        if (!cell_map.is_array() || static_cast<int>(cell_map.size()) != p.tile_h) {
            throw std::invalid_argument("cell_map must have " + std::to_string(p.tile_h) + " rows");
        }
        p.cell_map.clear();
        for (const auto& row : cell_map) {
            if (!row.is_array() || static_cast<int>(row.size()) != p.tile_w) {
                throw std::invalid_argument("cell_map rows must have " + std::to_string(p.tile_w) + " entries");
            }
            for (const auto& v : row) p.cell_map.push_back(v.is_null() ? kDead : v.get<int>());
        }
    }
    p.validate();
    return p;
}

void MosaicPattern::validate() const {
    if (tile_h < 1 || tile_w < 1 || static_cast<int>(cell_map.size()) != tile_h * tile_w) {
        throw std::invalid_argument("pattern " + name + ": cell_map does not cover the tile");
    }
    std::vector<int> seen(n_wavelengths, 0);
    for (int v : cell_map) {
        if (v == kDead) continue;
        if (v < 0 || v >= n_wavelengths) {
            throw std::invalid_argument("pattern " + name + ": wavelength index " + std::to_string(v) +
                                        " outside [0, " + std::to_string(n_wavelengths) + ")");
        }
        if (seen[v]++) throw std::invalid_argument("pattern " + name + ": wavelength " + std::to_string(v) + " repeated");
    }
    for (int i = 0; i < n_wavelengths; ++i) {
        if (!seen[i]) throw std::invalid_argument("pattern " + name + ": wavelength " + std::to_string(i) + " unused");
    }
}

nlohmann::json MosaicPattern::cell_map_json() const {
    auto rows = nlohmann::json::array();
    for (int a = 0; a < tile_h; ++a) {
        auto row = nlohmann::json::array();
        for (int b = 0; b < tile_w; ++b) {
            if (cell(a, b) == kDead) row.push_back(nullptr);
            else row.push_back(cell(a, b));
        }
        rows.push_back(row);
    }
    return rows;
}

Tensor<float> MosaicPattern::live_mask(int height, int width) const {
    std::vector<float> m(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) m[static_cast<std::size_t>(y) * width + x] = cell_at_pixel(y, x) == kDead ? 0.f : 1.f;
    return Tensor<float>(Shape{1, 1, height, width}, std::move(m));
}

std::string to_string(InputFormat f) { return f == InputFormat::mosaic ? "mosaic" : "zero_padded_cube"; }

InputFormat parse_input_format(const std::string& s) {
    if (s == "mosaic") return InputFormat::mosaic;
    if (s == "zero_padded_cube") return InputFormat::zero_padded_cube;
    throw std::invalid_argument("unknown input_format '" + s + "' (expected mosaic or zero_padded_cube)");
}

int input_channels(const MosaicPattern& p, InputFormat f) { return f == InputFormat::mosaic ? 1 : p.positions(); }

namespace {

void require_tiled(const Shape& s, const MosaicPattern& p, const char* op) {
    if (s.n != 1 || s.c != 1) throw DimensionError(std::string(op) + ": expected a 1 x 1 x H x W mosaic, got " + s.str());
    if (s.h % p.tile_h != 0 || s.w % p.tile_w != 0) {
        throw DimensionError(std::string(op) + ": mosaic " + s.str() + " is not a multiple of the " +
                             std::to_string(p.tile_h) + "x" + std::to_string(p.tile_w) + " tile");
    }
}

Tensor<float> crop(const Tensor<float>& x, int y0, int x0, int h, int w) {
    const Shape& s = x.shape();
    if (y0 < 0 || x0 < 0 || y0 + h > s.h || x0 + w > s.w) {
        throw DimensionError("crop of " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                             std::to_string(y0) + ", " + std::to_string(x0) + ") outside " + s.str());
    }
    std::vector<float> out(static_cast<std::size_t>(s.n) * s.c * h * w);
    auto in = x.data();
    std::size_t k = 0;
    for (int p = 0; p < s.n * s.c; ++p)
        for (int y = 0; y < h; ++y) {
            const float* row = in.data() + (static_cast<std::size_t>(p) * s.h + y0 + y) * s.w + x0;
            for (int i = 0; i < w; ++i) out[k++] = row[i];
        }
    return Tensor<float>(Shape{s.n, s.c, h, w}, std::move(out));
}

double cubic(double t) {
    constexpr double a = -0.75;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

struct Taps {
    std::vector<std::array<int, 4>> index;
    std::vector<std::array<double, 4>> weight;
};

Taps make_taps(int in, int out) {
    Taps taps;
    taps.index.resize(out);
    taps.weight.resize(out);
    const double ratio = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        const double src = (d + 0.5) * ratio - 0.5;
        const double base = std::floor(src);
        const double t = src - base;
        for (int k = 0; k < 4; ++k) {
            const int i = static_cast<int>(base) - 1 + k;
            taps.index[d][k] = std::clamp(i, 0, in - 1);
            taps.weight[d][k] = cubic(t - (k - 1));
        }
    }
    return taps;
}

}  // namespace

MosaicImage make_mosaic(Tensor<float> data, const MosaicPattern& pattern) {
    require_tiled(data.shape(), pattern, "make_mosaic");
    std::vector<float> v(data.data().begin(), data.data().end());
    const int h = data.shape().h, w = data.shape().w;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (pattern.cell_at_pixel(y, x) == kDead) v[static_cast<std::size_t>(y) * w + x] = 0.f;
    return {Tensor<float>(data.shape(), std::move(v)), pattern};
}

MosaicImage cube_to_mosaic(const ImageCube& cube, const MosaicPattern& p) {
    if (cube.kind != CubeKind::packed) throw std::invalid_argument("cube_to_mosaic: expected a packed cube");
    const Shape& s = cube.data.shape();
    if (s.n != 1 || s.c != p.n_wavelengths) {
        throw DimensionError("cube_to_mosaic: cube " + s.str() + " does not have " +
                             std::to_string(p.n_wavelengths) + " wavelengths");
    }
    const int H = s.h * p.tile_h, W = s.w * p.tile_w;
    std::vector<float> m(static_cast<std::size_t>(H) * W, 0.f);
    auto c = cube.data.data();
    for (int Y = 0; Y < H; ++Y)
        for (int X = 0; X < W; ++X) {
            const int k = p.cell_at_pixel(Y, X);
            if (k == kDead) continue;
            m[static_cast<std::size_t>(Y) * W + X] =
                c[(static_cast<std::size_t>(k) * s.h + Y / p.tile_h) * s.w + X / p.tile_w];
        }
    return {Tensor<float>(Shape{1, 1, H, W}, std::move(m)), p};
}

ImageCube mosaic_to_packed_cube(const MosaicImage& m) {
    const MosaicPattern& p = m.pattern;
    require_tiled(m.data.shape(), p, "mosaic_to_packed_cube");
    const int H = m.height(), W = m.width(), h = H / p.tile_h, w = W / p.tile_w;
    std::vector<float> c(static_cast<std::size_t>(p.n_wavelengths) * h * w);
    auto v = m.data.data();
    for (int Y = 0; Y < H; ++Y)
        for (int X = 0; X < W; ++X) {
            const int k = p.cell_at_pixel(Y, X);
            if (k == kDead) continue;
            c[(static_cast<std::size_t>(k) * h + Y / p.tile_h) * w + X / p.tile_w] = v[static_cast<std::size_t>(Y) * W + X];
        }
    return {Tensor<float>(Shape{1, p.n_wavelengths, h, w}, std::move(c)), CubeKind::packed};
}

ImageCube mosaic_to_zero_padded_cube(const MosaicImage& m) {
    const MosaicPattern& p = m.pattern;
    require_tiled(m.data.shape(), p, "mosaic_to_zero_padded_cube");
    const int H = m.height(), W = m.width(), K = p.positions();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    std::vector<float> c(K * plane, 0.f);
    auto v = m.data.data();
    for (int Y = 0; Y < H; ++Y)
        for (int X = 0; X < W; ++X) {
            if (p.cell_at_pixel(Y, X) == kDead) continue;
            const int k = (Y % p.tile_h) * p.tile_w + X % p.tile_w;
            const std::size_t i = static_cast<std::size_t>(Y) * W + X;
            c[k * plane + i] = v[i];
        }
    return {Tensor<float>(Shape{1, K, H, W}, std::move(c)), CubeKind::zero_padded};
}

MosaicImage zero_padded_cube_to_mosaic(const ImageCube& cube, const MosaicPattern& p) {
    if (cube.kind != CubeKind::zero_padded) {
        throw std::invalid_argument("zero_padded_cube_to_mosaic: expected a zero-padded cube");
    }
    const Shape& s = cube.data.shape();
    if (s.n != 1 || s.c != p.positions()) {
        throw DimensionError("zero_padded_cube_to_mosaic: cube " + s.str() + " does not have " +
                             std::to_string(p.positions()) + " channels");
    }
    const std::size_t plane = s.plane();
    std::vector<float> m(plane, 0.f);
    auto c = cube.data.data();
    for (int k = 0; k < s.c; ++k)
        for (std::size_t i = 0; i < plane; ++i) m[i] += c[k * plane + i];
    return make_mosaic(Tensor<float>(Shape{1, 1, s.h, s.w}, std::move(m)), p);
}

Tensor<float> to_network_input(const MosaicImage& m, InputFormat f) {
    return f == InputFormat::mosaic ? m.data : mosaic_to_zero_padded_cube(m).data;
}

Tensor<float> bicubic_resize(const Tensor<float>& x, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("bicubic_resize: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                                    " must be positive");
    }
    const Shape& s = x.shape();
    const Taps th = make_taps(s.h, out_h), tw = make_taps(s.w, out_w);
    std::vector<float> out(static_cast<std::size_t>(s.n) * s.c * out_h * out_w);
    std::vector<double> rows(static_cast<std::size_t>(s.h) * out_w);
    auto in = x.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* src = in.data() + static_cast<std::size_t>(p) * s.plane();
        for (int y = 0; y < s.h; ++y)
            for (int d = 0; d < out_w; ++d) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) acc += tw.weight[d][k] * src[static_cast<std::size_t>(y) * s.w + tw.index[d][k]];
                rows[static_cast<std::size_t>(y) * out_w + d] = acc;
            }
        float* dst = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
        for (int d = 0; d < out_h; ++d)
            for (int xo = 0; xo < out_w; ++xo) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) acc += th.weight[d][k] * rows[static_cast<std::size_t>(th.index[d][k]) * out_w + xo];
                dst[static_cast<std::size_t>(d) * out_w + xo] = static_cast<float>(acc);
            }
    }
    return Tensor<float>(Shape{s.n, s.c, out_h, out_w}, std::move(out));
}

MosaicImage center_crop_to_multiple(const MosaicImage& m, int multiple) {
    if (multiple < 1) throw std::invalid_argument("center_crop_to_multiple: multiple must be positive");
    const int h = m.height() / multiple * multiple, w = m.width() / multiple * multiple;
    if (h == 0 || w == 0) {
        throw DimensionError("image " + m.data.shape().str() + " is smaller than one " + std::to_string(multiple) +
                             "-pixel block");
    }
    if (h == m.height() && w == m.width()) return m;
    // Offsets snap to the tile so the crop keeps the mosaic phase.
    const int th = m.pattern.tile_h, tw = m.pattern.tile_w;
    const int y0 = (m.height() - h) / 2 / th * th, x0 = (m.width() - w) / 2 / tw * tw;
    return {crop(m.data, y0, x0, h, w), m.pattern};
}

MosaicPair generate_pair(const MosaicImage& hr, int scale) {
    const MosaicPattern& p = hr.pattern;
    if (scale < 1 || hr.height() % (scale * p.tile_h) != 0 || hr.width() % (scale * p.tile_w) != 0) {
        throw DimensionError("generate_pair: HR " + hr.data.shape().str() + " is not divisible by scale x tile (" +
                             std::to_string(scale * p.tile_h) + "x" + std::to_string(scale * p.tile_w) + ")");
    }
    auto cube = mosaic_to_packed_cube(hr);
    const Shape& s = cube.data.shape();
    ImageCube low{bicubic_resize(cube.data, s.h / scale, s.w / scale), CubeKind::packed};
    return {cube_to_mosaic(low, p), hr};
}

MosaicImage bicubic_upscale(const MosaicImage& lr, int scale) {
    auto cube = mosaic_to_packed_cube(lr);
    const Shape& s = cube.data.shape();
    ImageCube high{bicubic_resize(cube.data, s.h * scale, s.w * scale), CubeKind::packed};
    return cube_to_mosaic(high, lr.pattern);
}

// ---------------------------------------------------------------------------
// Augmentation

AugmentPlan plan_augment(int lr_h, int lr_w, int crop_lr, int tile, std::mt19937_64& rng) {
    if (lr_h < crop_lr || lr_w < crop_lr) {
        throw DimensionError("augment: image " + std::to_string(lr_h) + "x" + std::to_string(lr_w) +
                             " is smaller than the " + std::to_string(crop_lr) + " crop");
    }
    AugmentPlan plan;
    const auto ny = static_cast<std::uint64_t>((lr_h - crop_lr) / tile + 1);
    const auto nx = static_cast<std::uint64_t>((lr_w - crop_lr) / tile + 1);
    plan.lr_y = static_cast<int>(rng() % ny) * tile;
    plan.lr_x = static_cast<int>(rng() % nx) * tile;
    plan.rotation = static_cast<int>(rng() % 4);
    plan.flip = (rng() & 1) != 0;
    return plan;
}

Tensor<float> rotate_flip(const Tensor<float>& x, int rotation, bool flip) {
    rotation = ((rotation % 4) + 4) % 4;
    const Shape& s = x.shape();
    const bool swap = rotation % 2 == 1;
    const int oh = swap ? s.w : s.h, ow = swap ? s.h : s.w;
    std::vector<float> out(s.numel());
    auto in = x.data();
    for (int p = 0; p < s.n * s.c; ++p) {
        const float* src = in.data() + static_cast<std::size_t>(p) * s.plane();
        float* dst = out.data() + static_cast<std::size_t>(p) * s.plane();
        for (int y = 0; y < oh; ++y)
            for (int xo = 0; xo < ow; ++xo) {
                const int xf = flip ? ow - 1 - xo : xo;
                int sy = y, sx = xf;
                switch (rotation) {  // counter-clockwise quarter turns
                    case 1: sy = xf; sx = s.w - 1 - y; break;
                    case 2: sy = s.h - 1 - y; sx = s.w - 1 - xf; break;
                    case 3: sy = s.h - 1 - xf; sx = y; break;
                    default: break;
                }
                dst[static_cast<std::size_t>(y) * ow + xo] = src[static_cast<std::size_t>(sy) * s.w + sx];
            }
    }
    return Tensor<float>(Shape{s.n, s.c, oh, ow}, std::move(out));
}

MosaicPair apply_augment(const MosaicPair& pair, const AugmentPlan& plan, int crop_lr, int scale) {
    const MosaicPattern& p = pair.lr.pattern;
    if (crop_lr % p.tile_h != 0 || crop_lr % p.tile_w != 0 || plan.lr_y % p.tile_h != 0 || plan.lr_x % p.tile_w != 0) {
        throw std::invalid_argument("augment: crop size and origin must be tile multiples");
    }
    MosaicImage lr{crop(pair.lr.data, plan.lr_y, plan.lr_x, crop_lr, crop_lr), p};
    MosaicImage hr{crop(pair.hr.data, plan.lr_y * scale, plan.lr_x * scale, crop_lr * scale, crop_lr * scale), p};
    if (plan.rotation % 4 == 0 && !plan.flip) return {lr, hr};
    auto turn = [&](const MosaicImage& m) {
        ImageCube cube{rotate_flip(mosaic_to_packed_cube(m).data, plan.rotation, plan.flip), CubeKind::packed};
        return cube_to_mosaic(cube, p);
    };
    return {turn(lr), turn(hr)};
}

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ epoch) ^ index);
}

}  // namespace msr
