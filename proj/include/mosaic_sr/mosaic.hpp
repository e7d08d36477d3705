#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mosaic_sr/tensor.hpp"

namespace msr {

inline constexpr int kDead = -1;

/// Periodic filter-array tile: cell (a, b) samples wavelength cell_map[a][b]
/// or nothing (kDead).
struct MosaicPattern {
    std::string name;
    int tile_h = 2;
    int tile_w = 2;
    int n_wavelengths = 4;
    std::vector<int> cell_map;  // row-major, tile_h * tile_w entries

    static MosaicPattern bayer();
    /// 4x4 multispectral tile, wavelengths 0..13 row-major, cells (3,2) and
    /// (3,3) dead.
    static MosaicPattern ms4x4();
    /// "bayer" or "ms4x4", optionally with a replacement cell map.
    static MosaicPattern from_name(const std::string& name, const nlohmann::json& cell_map = nullptr);

    int cell(int a, int b) const { return cell_map[a * tile_w + b]; }
    int cell_at_pixel(int y, int x) const { return cell(y % tile_h, x % tile_w); }
    int positions() const { return tile_h * tile_w; }

    /// Throws std::invalid_argument when the map is not a valid tile.
    void validate() const;
    nlohmann::json cell_map_json() const;

    /// 1 x 1 x h x w tensor with 1 on live cells and 0 on dead ones.
    Tensor<float> live_mask(int height, int width) const;

    bool operator==(const MosaicPattern&) const = default;
};

/// Single-plane filter-array image, values in [0, 1].
struct MosaicImage {
    Tensor<float> data;  // 1 x 1 x H x W
    MosaicPattern pattern;

    int height() const { return data.shape().h; }
    int width() const { return data.shape().w; }
};

enum class CubeKind : std::uint8_t { packed = 0, zero_padded = 1 };

/// packed: one channel per wavelength at tile resolution.
/// zero_padded: one channel per tile position at full mosaic resolution.
struct ImageCube {
    Tensor<float> data;  // 1 x K x h x w
    CubeKind kind = CubeKind::packed;
};

enum class InputFormat { mosaic, zero_padded_cube };

std::string to_string(InputFormat f);
InputFormat parse_input_format(const std::string& s);
/// Network input channels for a pattern and input format.
int input_channels(const MosaicPattern& p, InputFormat f);

/// Wraps a 1 x 1 x H x W tensor, zeroing dead cells. Throws when the size is
/// not a tile multiple.
MosaicImage make_mosaic(Tensor<float> data, const MosaicPattern& pattern);

MosaicImage cube_to_mosaic(const ImageCube& cube, const MosaicPattern& pattern);
ImageCube mosaic_to_packed_cube(const MosaicImage& m);
ImageCube mosaic_to_zero_padded_cube(const MosaicImage& m);
/// Sum over channels of a zero-padded cube.
MosaicImage zero_padded_cube_to_mosaic(const ImageCube& cube, const MosaicPattern& pattern);

/// Model input for a mosaic in the requested format (N = 1).
Tensor<float> to_network_input(const MosaicImage& m, InputFormat f);

/// Separable bicubic interpolation (a = -0.75, 4 taps, half-pixel centres,
/// clamped borders) applied to every N x C plane.
Tensor<float> bicubic_resize(const Tensor<float>& x, int out_h, int out_w);

/// Largest centred crop whose sides are multiples of `multiple`.
MosaicImage center_crop_to_multiple(const MosaicImage& m, int multiple);

struct MosaicPair {
    MosaicImage lr;
    MosaicImage hr;
};

/// HR -> packed cube -> bicubic downscale per wavelength -> LR mosaic.
MosaicPair generate_pair(const MosaicImage& hr, int scale = 3);

/// Bicubic baseline: LR -> packed cube -> bicubic upscale -> HR mosaic.
MosaicImage bicubic_upscale(const MosaicImage& lr, int scale = 3);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentPlan {
    int lr_y = 0;  // tile-aligned LR crop origin
    int lr_x = 0;
    int rotation = 0;  // quarter turns counter-clockwise
    bool flip = false; // horizontal
};

/// Random tile-aligned crop origin, rotation (p = 1/4 each) and flip (p = 1/2).
AugmentPlan plan_augment(int lr_h, int lr_w, int crop_lr, int tile, std::mt19937_64& rng);

/// Crops LR (crop_lr square) and the matching HR region (scale * crop_lr),
/// then rotates and flips both in packed-cube space so the tile phase of
/// the outputs matches the pattern.
MosaicPair apply_augment(const MosaicPair& pair, const AugmentPlan& plan, int crop_lr, int scale);

/// Rotation/flip of every plane of a tensor.
Tensor<float> rotate_flip(const Tensor<float>& x, int rotation, bool flip);

/// Seed for sample `index` of `epoch`, independent of processing order.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index);

// ---------------------------------------------------------------------------
// Files

/// 16-bit binary PGM (P5, maxval 65535, big-endian). Loading divides by 65535.
MosaicImage load_mosaic_pgm(const std::string& path, const MosaicPattern& pattern);
/// Saves round(v * 65535) with halves rounded up, clamped to [0, 65535].
void save_mosaic_pgm(const MosaicImage& m, const std::string& path);

/// "MSCB" container: magic, u16 version, u8 kind, u32 K, H, W, then K*H*W
/// little-endian float32 values, channel-major.
ImageCube load_cube(const std::string& path);
void save_cube(const ImageCube& cube, const std::string& path);

struct PairEntry {
    std::string lr;  // relative to the manifest directory
    std::string hr;
    std::string split = "train";
};

struct DatasetManifest {
    MosaicPattern pattern = MosaicPattern::ms4x4();
    InputFormat input_format = InputFormat::zero_padded_cube;
    int scale = 3;
    std::uint64_t seed = 0;
    std::vector<PairEntry> pairs;
    std::string base_dir;  // directory of the manifest file; not serialised

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j, const std::string& base_dir);

    std::vector<PairEntry> split(const std::string& name) const;
    std::string resolve(const std::string& relative) const;
};

DatasetManifest load_manifest(const std::string& path);
void save_manifest(const DatasetManifest& m, const std::string& path);

/// Loads every pair of a split and checks LR/HR dimensions against the scale.
std::vector<MosaicPair> load_pairs(const DatasetManifest& m, const std::string& split);

// ---------------------------------------------------------------------------
// Synthetic data

/// Renders one HR mosaic of a smooth multi-wavelength scene: Gaussian
/// blobs, gradients, soft edges and gratings with per-wavelength weights,
/// each pixel sampled at its own wavelength. Values lie in [0, 1].
MosaicImage render_scene(int height, int width, const MosaicPattern& pattern, std::uint64_t seed);

struct SynthOptions {
    int n = 8;
    int height = 180;
    int width = 180;
    int n_val = 0;
    int n_test = 0;
    std::uint64_t seed = 0;
    InputFormat input_format = InputFormat::zero_padded_cube;
    int scale = 3;
};

/// Writes hr_XXXX.pgm / lr_XXXX.pgm pairs and manifest.json into `dir`.
/// The HR image is quantised to 16 bits before the LR image is derived, so
/// the files on disk are consistent with generate_pair.
DatasetManifest synthesize_dataset(const SynthOptions& options, const MosaicPattern& pattern,
                                   const std::string& dir);

/// Centre-crops each HR mosaic to a multiple of scale x tile, derives its LR
/// partner and writes the pairs and manifest.json into `dir`. The last
/// n_val + n_test files go to the val and test splits; n and the dims in
/// `options` are ignored.
DatasetManifest dataset_from_hr(const std::vector<std::string>& hr_paths, const SynthOptions& options,
                                const MosaicPattern& pattern, const std::string& dir);

}  // namespace msr
