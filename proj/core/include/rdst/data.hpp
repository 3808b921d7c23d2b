#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "rdst/tensor.hpp"

namespace rdst::data {

/// Catmull-Rom cubic (a = -0.5) interpolation kernel.
double cubic_kernel(double x, double a = -0.5);

/// Anti-aliased bicubic downsampling by an integer factor over the last two
/// axes. Kernel width scales with s; weights are renormalised per output and
/// borders are mirrored with edge repetition.
Tensor bicubic_downsample(const Tensor& x, int s);
/// Bicubic interpolation upwards by an integer factor over the last two axes,
/// edges replicated.
Tensor bicubic_upsample(const Tensor& x, int s);

/// clamp(bicubic_downsample(hr, s) + N(0, sigma^2), 0, 1). Throws ShapeError
/// when the spatial extents are not multiples of s.
Tensor degrade(const Tensor& hr, int s, double sigma, std::mt19937_64& rng);
/// The same without the final clamp, for noise statistics.
Tensor degrade_unclamped(const Tensor& hr, int s, double sigma, std::mt19937_64& rng);

/// HR image with its label map. hr is [C, H, W] in [0, 1]; label is [H, W]
/// holding class indices as floats, or undefined.
struct SrImage {
    Tensor hr;
    Tensor label;
    std::string id;
};

/// Paired sample: lr is [C, H/s, W/s].
struct SrSample {
    Tensor hr;
    Tensor lr;
    Tensor label;
    std::string id;
};

SrSample make_sample(const SrImage& image, int s, double sigma, std::mt19937_64& rng);

struct PatchOffset {
    std::int64_t hr_y = 0, hr_x = 0;
    std::int64_t lr_y = 0, lr_x = 0;
};

/// Every aligned HR offset for a square patch (offsets divisible by s).
std::vector<PatchOffset> aligned_offsets(std::int64_t h, std::int64_t w, std::int64_t hr_patch, int s);

struct Patch {
    Tensor lr;     // [C, p/s, p/s]
    Tensor hr;     // [C, p, p]
    Tensor label;  // [p, p] or undefined
    PatchOffset offset;
};

Patch crop_patch(const SrSample& sample, const PatchOffset& offset, std::int64_t hr_patch, int s);
Patch sample_patch(const SrSample& sample, std::int64_t hr_patch, int s, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Synthetic phantoms: a body ellipse with nested inner structures.

struct PhantomSpec {
    std::int64_t size = 96;
    int classes = 4;  // background included
    int min_inner = 2, max_inner = 4;    // class-2 structures
    int min_detail = 3, max_detail = 7;  // class-3 and above, small blobs
    double texture = 0.03;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Deterministic in (spec.seed, index).
SrImage generate_phantom(const PhantomSpec& spec, std::int64_t index);

struct DatasetInfo {
    std::int64_t count = 0;
    std::int64_t channels = 1, height = 0, width = 0;
    int classes = 0;
};

/// Writes <root>/<split>/{hr,lbl}/NNNN.rdt and <root>/<split>/manifest.txt
/// for the train and test splits.
void generate_dataset(const PhantomSpec& spec, std::int64_t count, double test_fraction,
                      const std::filesystem::path& root);

DatasetInfo read_manifest(const std::filesystem::path& split_dir);
void write_manifest(const std::filesystem::path& split_dir, const DatasetInfo& info);
std::vector<SrImage> load_split(const std::filesystem::path& split_dir);

/// 8- or 16-bit grayscale (RGB is converted to luma); values scaled to [0, 1].
/// Returns [1, H, W].
Tensor read_png(const std::filesystem::path& path);
/// [1, H, W] or [3, H, W] in [0, 1], written as 8-bit.
void write_png(const std::filesystem::path& path, const Tensor& image);

}  // namespace rdst::data
