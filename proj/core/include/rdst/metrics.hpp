#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rdst/tensor.hpp"

namespace rdst {

/// PSNR reported for identical images.
constexpr double kPsnrCap = 100.0;

double mse(const Tensor& a, const Tensor& b);
/// 10 log10(peak² / MSE), kPsnrCap when MSE is 0.
double psnr(const Tensor& sr, const Tensor& hr, double peak = 1.0);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double peak = 1.0;
};

/// Gaussian-windowed SSIM averaged over every valid window position and
/// every plane of the leading axes. Throws ShapeError when the image is
/// smaller than the window.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opts = {});

/// Dice with eps = 1 after binarising both label maps by membership in
/// `region`. Labels outside [0, classes) throw.
double region_dice(const Tensor& pred, const Tensor& gt, const std::set<int>& region, int classes);

struct FpsResult {
    double fps = 0.0;         // iters * frames / total elapsed
    double median_fps = 0.0;  // median over iterations
    double mad_fps = 0.0;     // median absolute deviation of per-iteration FPS
    double elapsed_s = 0.0;
    int iters = 0;
    std::int64_t frames_per_iter = 0;
};

/// Times `run`, which processes `frames` images per call.
FpsResult measure_fps(const std::function<void()>& run, std::int64_t frames, int warmup, int iters);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population deviation
};
MeanStd mean_std(const std::vector<double>& values);

struct ImageScores {
    std::string id;
    double psnr = 0.0;
    bool psnr_infinite = false;
    double ssim = 0.0;
    std::map<std::string, double> dice;  // region name -> score
};

/// Per-image rows plus aggregates, one report per evaluated method.
struct EvalReport {
    std::string method;
    std::vector<ImageScores> images;
    std::int64_t params = 0;
    std::int64_t macs = 0;
    double fps = 0.0;
    std::optional<double> fid;  // external value, never computed here

    MeanStd psnr() const;
    MeanStd ssim() const;
    MeanStd dice(const std::string& region) const;
    std::vector<std::string> regions() const;

    /// metric, mean, std rows.
    std::string to_tsv() const;
    std::string to_json() const;
};

}  // namespace rdst
