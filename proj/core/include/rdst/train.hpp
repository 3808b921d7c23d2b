#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdst/config.hpp"
#include "rdst/data.hpp"
#include "rdst/losses.hpp"
#include "rdst/metrics.hpp"
#include "rdst/optim.hpp"
#include "rdst/rdst_model.hpp"
#include "rdst/serialize.hpp"
#include "rdst/unet.hpp"

namespace rdst::train {

/// Raised when a run cannot continue, e.g. a non-finite loss.
class TrainingError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct TrainPlan {
    std::int64_t stage1_steps = 2000;
    double stage1_lr = 2e-4;
    std::int64_t stage2_steps = 500;
    double stage2_lr = 1e-4;
    std::vector<double> milestones{0.5, 0.75, 0.875};  // fractions of stage 2
    std::int64_t batch = 32;
    std::int64_t patch = 96;  // HR side
    int scale = 4;
    double sigma = 0.01;
    double val_every = 0.05;  // fraction of the stage
    int val_images = 8;
    std::int64_t ckpt_every = 0;
    LossSpec loss;
    std::uint64_t seed = 1;
    DType dtype = DType::kF32;

    void validate() const;
    static TrainPlan from_config(const Config& cfg);

    /// Stage-2 rate used by update `step` (0-based): halved once per
    /// milestone at or before it.
    double stage2_lr_at(std::int64_t step) const;
    std::vector<std::int64_t> milestone_steps() const;
    /// Steps between validations, at least 1.
    std::int64_t val_interval(std::int64_t stage_steps) const;
};

struct StepRecord {
    std::int64_t step = 0;
    double lr = 0.0;
    double total = 0.0;
    double l1 = 0.0;
    double perceptual = 0.0;
};

struct ValRecord {
    std::int64_t step = 0;
    double psnr = 0.0;
    double dice = -1.0;  // whole-region dice under the frozen U-Net, -1 without one
};

/// Append-only record of one stage. Wall-clock time goes to a separate
/// timing file so that the log itself is reproducible byte for byte.
struct RunLog {
    std::string config;
    std::vector<StepRecord> steps;
    std::vector<ValRecord> validations;

    std::string steps_tsv() const;
    std::string validations_tsv() const;
    static RunLog read(const std::filesystem::path& dir);
    void write(const std::filesystem::path& dir) const;
};

struct StageResult {
    RunLog log;
    std::int64_t best_step = -1;
    double best_psnr = 0.0;
    std::filesystem::path last;
    std::filesystem::path best;
};

/// Inputs shared by both stages.
struct StageData {
    const std::vector<data::SrImage>* train = nullptr;
    const std::vector<data::SrImage>* val = nullptr;
};

/// Stage 1: L1 only at a constant rate. Writes last.ckpt, best.ckpt,
/// steps.tsv, val.tsv, config.txt and timing.tsv under `out`. With
/// `resume`, continues from a last.ckpt written by an earlier run.
StageResult train_stage1(const TrainPlan& plan, const StageData& data, RdstModel& model,
                         const std::filesystem::path& out, const Config& snapshot = Config::defaults(),
                         bool resume = false);

/// Stage 2: α L1 + λ L_U with milestone halving. `unet` must be frozen and
/// present exactly when the loss variant needs it. The model arrives holding
/// stage-1 weights.
StageResult finetune_stage2(const TrainPlan& plan, const StageData& data, RdstModel& model, const UNet* unet,
                            const std::filesystem::path& out, const Config& snapshot = Config::defaults(),
                            bool resume = false);

struct SegPlan {
    std::int64_t steps = 2000;
    double lr = 1e-3;
    std::int64_t batch = 8;
    std::uint64_t seed = 1;
    DType dtype = DType::kF32;

    void validate() const;
    static SegPlan from_config(const Config& cfg);
};

/// Dice-loss U-Net training on whole HR images with labels. Writes
/// unet.ckpt and steps.tsv under `out` and returns the per-step losses.
std::vector<double> train_unet(const SegPlan& plan, const std::vector<data::SrImage>& images, UNet& unet,
                               const std::filesystem::path& out);

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint model_checkpoint(const RdstModel& model);
/// Builds an RDST from the manifest and loads its weights. Throws
/// FormatError on a kind or shape mismatch.
RdstModel load_model(const Checkpoint& ckpt, DType dtype = DType::kF32);
RdstModel load_model(const std::filesystem::path& path, DType dtype = DType::kF32);

Checkpoint unet_checkpoint(const UNet& unet);
UNet load_unet(const std::filesystem::path& path, DType dtype = DType::kF32);

// ---------------------------------------------------------------------------
// Evaluation

/// Named label sets scored by region dice: "whole" (every foreground class)
/// and "class<k>" for each foreground class.
std::map<std::string, std::set<int>> default_regions(int classes);

struct EvalOptions {
    int scale = 4;
    double sigma = 0.01;
    std::uint64_t seed = 1;
    int grids = 0;
    std::filesystem::path grid_dir;
    SsimOptions ssim;
};

/// LR input of image `index` under the evaluation seed; identical for every
/// method so that rows are comparable.
Tensor eval_input(const data::SrImage& image, const EvalOptions& opts);

/// Scores `model` on every image. With a U-Net, adds region dice of the
/// U-Net applied to SR against the ground-truth labels. Grids
/// [LR | bicubic | SR | HR | overlay] go to grid_dir for the first
/// `grids` images; overlay pixels the U-Net gets wrong are red.
EvalReport evaluate(const SrModel& model, const std::vector<data::SrImage>& images, const UNet* unet,
                    const EvalOptions& opts);

/// The HR images scored as their own reconstruction: PSNR cap, SSIM 1 and
/// the U-Net-on-HR dice ceiling.
EvalReport evaluate_reference(const std::vector<data::SrImage>& images, const UNet* unet, const EvalOptions& opts);

/// Overlay palette: grey image, prediction errors in pure red.
Tensor error_overlay(const Tensor& image, const Tensor& pred, const Tensor& truth);

}  // namespace rdst::train
