#include "rdst/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "rdst/nn.hpp"
#include "rdst/ops.hpp"
#include "rdst/serialize.hpp"
#include "rdst/tape.hpp"

namespace rdst::train {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

DType parse_dtype(const std::string& s) {
    if (s == "f32") return DType::kF32;
    if (s == "f64") return DType::kF64;
    throw ConfigError("train.dtype must be f32 or f64, got '" + s + "'");
}

DType params_dtype(const ParamStore& p, DType fallback) {
    return p.entries().empty() ? fallback : p.entries().front().second.dtype();
}

Tensor batch_of(const std::vector<Tensor>& items) {
    std::vector<Tensor> rows;
    rows.reserve(items.size());
    for (const auto& t : items) {
        Shape s{1};
        for (auto d : t.shape()) s.push_back(d);
        rows.push_back(reshape(t, s));
    }
    return rows.size() == 1 ? rows.front() : concat(rows, 0);
}

std::vector<Tensor> gradients(const Tape& tape, const ParamStore& params) {
    std::vector<Tensor> g;
    g.reserve(params.size());
    for (const auto& [name, t] : params.entries()) {
        Tensor gt = tape.grad(t);
        if (!gt.defined()) throw TrainingError("parameter " + name + " received no gradient");
        g.push_back(gt);
    }
    return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plans

void TrainPlan::validate() const {
    if (stage1_steps < 0 || stage2_steps < 0) throw ConfigError("stage step counts must be non-negative");
    if (!(stage1_lr > 0) || !(stage2_lr > 0)) throw ConfigError("learning rates must be positive");
    if (batch < 1) throw ConfigError("train.batch must be at least 1");
    if (scale < 1) throw ConfigError("scale must be positive");
    if (patch < scale || patch % scale != 0) {
        throw ConfigError("train.patch " + std::to_string(patch) + " must be a positive multiple of the scale");
    }
    if (sigma < 0) throw ConfigError("data.sigma must be non-negative");
    if (!(val_every > 0) || val_every > 1) throw ConfigError("train.val_every must lie in (0, 1]");
    if (val_images < 0) throw ConfigError("train.val_images must be non-negative");
    if (ckpt_every < 0) throw ConfigError("train.ckpt_every must be non-negative");
    double prev = 0.0;
    for (double m : milestones) {
        if (!(m > prev) || m >= 1.0) {
            throw ConfigError("stage-2 milestones must be strictly increasing fractions in (0, 1)");
        }
        prev = m;
    }
}

TrainPlan TrainPlan::from_config(const Config& given) {
    Config cfg = Config::defaults();
    cfg.merge(given);
    TrainPlan p;
    p.stage1_steps = cfg.integer("train.stage1.steps");
    p.stage1_lr = cfg.real("train.stage1.lr");
    p.stage2_steps = cfg.integer("train.stage2.steps");
    p.stage2_lr = cfg.real("train.stage2.lr");
    p.milestones = cfg.reals("train.stage2.milestones");
    p.batch = cfg.integer("train.batch");
    p.patch = cfg.integer("train.patch");
    p.scale = static_cast<int>(RdstConfig::from_config(cfg).scale);
    p.sigma = cfg.real("data.sigma");
    p.val_every = cfg.real("train.val_every");
    p.val_images = static_cast<int>(cfg.integer("train.val_images"));
    p.ckpt_every = cfg.integer("train.ckpt_every");
    p.loss = LossSpec::parse(cfg.str("loss.variant"), cfg.real("loss.alpha"), cfg.real("loss.lambda"));
    p.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    p.dtype = parse_dtype(cfg.str("train.dtype"));
    p.validate();
    return p;
}

std::vector<std::int64_t> TrainPlan::milestone_steps() const {
    std::vector<std::int64_t> out;
    for (double m : milestones) out.push_back(static_cast<std::int64_t>(std::llround(m * static_cast<double>(stage2_steps))));
    return out;
}

double TrainPlan::stage2_lr_at(std::int64_t step) const {
    double lr = stage2_lr;
    for (auto s : milestone_steps()) {
        if (step >= s) lr *= 0.5;
    }
    return lr;
}

std::int64_t TrainPlan::val_interval(std::int64_t stage_steps) const {
    return std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(val_every * static_cast<double>(stage_steps))));
}

void SegPlan::validate() const {
    if (steps < 0) throw ConfigError("seg.steps must be non-negative");
    if (!(lr > 0)) throw ConfigError("seg.lr must be positive");
    if (batch < 1) throw ConfigError("seg.batch must be at least 1");
}

SegPlan SegPlan::from_config(const Config& given) {
    Config cfg = Config::defaults();
    cfg.merge(given);
    SegPlan p;
    p.steps = cfg.integer("seg.steps");
    p.lr = cfg.real("seg.lr");
    p.batch = cfg.integer("seg.batch");
    p.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
    p.dtype = parse_dtype(cfg.str("train.dtype"));
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Run log

std::string RunLog::steps_tsv() const {
    std::ostringstream os;
    os.precision(9);
    os << "step\tlr\ttotal\tl1\tperceptual\n";
    for (const auto& r : steps) os << r.step << '\t' << r.lr << '\t' << r.total << '\t' << r.l1 << '\t' << r.perceptual << '\n';
    return os.str();
}

std::string RunLog::validations_tsv() const {
    std::ostringstream os;
    os.precision(9);
    os << "step\tpsnr_db\tdice_whole\n";
    for (const auto& r : validations) os << r.step << '\t' << r.psnr << '\t' << r.dice << '\n';
    return os.str();
}

void RunLog::write(const fs::path& dir) const {
    fs::create_directories(dir);
    write_file_atomic(dir / "config.txt", config);
    write_file_atomic(dir / "steps.tsv", steps_tsv());
    write_file_atomic(dir / "val.tsv", validations_tsv());
}

RunLog RunLog::read(const fs::path& dir) {
    RunLog log;
    if (fs::exists(dir / "config.txt")) log.config = read_file(dir / "config.txt");
    auto rows = [](const fs::path& p) {
        std::vector<std::vector<std::string>> out;
        if (!fs::exists(p)) return out;
        std::istringstream is(read_file(p));
        std::string line;
        std::getline(is, line);  // header
        while (std::getline(is, line)) {
            std::vector<std::string> cells;
            std::istringstream ls(line);
            std::string c;
            while (std::getline(ls, c, '\t')) cells.push_back(c);
            out.push_back(cells);
        }
        return out;
    };
    for (const auto& c : rows(dir / "steps.tsv")) {
        if (c.size() != 5) throw FormatError("malformed steps.tsv row in " + dir.string());
        log.steps.push_back({std::stoll(c[0]), std::stod(c[1]), std::stod(c[2]), std::stod(c[3]), std::stod(c[4])});
    }
    for (const auto& c : rows(dir / "val.tsv")) {
        if (c.size() != 3) throw FormatError("malformed val.tsv row in " + dir.string());
        log.validations.push_back({std::stoll(c[0]), std::stod(c[1]), std::stod(c[2])});
    }
    return log;
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint model_checkpoint(const RdstModel& model) {
    Checkpoint c;
    c.meta = model.config().to_meta();
    c.meta["kind"] = "rdst";
    c.put_params("param.", model.params());
    return c;
}

RdstModel load_model(const Checkpoint& ckpt, DType dtype) {
    auto it = ckpt.meta.find("kind");
    if (it == ckpt.meta.end() || it->second != "rdst") throw FormatError("checkpoint does not hold an RDST model");
    RdstModel model(RdstConfig::from_meta(ckpt.meta), 0, dtype);
    ckpt.take_params("param.", model.params());
    return model;
}

RdstModel load_model(const fs::path& path, DType dtype) { return load_model(Checkpoint::load(path), dtype); }

Checkpoint unet_checkpoint(const UNet& unet) {
    Checkpoint c;
    c.meta = unet.config().to_meta();
    c.meta["kind"] = "unet";
    c.put_params("param.", unet.params());
    return c;
}

UNet load_unet(const fs::path& path, DType dtype) {
    const auto ckpt = Checkpoint::load(path);
    auto it = ckpt.meta.find("kind");
    if (it == ckpt.meta.end() || it->second != "unet") throw FormatError(path.string() + " does not hold a U-Net");
    UNet unet(UNetConfig::from_meta(ckpt.meta), 0, dtype);
    ckpt.take_params("param.", unet.params());
    unet.set_trainable(false);
    return unet;
}

// ---------------------------------------------------------------------------
// Stage loop

namespace {

struct StageSetup {
    std::string name;  // "stage1" or "stage2"
    std::int64_t steps = 0;
    std::function<double(std::int64_t)> lr_at;
    LossSpec loss;
    const UNet* unet = nullptr;
};

struct TrainState {
    std::int64_t step = 0;  // completed updates
    AdamState adam;
    double best_psnr = -1.0;
    std::int64_t best_step = -1;
};

Checkpoint state_checkpoint(const RdstModel& model, const TrainState& st, const StageSetup& setup, const TrainPlan& plan) {
    Checkpoint c = model_checkpoint(model);
    c.meta["stage"] = setup.name;
    c.meta["step"] = std::to_string(st.step);
    c.meta["seed"] = std::to_string(plan.seed);
    c.meta["loss.variant"] = setup.loss.variant();
    c.meta["loss.alpha"] = fmt(setup.loss.alpha);
    c.meta["loss.lambda"] = fmt(setup.loss.lambda);
    c.meta["best.psnr"] = fmt(st.best_psnr);
    c.meta["best.step"] = std::to_string(st.best_step);
    c.meta["adam.step"] = std::to_string(st.adam.step);
    const auto& e = model.params().entries();
    for (std::size_t i = 0; i < st.adam.m.size(); ++i) {
        c.add("adam.m." + e[i].first, st.adam.m[i]);
        c.add("adam.v." + e[i].first, st.adam.v[i]);
    }
    return c;
}

TrainState restore_state(const Checkpoint& c, RdstModel& model, const StageSetup& setup) {
    auto meta = [&](const std::string& k) {
        auto it = c.meta.find(k);
        if (it == c.meta.end()) throw FormatError("training checkpoint lacks " + k);
        return it->second;
    };
    if (meta("stage") != setup.name) throw FormatError("cannot resume " + setup.name + " from a " + meta("stage") + " checkpoint");
    if (RdstConfig::from_meta(c.meta).to_meta() != model.config().to_meta()) {
        throw FormatError("checkpoint model configuration differs from the requested one");
    }
    c.take_params("param.", model.params());
    TrainState st;
    st.step = std::stoll(meta("step"));
    st.best_psnr = std::stod(meta("best.psnr"));
    st.best_step = std::stoll(meta("best.step"));
    st.adam.step = std::stoll(meta("adam.step"));
    if (st.adam.step > 0) {
        for (const auto& [name, t] : model.params().entries()) {
            st.adam.m.push_back(c.get("adam.m." + name).to(t.dtype()));
            st.adam.v.push_back(c.get("adam.v." + name).to(t.dtype()));
        }
    }
    return st;
}

struct Batch {
    Tensor lr, hr;
};

Batch draw_batch(const TrainPlan& plan, const std::vector<data::SrImage>& images, const std::string& stage,
                 std::int64_t step) {
    std::mt19937_64 rng(nn::derive_seed(plan.seed, stage + ".step." + std::to_string(step)));
    std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
    std::vector<Tensor> lrs, hrs;
    for (std::int64_t b = 0; b < plan.batch; ++b) {
        const auto& img = images[pick(rng)];
        const auto sample = data::make_sample(img, plan.scale, plan.sigma, rng);
        const auto p = data::sample_patch(sample, plan.patch, plan.scale, rng);
        lrs.push_back(p.lr.to(plan.dtype));
        hrs.push_back(p.hr.to(plan.dtype));
    }
    return {batch_of(lrs), batch_of(hrs)};
}

ValRecord validate_model(const RdstModel& model, const std::vector<data::SrImage>& val, int count, const TrainPlan& plan,
                         const UNet* unet, std::int64_t step) {
    ValRecord r;
    r.step = step;
    const std::size_t n = std::min<std::size_t>(val.size(), static_cast<std::size_t>(count));
    if (n == 0) return r;
    EvalOptions eo;
    eo.scale = plan.scale;
    eo.sigma = plan.sigma;
    eo.seed = plan.seed;
    std::vector<data::SrImage> subset(val.begin(), val.begin() + static_cast<std::ptrdiff_t>(n));
    const auto report = evaluate(model, subset, unet, eo);
    r.psnr = report.psnr().mean;
    if (unet) r.dice = report.dice("whole").mean;
    return r;
}

StageResult run_stage(const TrainPlan& plan, const StageData& data, RdstModel& model, const StageSetup& setup,
                      const fs::path& out, const Config& snapshot, bool resume) {
    plan.validate();
    if (!data.train || data.train->empty()) throw TrainingError(setup.name + ": training set is empty");
    if (model.config().scale != plan.scale) {
        throw ConfigError("model scale " + std::to_string(model.config().scale) + " differs from the plan's " +
                          std::to_string(plan.scale));
    }
    const std::vector<data::SrImage> no_val;
    const auto& val = data.val ? *data.val : no_val;
    fs::create_directories(out);

    StageResult result;
    result.last = out / "last.ckpt";
    result.best = out / "best.ckpt";
    TrainState st;
    RunLog log;
    log.config = snapshot.to_text();
    if (resume && fs::exists(result.last)) {
        st = restore_state(Checkpoint::load(result.last), model, setup);
        log = RunLog::read(out);
        log.config = snapshot.to_text();
        std::erase_if(log.steps, [&](const StepRecord& r) { return r.step >= st.step; });
        std::erase_if(log.validations, [&](const ValRecord& r) { return r.step > st.step; });
    } else {
        fs::remove(result.best);
    }

    std::ofstream timing(out / "timing.tsv", resume ? std::ios::app : std::ios::trunc);
    if (!resume) timing << "step\telapsed_s\n";
    const auto t0 = std::chrono::steady_clock::now();
    const std::int64_t interval = plan.val_interval(setup.steps);

    auto save_last = [&] {
        state_checkpoint(model, st, setup, plan).save(result.last);
        log.write(out);
    };

    for (; st.step < setup.steps;) {
        const std::int64_t t = st.step;
        const Batch b = draw_batch(plan, *data.train, setup.name, t);
        Tape tape;
        LossTerms terms;
        {
            Tape::Scope scope(tape);
            try {
                terms = combined_loss(setup.loss, model.forward(b.lr), b.hr, setup.unet);
            } catch (const NonFiniteError& e) {
                throw TrainingError(setup.name + " step " + std::to_string(t) + ": " + e.what());
            }
            const double total = terms.total.item();
            if (!std::isfinite(total)) {
                throw TrainingError(setup.name + " step " + std::to_string(t) + ": non-finite loss (l1 " +
                                    fmt(terms.l1.item()) + ")");
            }
            tape.backward(terms.total);
        }
        AdamConfig ac;
        ac.lr = setup.lr_at(t);
        adam_step(model.params(), gradients(tape, model.params()), ac, st.adam);
        ++st.step;
        log.steps.push_back({t, ac.lr, terms.total.item(), terms.l1.item(),
                             terms.perceptual.defined() ? terms.perceptual.item() : 0.0});

        const bool validate_now = st.step % interval == 0 || st.step == setup.steps;
        if (validate_now) {
            const auto v = validate_model(model, val, plan.val_images, plan, setup.unet, st.step);
            log.validations.push_back(v);
            if (!val.empty() && plan.val_images > 0 && v.psnr > st.best_psnr) {
                st.best_psnr = v.psnr;
                st.best_step = st.step;
                state_checkpoint(model, st, setup, plan).save(result.best);
            }
            timing << st.step << '\t' << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                   << '\n';
            timing.flush();
        }
        if (validate_now || (plan.ckpt_every > 0 && st.step % plan.ckpt_every == 0)) save_last();
    }
    if (setup.steps == 0 || !fs::exists(result.last)) save_last();
    if (!fs::exists(result.best)) state_checkpoint(model, st, setup, plan).save(result.best);
    result.log = log;
    result.best_psnr = st.best_psnr;
    result.best_step = st.best_step;
    return result;
}

}  // namespace

StageResult train_stage1(const TrainPlan& plan, const StageData& data, RdstModel& model, const fs::path& out,
                         const Config& snapshot, bool resume) {
    StageSetup s;
    s.name = "stage1";
    s.steps = plan.stage1_steps;
    s.lr_at = [&](std::int64_t) { return plan.stage1_lr; };
    s.loss = LossSpec::parse("none", 1.0, 0.0);
    return run_stage(plan, data, model, s, out, snapshot, resume);
}

StageResult finetune_stage2(const TrainPlan& plan, const StageData& data, RdstModel& model, const UNet* unet,
                            const fs::path& out, const Config& snapshot, bool resume) {
    plan.loss.validate(unet != nullptr);
    if (unet) {
        for (const auto& [name, t] : unet->params().entries()) {
            if (t.requires_grad()) throw TrainingError("stage 2 needs a frozen U-Net; " + name + " is trainable");
        }
    }
    StageSetup s;
    s.name = "stage2";
    s.steps = plan.stage2_steps;
    s.lr_at = [&](std::int64_t t) { return plan.stage2_lr_at(t); };
    s.loss = plan.loss;
    s.unet = unet;
    return run_stage(plan, data, model, s, out, snapshot, resume);
}

// ---------------------------------------------------------------------------
// U-Net training

std::vector<double> train_unet(const SegPlan& plan, const std::vector<data::SrImage>& images, UNet& unet,
                               const fs::path& out) {
    plan.validate();
    if (images.empty()) throw TrainingError("segmentation training set is empty");
    for (const auto& im : images) {
        if (!im.label.defined()) throw TrainingError("image " + im.id + " has no label map");
    }
    unet.set_trainable(true);
    const DType dt = params_dtype(unet.params(), plan.dtype);
    AdamState adam;
    AdamConfig ac;
    ac.lr = plan.lr;
    std::vector<double> losses;
    std::ostringstream tsv;
    tsv.precision(9);
    tsv << "step\tdice_loss\n";
    for (std::int64_t t = 0; t < plan.steps; ++t) {
        std::mt19937_64 rng(nn::derive_seed(plan.seed, "seg.step." + std::to_string(t)));
        std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
        std::vector<Tensor> xs, ys;
        for (std::int64_t b = 0; b < plan.batch; ++b) {
            const auto& im = images[pick(rng)];
            xs.push_back(im.hr.to(dt));
            ys.push_back(im.label);
        }
        const Tensor x = batch_of(xs);
        const Tensor target = one_hot(batch_of(ys), unet.config().classes).to(dt);
        Tape tape;
        double value = 0.0;
        {
            Tape::Scope scope(tape);
            Tensor loss = dice_loss(unet.forward(x).probs, target);
            value = loss.item();
            if (!std::isfinite(value)) throw TrainingError("U-Net step " + std::to_string(t) + ": non-finite loss");
            tape.backward(loss);
        }
        adam_step(unet.params(), gradients(tape, unet.params()), ac, adam);
        losses.push_back(value);
        tsv << t << '\t' << value << '\n';
    }
    unet.set_trainable(false);
    fs::create_directories(out);
    unet_checkpoint(unet).save(out / "unet.ckpt");
    write_file_atomic(out / "steps.tsv", tsv.str());
    return losses;
}

// ---------------------------------------------------------------------------
// Evaluation

std::map<std::string, std::set<int>> default_regions(int classes) {
    std::map<std::string, std::set<int>> r;
    std::set<int> whole;
    for (int k = 1; k < std::max(classes, 2); ++k) {
        whole.insert(k);
        if (classes > 2) r["class" + std::to_string(k)] = {k};
    }
    r["whole"] = whole;
    return r;
}

Tensor eval_input(const data::SrImage& image, const EvalOptions& opts) {
    std::mt19937_64 rng(nn::derive_seed(opts.seed, "eval." + image.id));
    return data::degrade(image.hr, opts.scale, opts.sigma, rng);
}

Tensor error_overlay(const Tensor& image, const Tensor& pred, const Tensor& truth) {
    const std::int64_t h = image.dim(-2), w = image.dim(-1);
    if (pred.numel() != h * w || truth.numel() != h * w) throw ShapeError("error_overlay: label maps must be H x W");
    const auto px = image.to_vector(), p = pred.to_vector(), g = truth.to_vector();
    std::vector<double> rgb(static_cast<std::size_t>(3 * h * w));
    for (std::int64_t i = 0; i < h * w; ++i) {
        const bool wrong = std::lround(p[i]) != std::lround(g[i]);
        const double v = std::clamp(px[i], 0.0, 1.0);
        rgb[i] = wrong ? 1.0 : v;
        rgb[h * w + i] = wrong ? 0.0 : v;
        rgb[2 * h * w + i] = wrong ? 0.0 : v;
    }
    return Tensor::from_values({3, h, w}, rgb, DType::kF32);
}

namespace {

constexpr std::int64_t kGutter = 2;

void write_grid(const fs::path& path, const std::vector<Tensor>& panels) {
    const std::int64_t h = panels.front().dim(-2), w = panels.front().dim(-1);
    const auto n = static_cast<std::int64_t>(panels.size());
    const std::int64_t gw = n * w + (n - 1) * kGutter;
    std::vector<double> rgb(static_cast<std::size_t>(3 * h * gw), 1.0);
    for (std::int64_t k = 0; k < n; ++k) {
        const auto v = panels[k].to_vector();
        const bool colour = panels[k].dim(0) == 3;
        for (int c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    const double s = v[(colour ? c * h * w : 0) + y * w + x];
                    rgb[(c * h + y) * gw + k * (w + kGutter) + x] = std::clamp(s, 0.0, 1.0);
                }
    }
    data::write_png(path, Tensor::from_values({3, h, gw}, rgb, DType::kF32));
}

Tensor as_batch(const Tensor& chw, DType dt) { return batch_of({chw.to(dt)}); }

Tensor drop_batch(const Tensor& nchw) {
    Shape s(nchw.shape().begin() + 1, nchw.shape().end());
    return reshape(nchw, s);
}

void score_dice(ImageScores& row, const Tensor& image, const data::SrImage& ref, const UNet& unet, Tensor* pred_out) {
    const DType dt = params_dtype(unet.params(), DType::kF32);
    Tensor pred = unet.predict(as_batch(image, dt));
    Tensor truth = reshape(ref.label, pred.shape());
    const int k = std::max(unet.config().classes, 2);
    for (const auto& [name, region] : default_regions(unet.config().classes)) {
        row.dice[name] = region_dice(pred, truth, region, k);
    }
    if (pred_out) *pred_out = pred;
}

}  // namespace

EvalReport evaluate(const SrModel& model, const std::vector<data::SrImage>& images, const UNet* unet,
                    const EvalOptions& opts) {
    if (model.scale() != opts.scale) {
        throw ConfigError("model scale " + std::to_string(model.scale()) + " differs from eval scale " +
                          std::to_string(opts.scale));
    }
    EvalReport report;
    report.method = model.kind();
    report.params = model.params().count();
    if (unet && unet->config().in_channels != (images.empty() ? 1 : images.front().hr.dim(0))) {
        throw ConfigError("U-Net input channels differ from the image channels");
    }
    const DType dt = params_dtype(model.params(), DType::kF32);
    const BicubicModel bicubic(opts.scale);
    if (opts.grids > 0) fs::create_directories(opts.grid_dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto& im = images[i];
        const Tensor lr = eval_input(im, opts);
        if (i == 0) {
            report.macs = model.cost({1, lr.dim(0), lr.dim(1), lr.dim(2)}).total_macs();
        }
        const Tensor sr = drop_batch(model.infer(as_batch(lr, dt))).to(DType::kF32);
        if (sr.shape() != im.hr.shape()) {
            throw ShapeError("model output " + to_string(sr.shape()) + " does not match HR " + to_string(im.hr.shape()));
        }
        ImageScores row;
        row.id = im.id;
        row.psnr = psnr(sr, im.hr);
        row.psnr_infinite = mse(sr, im.hr) == 0.0;
        row.ssim = ssim(sr, im.hr, opts.ssim);
        Tensor pred;
        if (unet) score_dice(row, sr, im, *unet, &pred);
        report.images.push_back(row);

        if (static_cast<int>(i) < opts.grids) {
            const Tensor lr_big = drop_batch(nn::upsample_nearest(as_batch(lr, DType::kF32), opts.scale));
            const Tensor bic = drop_batch(bicubic.infer(as_batch(lr, DType::kF32)));
            std::vector<Tensor> panels{lr_big, bic, sr, im.hr};
            if (unet) panels.push_back(error_overlay(sr, pred, im.label));
            write_grid(opts.grid_dir / (report.method + "_" + im.id + ".png"), panels);
        }
    }
    return report;
}

EvalReport evaluate_reference(const std::vector<data::SrImage>& images, const UNet* unet, const EvalOptions& opts) {
    EvalReport report;
    report.method = "hr";
    for (const auto& im : images) {
        ImageScores row;
        row.id = im.id;
        row.psnr = psnr(im.hr, im.hr);
        row.psnr_infinite = true;
        row.ssim = ssim(im.hr, im.hr, opts.ssim);
        if (unet) score_dice(row, im.hr, im, *unet, nullptr);
        report.images.push_back(row);
    }
    return report;
}

}  // namespace rdst::train
