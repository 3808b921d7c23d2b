// rdst: data generation, training, evaluation and cost reporting.
//
// Every subcommand reads one optional config file (--config) and then
// applies `--<key>=<value>` overrides for any known config key, so
// `rdst train --config desk.cfg --train.batch=8 --seed 7` is valid.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rdst/config.hpp"
#include "rdst/data.hpp"
#include "rdst/metrics.hpp"
#include "rdst/ops.hpp"
#include "rdst/rdst_model.hpp"
#include "rdst/serialize.hpp"
#include "rdst/train.hpp"
#include "rdst/unet.hpp"

namespace fs = std::filesystem;
using namespace rdst;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

class UsageError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

bool is_config_key(const std::string& key) {
    for (const auto& k : known_config_keys()) {
        if (k.key == key) return true;
    }
    return false;
}

/// Moves `--key=value` tokens naming config keys out of argv.
std::vector<std::pair<std::string, std::string>> extract_overrides(std::vector<std::string>& args) {
    std::vector<std::pair<std::string, std::string>> out;
    std::vector<std::string> rest;
    for (const auto& a : args) {
        const auto eq = a.find('=');
        if (a.rfind("--", 0) == 0 && eq != std::string::npos) {
            const std::string key = a.substr(2, eq - 2);
            if (key != "seed" && is_config_key(key)) {
                out.emplace_back(key, a.substr(eq + 1));
                continue;
            }
        }
        rest.push_back(a);
    }
    args = rest;
    return out;
}

Shape parse_shape(const std::string& text) {
    Shape s;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, 'x')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(part, &used);
            if (used != part.size() || v < 1) throw std::invalid_argument(part);
            s.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("malformed shape '" + text + "', expected e.g. 1x1x40x32");
        }
    }
    if (s.size() != 4) throw UsageError("shape '" + text + "' must have four extents N x C x H x W");
    return s;
}

std::string si(double v) {
    char buf[64];
    if (v >= 1e9) std::snprintf(buf, sizeof buf, "%.2fG", v / 1e9);
    else if (v >= 1e6) std::snprintf(buf, sizeof buf, "%.2fM", v / 1e6);
    else if (v >= 1e3) std::snprintf(buf, sizeof buf, "%.2fK", v / 1e3);
    else std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
}

struct Common {
    std::string config_path;
    std::optional<long long> seed;
    std::vector<std::pair<std::string, std::string>> overrides;

    Config resolve() const {
        Config cfg = Config::defaults();
        if (!config_path.empty()) cfg.merge(Config::load(config_path));
        for (const auto& [k, v] : overrides) cfg.set(k, v);
        if (seed) cfg.set("seed", std::to_string(*seed));
        return cfg;
    }
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "plain-text key = value config file")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "root seed for all randomness");
}

std::vector<data::SrImage> split(const std::string& root, const std::string& name) {
    const fs::path dir = fs::path(root) / name;
    if (!fs::exists(dir / "manifest.txt")) throw std::runtime_error("no dataset split at " + dir.string());
    return data::load_split(dir);
}

std::unique_ptr<SrModel> open_model(const std::string& spec, const Config& cfg, int scale) {
    if (spec.empty() || spec == "bicubic") return std::make_unique<BicubicModel>(scale);
    if (spec == "rdst" || spec == "rdst-e" || spec == "tiny") {
        Config c = cfg;
        c.set("model.preset", spec);
        return std::make_unique<RdstModel>(RdstConfig::from_config(c), static_cast<std::uint64_t>(c.integer("seed")));
    }
    return std::make_unique<RdstModel>(train::load_model(fs::path(spec)));
}

void print_report_line(const EvalReport& r) {
    std::printf("%-8s psnr %.4f (%.4f) ssim %.4f (%.4f)", r.method.c_str(), r.psnr().mean, r.psnr().std,
                r.ssim().mean, r.ssim().std);
    for (const auto& region : r.regions()) std::printf(" dice_%s %.4f", region.c_str(), r.dice(region).mean);
    std::printf("\n");
}

}  // namespace

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    Common common;
    common.overrides = extract_overrides(args);

    CLI::App app{"Residual dense swin transformer super-resolution", "rdst"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write a synthetic phantom dataset");
    add_common(gen, common);
    std::string gen_out;
    gen->add_option("--out", gen_out, "dataset root (default data.dir)");

    // train
    auto* tr = app.add_subcommand("train", "stage 1: L1 training");
    add_common(tr, common);
    std::string tr_data, tr_out;
    bool tr_resume = false;
    tr->add_option("--data", tr_data, "dataset root (default data.dir)");
    tr->add_option("--out", tr_out, "run directory (default train.out)");
    tr->add_flag("--resume", tr_resume, "continue from <out>/last.ckpt");

    // finetune
    auto* ft = app.add_subcommand("finetune", "stage 2: perceptual fine-tuning");
    add_common(ft, common);
    std::string ft_from, ft_data, ft_out, ft_unet;
    bool ft_resume = false;
    ft->add_option("--from", ft_from, "stage-1 checkpoint")->required()->check(CLI::ExistingFile);
    ft->add_option("--unet", ft_unet, "frozen U-Net checkpoint (default loss.unet)");
    ft->add_option("--data", ft_data, "dataset root (default data.dir)");
    ft->add_option("--out", ft_out, "run directory (default train.out)");
    ft->add_flag("--resume", ft_resume, "continue from <out>/last.ckpt");

    // seg-train
    auto* sg = app.add_subcommand("seg-train", "train the segmentation U-Net with dice loss");
    add_common(sg, common);
    std::string sg_data, sg_out;
    sg->add_option("--data", sg_data, "dataset root (default data.dir)");
    sg->add_option("--out", sg_out, "output directory (default seg.out)");

    // eval
    auto* ev = app.add_subcommand("eval", "score a model against bicubic on the test split");
    add_common(ev, common);
    std::string ev_model, ev_unet, ev_data, ev_out;
    ev->add_option("--model", ev_model, "RDST checkpoint; omitted scores bicubic only");
    ev->add_option("--unet", ev_unet, "U-Net checkpoint for region dice");
    ev->add_option("--data", ev_data, "dataset root (default data.dir)");
    ev->add_option("--out", ev_out, "report directory")->required();

    // infer
    auto* in = app.add_subcommand("infer", "upscale one PNG");
    add_common(in, common);
    std::string in_model, in_png, out_png;
    int in_scale = 0;
    in->add_option("--model", in_model, "RDST checkpoint; omitted uses bicubic");
    in->add_option("--scale", in_scale, "upscaling factor (must match the checkpoint)");
    in->add_option("--in", in_png, "input PNG")->required()->check(CLI::ExistingFile);
    in->add_option("--out", out_png, "output PNG")->required();

    // cost
    auto* co = app.add_subcommand("cost", "parameter and MAC report");
    add_common(co, common);
    std::string co_model = "rdst", co_input = "1x1x40x32";
    bool co_detail = false;
    co->add_option("--model", co_model, "rdst | rdst-e | tiny | checkpoint path");
    co->add_option("--input", co_input, "input shape N x C x H x W");
    co->add_flag("--detail", co_detail, "per-module breakdown");

    // bench-fps
    auto* bf = app.add_subcommand("bench-fps", "time inference");
    add_common(bf, common);
    std::string bf_model = "rdst", bf_input = "1x1x40x32";
    int bf_iters = 5, bf_warmup = 1;
    bf->add_option("--model", bf_model, "rdst | rdst-e | tiny | bicubic | checkpoint path");
    bf->add_option("--input", bf_input, "input shape N x C x H x W");
    bf->add_option("--iters", bf_iters, "timed iterations")->check(CLI::PositiveNumber);
    bf->add_option("--warmup", bf_warmup, "untimed iterations")->check(CLI::NonNegativeNumber);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        const Config cfg = common.resolve();
        // Surface malformed values as usage errors before any work starts.
        (void)RdstConfig::from_config(cfg);
        (void)UNetConfig::from_config(cfg);
        (void)train::TrainPlan::from_config(cfg);
        (void)train::SegPlan::from_config(cfg);
        const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
        auto pick = [](const std::string& flag, const std::string& fallback) { return flag.empty() ? fallback : flag; };

        if (*gen) {
            data::PhantomSpec spec;
            spec.size = cfg.integer("data.size");
            spec.classes = static_cast<int>(cfg.integer("data.classes"));
            spec.texture = cfg.real("data.texture");
            spec.seed = seed;
            const std::string root = pick(gen_out, cfg.str("data.dir"));
            data::generate_dataset(spec, cfg.integer("data.count"), cfg.real("data.test_fraction"), root);
            std::printf("wrote %lld phantoms to %s\n", cfg.integer("data.count"), root.c_str());
        } else if (*tr || *ft) {
            const bool stage2 = ft->parsed();
            const std::string root = pick(stage2 ? ft_data : tr_data, cfg.str("data.dir"));
            const auto train_set = split(root, "train");
            const auto val_set = split(root, "test");
            const auto plan = train::TrainPlan::from_config(cfg);
            const fs::path out = pick(stage2 ? ft_out : tr_out, cfg.str("train.out"));
            train::StageData data{&train_set, &val_set};
            train::StageResult r;
            if (!stage2) {
                RdstModel model(RdstConfig::from_config(cfg), seed, plan.dtype);
                r = train::train_stage1(plan, data, model, out, cfg, tr_resume);
            } else {
                RdstModel model = train::load_model(fs::path(ft_from), plan.dtype);
                const std::string unet_path = pick(ft_unet, cfg.str("loss.unet"));
                std::optional<UNet> unet;
                std::string hash_before;
                if (!unet_path.empty()) {
                    hash_before = file_hash(unet_path);
                    unet.emplace(train::load_unet(unet_path, plan.dtype));
                }
                r = train::finetune_stage2(plan, data, model, unet ? &*unet : nullptr, out, cfg, ft_resume);
                if (!unet_path.empty() && file_hash(unet_path) != hash_before) {
                    throw std::runtime_error("U-Net checkpoint changed during fine-tuning");
                }
            }
            const auto& steps = r.log.steps;
            std::printf("%s finished: %zu steps, final loss %.6f, best validation PSNR %.4f dB at step %lld\n",
                        stage2 ? "finetune" : "train", steps.size(), steps.empty() ? 0.0 : steps.back().total,
                        r.best_psnr, static_cast<long long>(r.best_step));
        } else if (*sg) {
            const auto images = split(pick(sg_data, cfg.str("data.dir")), "train");
            const auto plan = train::SegPlan::from_config(cfg);
            UNet unet(UNetConfig::from_config(cfg), seed, plan.dtype);
            const fs::path out = pick(sg_out, cfg.str("seg.out"));
            const auto losses = train::train_unet(plan, images, unet, out);
            std::printf("seg-train finished: %zu steps, final dice loss %.6f, wrote %s\n", losses.size(),
                        losses.empty() ? 1.0 : losses.back(), (out / "unet.ckpt").c_str());
        } else if (*ev) {
            const auto images = split(pick(ev_data, cfg.str("data.dir")), "test");
            std::optional<UNet> unet;
            if (!ev_unet.empty()) unet.emplace(train::load_unet(ev_unet));
            train::EvalOptions eo;
            eo.sigma = cfg.real("data.sigma");
            eo.seed = seed;
            eo.grids = static_cast<int>(cfg.integer("eval.grids"));
            eo.grid_dir = fs::path(ev_out) / "grids";
            std::vector<EvalReport> reports;
            std::unique_ptr<SrModel> model;
            if (!ev_model.empty()) {
                model = std::make_unique<RdstModel>(train::load_model(fs::path(ev_model)));
                eo.scale = model->scale();
            } else {
                eo.scale = static_cast<int>(cfg.integer("model.scale"));
            }
            reports.push_back(train::evaluate(BicubicModel(eo.scale), images, unet ? &*unet : nullptr, eo));
            if (model) reports.push_back(train::evaluate(*model, images, unet ? &*unet : nullptr, eo));
            if (unet) reports.push_back(train::evaluate_reference(images, &*unet, eo));
            fs::create_directories(ev_out);
            std::string tsv, json = "[\n";
            for (std::size_t i = 0; i < reports.size(); ++i) {
                const auto t = reports[i].to_tsv();
                tsv += i == 0 ? t : t.substr(t.find('\n') + 1);
                json += reports[i].to_json() + (i + 1 < reports.size() ? ",\n" : "");
                print_report_line(reports[i]);
            }
            json += "]\n";
            write_file_atomic(fs::path(ev_out) / "report.tsv", tsv);
            write_file_atomic(fs::path(ev_out) / "report.json", json);
        } else if (*in) {
            std::unique_ptr<SrModel> model;
            if (in_model.empty()) {
                if (in_scale < 1) throw UsageError("infer without --model needs --scale");
                model = std::make_unique<BicubicModel>(in_scale);
            } else {
                model = std::make_unique<RdstModel>(train::load_model(fs::path(in_model)));
                if (in_scale != 0 && in_scale != model->scale()) {
                    throw UsageError("--scale " + std::to_string(in_scale) + " does not match the checkpoint's x" +
                                     std::to_string(model->scale()));
                }
            }
            Tensor lr = data::read_png(in_png);
            lr = reshape(lr, {1, lr.dim(0), lr.dim(1), lr.dim(2)});
            Tensor sr = model->infer(lr);
            data::write_png(out_png, reshape(sr, {sr.dim(1), sr.dim(2), sr.dim(3)}));
            std::printf("%s: %lldx%lld -> %lldx%lld\n", out_png.c_str(), static_cast<long long>(lr.dim(2)),
                        static_cast<long long>(lr.dim(3)), static_cast<long long>(sr.dim(2)),
                        static_cast<long long>(sr.dim(3)));
        } else if (*co) {
            const Shape s = parse_shape(co_input);
            const auto model = open_model(co_model, cfg, static_cast<int>(cfg.integer("model.scale")));
            const auto report = model->cost({s[0], s[1], s[2], s[3]});
            if (co_detail) std::printf("%s", report.grouped(2).to_text().c_str());
            std::printf("model %s input %s\nparams %lld (%s)\nmacs %lld (%s)\n", co_model.c_str(), co_input.c_str(),
                        static_cast<long long>(model->params().count()), si(static_cast<double>(model->params().count())).c_str(),
                        static_cast<long long>(report.total_macs()), si(static_cast<double>(report.total_macs())).c_str());
        } else if (*bf) {
            const Shape s = parse_shape(bf_input);
            const auto model = open_model(bf_model, cfg, static_cast<int>(cfg.integer("model.scale")));
            std::mt19937_64 rng(seed);
            std::uniform_real_distribution<double> u(0.0, 1.0);
            std::vector<double> v(static_cast<std::size_t>(s[0] * s[1] * s[2] * s[3]));
            for (auto& x : v) x = u(rng);
            const Tensor x = Tensor::from_values(s, v);
            const auto r = measure_fps([&] { (void)model->infer(x); }, s[0], bf_warmup, bf_iters);
            std::printf("model %s input %s fps %.3f median %.3f mad %.3f over %d iterations (%.3f s)\n",
                        bf_model.c_str(), bf_input.c_str(), r.fps, r.median_fps, r.mad_fps, r.iters, r.elapsed_s);
        }
        return 0;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "rdst: %s\n", e.what());
        return kUsageError;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "rdst: config: %s\n", e.what());
        return kUsageError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "rdst: %s\n", e.what());
        return kRuntimeError;
    }
}

int main(int argc, char** argv) { return run(argc, argv); }
