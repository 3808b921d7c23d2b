#include "rdst/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace rdst {

double mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mse: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    const auto x = a.to_vector(), y = b.to_vector();
    if (x.empty()) throw ShapeError("mse of empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    return acc / static_cast<double>(x.size());
}

double psnr(const Tensor& sr, const Tensor& hr, double peak) {
    const double m = mse(sr, hr);
    if (m == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

namespace {

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const double* src, std::int64_t h, std::int64_t w, const std::vector<double>& k) {
    const auto n = static_cast<std::int64_t>(k.size());
    const std::int64_t ho = h - n + 1, wo = w - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h * wo)), out(static_cast<std::size_t>(ho * wo));
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) acc += k[i] * src[y * w + x + i];
            tmp[y * wo + x] = acc;
        }
    for (std::int64_t y = 0; y < ho; ++y)
        for (std::int64_t x = 0; x < wo; ++x) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) acc += k[i] * tmp[(y + i) * wo + x];
            out[y * wo + x] = acc;
        }
    return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opts) {
    if (a.shape() != b.shape()) throw ShapeError("ssim: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (a.rank() < 2) throw ShapeError("ssim needs at least two axes");
    const std::int64_t h = a.dim(-2), w = a.dim(-1), planes = a.numel() / (h * w);
    if (opts.window < 1 || h < opts.window || w < opts.window) {
        throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                         std::to_string(opts.window) + "-pixel window");
    }
    std::vector<double> k(static_cast<std::size_t>(opts.window));
    const double centre = (opts.window - 1) / 2.0;
    double ks = 0.0;
    for (int i = 0; i < opts.window; ++i) {
        k[i] = std::exp(-(i - centre) * (i - centre) / (2.0 * opts.sigma * opts.sigma));
        ks += k[i];
    }
    for (auto& v : k) v /= ks;
    const double c1 = (0.01 * opts.peak) * (0.01 * opts.peak), c2 = (0.03 * opts.peak) * (0.03 * opts.peak);
    const auto x = a.to_vector(), y = b.to_vector();
    const std::size_t plane = static_cast<std::size_t>(h * w);
    std::vector<double> xx(plane), yy(plane), xy(plane);
    double total = 0.0;
    std::size_t count = 0;
    for (std::int64_t p = 0; p < planes; ++p) {
        const double* px = x.data() + p * plane;
        const double* py = y.data() + p * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            xx[i] = px[i] * px[i];
            yy[i] = py[i] * py[i];
            xy[i] = px[i] * py[i];
        }
        const auto mx = filter_valid(px, h, w, k), my = filter_valid(py, h, w, k);
        const auto sxx = filter_valid(xx.data(), h, w, k), syy = filter_valid(yy.data(), h, w, k),
                   sxy = filter_valid(xy.data(), h, w, k);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
            total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
                     ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

double region_dice(const Tensor& pred, const Tensor& gt, const std::set<int>& region, int classes) {
    if (pred.shape() != gt.shape()) {
        throw ShapeError("region_dice: " + to_string(pred.shape()) + " vs " + to_string(gt.shape()));
    }
    for (int c : region) {
        if (c < 0 || c >= classes) throw ShapeError("region class " + std::to_string(c) + " is unknown");
    }
    const auto p = pred.to_vector(), g = gt.to_vector();
    double inter = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto cp = static_cast<int>(std::lround(p[i])), cg = static_cast<int>(std::lround(g[i]));
        if (cp < 0 || cp >= classes || cg < 0 || cg >= classes) {
            throw ShapeError("label outside " + std::to_string(classes) + " classes");
        }
        const bool a = region.count(cp) != 0, b = region.count(cg) != 0;
        inter += a && b;
        sp += a;
        sg += b;
    }
    return (2.0 * inter + 1.0) / (sp + sg + 1.0);
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

FpsResult measure_fps(const std::function<void()>& run, std::int64_t frames, int warmup, int iters) {
    if (iters < 1) throw std::invalid_argument("measure_fps needs at least one timed iteration");
    if (frames < 1) throw std::invalid_argument("measure_fps needs at least one frame per call");
    using clock = std::chrono::steady_clock;
    for (int i = 0; i < warmup; ++i) run();
    std::vector<double> per;
    double elapsed = 0.0;
    for (int i = 0; i < iters; ++i) {
        const auto t0 = clock::now();
        run();
        const double s = std::chrono::duration<double>(clock::now() - t0).count();
        elapsed += s;
        per.push_back(static_cast<double>(frames) / std::max(s, 1e-12));
    }
    FpsResult r;
    r.iters = iters;
    r.frames_per_iter = frames;
    r.elapsed_s = elapsed;
    r.fps = static_cast<double>(iters) * static_cast<double>(frames) / std::max(elapsed, 1e-12);
    r.median_fps = median(per);
    std::vector<double> dev;
    for (double v : per) dev.push_back(std::abs(v - r.median_fps));
    r.mad_fps = median(dev);
    return r;
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd r;
    if (values.empty()) return r;
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(values.size());
    double q = 0.0;
    for (double v : values) q += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(q / static_cast<double>(values.size()));
    return r;
}

MeanStd EvalReport::psnr() const {
    std::vector<double> v;
    for (const auto& im : images) v.push_back(im.psnr_infinite ? kPsnrCap : im.psnr);
    return mean_std(v);
}

MeanStd EvalReport::ssim() const {
    std::vector<double> v;
    for (const auto& im : images) v.push_back(im.ssim);
    return mean_std(v);
}

MeanStd EvalReport::dice(const std::string& region) const {
    std::vector<double> v;
    for (const auto& im : images) {
        auto it = im.dice.find(region);
        if (it != im.dice.end()) v.push_back(it->second);
    }
    return mean_std(v);
}

std::vector<std::string> EvalReport::regions() const {
    std::vector<std::string> out;
    for (const auto& im : images) {
        for (const auto& [name, v] : im.dice) {
            if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
        }
    }
    return out;
}

std::string EvalReport::to_tsv() const {
    std::ostringstream os;
    os.precision(10);
    os << "method\tmetric\tmean\tstd\n";
    auto row = [&](const std::string& name, MeanStd m) { os << method << '\t' << name << '\t' << m.mean << '\t' << m.std << '\n'; };
    row("psnr_db", psnr());
    row("ssim", ssim());
    for (const auto& r : regions()) row("dice_" + r, dice(r));
    os << method << "\tparams\t" << params << "\t0\n";
    os << method << "\tmacs\t" << macs << "\t0\n";
    return os.str();
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["method"] = method;
    j["params"] = params;
    j["macs"] = macs;
    j["fps"] = fps;
    j["fid"] = fid ? nlohmann::ordered_json(*fid) : nlohmann::ordered_json(nullptr);
    auto ms = [](MeanStd m) { return nlohmann::ordered_json{{"mean", m.mean}, {"std", m.std}}; };
    j["aggregate"]["psnr_db"] = ms(psnr());
    j["aggregate"]["ssim"] = ms(ssim());
    for (const auto& r : regions()) j["aggregate"]["dice"][r] = ms(dice(r));
    j["images"] = nlohmann::ordered_json::array();
    for (const auto& im : images) {
        nlohmann::ordered_json row;
        row["id"] = im.id;
        row["psnr_db"] = im.psnr_infinite ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(im.psnr);
        row["ssim"] = im.ssim;
        for (const auto& [name, v] : im.dice) row["dice"][name] = v;
        j["images"].push_back(row);
    }
    return j.dump(2) + "\n";
}

}  // namespace rdst
