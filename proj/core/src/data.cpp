#include "rdst/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <sstream>

#include "rdst/config.hpp"
#include "rdst/detail/dispatch.hpp"
#include "rdst/nn.hpp"
#include "rdst/serialize.hpp"

namespace rdst::data {

using detail::visit_dtype;

double cubic_kernel(double x, double a) {
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

namespace {

struct Taps {
    std::vector<std::int64_t> index;
    std::vector<double> weight;
};

std::int64_t symmetric(std::int64_t i, std::int64_t n) {
    // Half-sample symmetric extension: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    const std::int64_t period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

std::vector<Taps> downsample_taps(std::int64_t n, int s) {
    std::vector<Taps> taps(static_cast<std::size_t>(n / s));
    for (std::int64_t o = 0; o < n / s; ++o) {
        const double center = (static_cast<double>(o) + 0.5) * s - 0.5;
        const auto lo = static_cast<std::int64_t>(std::floor(center - 2.0 * s));
        const auto hi = static_cast<std::int64_t>(std::ceil(center + 2.0 * s));
        double total = 0.0;
        Taps& t = taps[o];
        for (std::int64_t i = lo; i <= hi; ++i) {
            const double w = cubic_kernel((static_cast<double>(i) - center) / s);
            if (w == 0.0) continue;
            t.index.push_back(symmetric(i, n));
            t.weight.push_back(w);
            total += w;
        }
        for (auto& w : t.weight) w /= total;
    }
    return taps;
}

std::vector<Taps> upsample_taps(std::int64_t n, int s) {
    std::vector<Taps> taps(static_cast<std::size_t>(n * s));
    for (std::int64_t o = 0; o < n * s; ++o) {
        const double center = (static_cast<double>(o) + 0.5) / s - 0.5;
        const auto base = static_cast<std::int64_t>(std::floor(center));
        double total = 0.0;
        Taps& t = taps[o];
        for (std::int64_t i = base - 1; i <= base + 2; ++i) {
            const double w = cubic_kernel(static_cast<double>(i) - center);
            if (w == 0.0) continue;
            t.index.push_back(std::clamp<std::int64_t>(i, 0, n - 1));
            t.weight.push_back(w);
            total += w;
        }
        for (auto& w : t.weight) w /= total;
    }
    return taps;
}

// Applies row taps along W then column taps along H, plane by plane.
Tensor resample(const Tensor& x, const std::vector<Taps>& rows, const std::vector<Taps>& cols) {
    if (x.rank() < 2) throw ShapeError("resampling needs at least two axes");
    const std::int64_t h = x.dim(-2), w = x.dim(-1);
    const auto ho = static_cast<std::int64_t>(rows.size()), wo = static_cast<std::int64_t>(cols.size());
    const std::int64_t planes = x.numel() / (h * w);
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = ho;
    out_shape.back() = wo;
    Tensor out(out_shape, x.dtype());
    visit_dtype(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = x.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        std::vector<double> tmp(static_cast<std::size_t>(h * wo));
        for (std::int64_t p = 0; p < planes; ++p) {
            const T* sp = src + p * h * w;
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t xo = 0; xo < wo; ++xo) {
                    const Taps& t = cols[xo];
                    double acc = 0.0;
                    for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * sp[y * w + t.index[k]];
                    tmp[y * wo + xo] = acc;
                }
            }
            T* dp = dst + p * ho * wo;
            for (std::int64_t yo = 0; yo < ho; ++yo) {
                const Taps& t = rows[yo];
                for (std::int64_t xo = 0; xo < wo; ++xo) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < t.index.size(); ++k) acc += t.weight[k] * tmp[t.index[k] * wo + xo];
                    dp[yo * wo + xo] = static_cast<T>(acc);
                }
            }
        }
    });
    return out;
}

}  // namespace

Tensor bicubic_downsample(const Tensor& x, int s) {
    if (s < 1) throw ShapeError("downsampling factor must be positive");
    const std::int64_t h = x.dim(-2), w = x.dim(-1);
    if (h % s != 0 || w % s != 0) {
        throw ShapeError("extents " + std::to_string(h) + "x" + std::to_string(w) + " are not divisible by " +
                         std::to_string(s));
    }
    return resample(x, downsample_taps(h, s), downsample_taps(w, s));
}

Tensor bicubic_upsample(const Tensor& x, int s) {
    if (s < 1) throw ShapeError("upsampling factor must be positive");
    return resample(x, upsample_taps(x.dim(-2), s), upsample_taps(x.dim(-1), s));
}

Tensor degrade_unclamped(const Tensor& hr, int s, double sigma, std::mt19937_64& rng) {
    Tensor lr = bicubic_downsample(hr, s);
    if (sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, sigma);
        visit_dtype(lr.dtype(), [&](auto tag) {
            using T = decltype(tag);
            for (auto& v : lr.mutable_data<T>()) v = static_cast<T>(v + noise(rng));
        });
    }
    return lr;
}

Tensor degrade(const Tensor& hr, int s, double sigma, std::mt19937_64& rng) {
    Tensor lr = degrade_unclamped(hr, s, sigma, rng);
    visit_dtype(lr.dtype(), [&](auto tag) {
        using T = decltype(tag);
        for (auto& v : lr.mutable_data<T>()) v = std::clamp(v, T(0), T(1));
    });
    return lr;
}

SrSample make_sample(const SrImage& image, int s, double sigma, std::mt19937_64& rng) {
    return {image.hr, degrade(image.hr, s, sigma, rng), image.label, image.id};
}

std::vector<PatchOffset> aligned_offsets(std::int64_t h, std::int64_t w, std::int64_t hr_patch, int s) {
    if (hr_patch % s != 0) throw ShapeError("patch size must be a multiple of the scale");
    if (h < hr_patch || w < hr_patch) {
        throw ShapeError("image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                         std::to_string(hr_patch) + " patch");
    }
    std::vector<PatchOffset> out;
    for (std::int64_t y = 0; y + hr_patch <= h; y += s) {
        for (std::int64_t x = 0; x + hr_patch <= w; x += s) out.push_back({y, x, y / s, x / s});
    }
    return out;
}

namespace {

Tensor crop2d(const Tensor& t, std::int64_t y, std::int64_t x, std::int64_t size) {
    const std::int64_t h = t.dim(-2), w = t.dim(-1), planes = t.numel() / (h * w);
    Shape shape = t.shape();
    shape[shape.size() - 2] = size;
    shape.back() = size;
    Tensor out(shape, t.dtype());
    visit_dtype(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* src = t.data<T>().data();
        T* dst = out.mutable_data<T>().data();
        for (std::int64_t p = 0; p < planes; ++p) {
            for (std::int64_t r = 0; r < size; ++r) {
                std::copy_n(src + (p * h + y + r) * w + x, size, dst + (p * size + r) * size);
            }
        }
    });
    return out;
}

}  // namespace

Patch crop_patch(const SrSample& sample, const PatchOffset& o, std::int64_t hr_patch, int s) {
    if (sample.hr.dim(-2) != sample.lr.dim(-2) * s || sample.hr.dim(-1) != sample.lr.dim(-1) * s) {
        throw ShapeError("sample HR extents are not " + std::to_string(s) + "x the LR extents");
    }
    Patch p;
    p.offset = o;
    p.hr = crop2d(sample.hr, o.hr_y, o.hr_x, hr_patch);
    p.lr = crop2d(sample.lr, o.lr_y, o.lr_x, hr_patch / s);
    if (sample.label.defined()) p.label = crop2d(sample.label, o.hr_y, o.hr_x, hr_patch);
    return p;
}

Patch sample_patch(const SrSample& sample, std::int64_t hr_patch, int s, std::mt19937_64& rng) {
    const auto offsets = aligned_offsets(sample.hr.dim(-2), sample.hr.dim(-1), hr_patch, s);
    std::uniform_int_distribution<std::size_t> pick(0, offsets.size() - 1);
    return crop_patch(sample, offsets[pick(rng)], hr_patch, s);
}

// ---------------------------------------------------------------------------

void PhantomSpec::validate() const {
    if (size < 16) throw std::invalid_argument("phantom canvas must be at least 16 pixels");
    if (classes < 2) throw std::invalid_argument("phantoms need at least two classes");
    if (min_inner < 0 || max_inner < min_inner || min_detail < 0 || max_detail < min_detail) {
        throw std::invalid_argument("phantom structure count ranges are inconsistent");
    }
    if (classes > 2 && max_inner == 0) throw std::invalid_argument("class 2 can never be drawn");
    if (classes > 3 && max_detail < classes - 3) throw std::invalid_argument("too few detail blobs for the classes");
    if (texture < 0) throw std::invalid_argument("texture amplitude must be non-negative");
}

namespace {

struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;
    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double u = (dx * cos_t + dy * sin_t) / a;
        const double v = (-dx * sin_t + dy * cos_t) / b;
        return u * u + v * v <= 1.0;
    }
};

Ellipse random_ellipse(std::mt19937_64& rng, double cx, double cy, double spread, double amin, double amax) {
    std::uniform_real_distribution<double> off(-spread, spread), axis(amin, amax), angle(0.0, std::numbers::pi);
    const double t = angle(rng);
    return {cx + off(rng), cy + off(rng), axis(rng), axis(rng), std::cos(t), std::sin(t)};
}

}  // namespace

SrImage generate_phantom(const PhantomSpec& spec, std::int64_t index) {
    spec.validate();
    std::mt19937_64 rng(nn::derive_seed(spec.seed, "phantom." + std::to_string(index)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto count_in = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    // Each layer: shape, class, intensity. Later layers paint over earlier ones.
    struct Layer {
        Ellipse e;
        int cls;
        double intensity;
    };
    std::vector<Layer> layers;
    const Ellipse body = random_ellipse(rng, 0.0, 0.0, 0.08, 0.62, 0.86);
    layers.push_back({body, 1, between(0.32, 0.45)});
    if (spec.classes > 2) {
        const int n = count_in(spec.min_inner, spec.max_inner);
        for (int i = 0; i < n; ++i) {
            layers.push_back({random_ellipse(rng, body.cx, body.cy, 0.38, 0.12, 0.32), 2, between(0.62, 0.78)});
        }
    }
    if (spec.classes > 3) {
        const int n = count_in(spec.min_detail, spec.max_detail);
        for (int i = 0; i < n; ++i) {
            const int cls = 3 + (i % (spec.classes - 3));
            // Alternate bright and dark bands so detail classes stay separable.
            const double lo = (cls % 2 == 1) ? 0.88 : 0.10, hi = (cls % 2 == 1) ? 0.98 : 0.20;
            layers.push_back({random_ellipse(rng, body.cx, body.cy, 0.5, 0.05, 0.13), cls, between(lo, hi)});
        }
    }
    // Low-frequency texture: a few random plane waves.
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 3; ++i) {
        waves.push_back({between(-6, 6), between(-6, 6), between(0, 2 * std::numbers::pi), spec.texture * between(0.5, 1.0)});
    }

    const std::int64_t n = spec.size;
    auto classify = [&](double x, double y, double& intensity) {
        int cls = 0;
        intensity = 0.03;
        for (const auto& l : layers) {
            if (l.cls != 1 && !body.contains(x, y)) continue;
            if (l.e.contains(x, y)) {
                cls = l.cls;
                intensity = l.intensity;
            }
        }
        return cls;
    };
    std::vector<double> img(static_cast<std::size_t>(n * n)), lbl(static_cast<std::size_t>(n * n));
    std::normal_distribution<double> grain(0.0, spec.texture * 0.25);
    for (std::int64_t py = 0; py < n; ++py) {
        for (std::int64_t px = 0; px < n; ++px) {
            // 2x2 supersampling for anti-aliased edges; the label uses the pixel centre.
            double acc = 0.0, tmp = 0.0;
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const double x = ((px + 0.25 + 0.5 * sx) / n) * 2.0 - 1.0;
                    const double y = ((py + 0.25 + 0.5 * sy) / n) * 2.0 - 1.0;
                    classify(x, y, tmp);
                    acc += tmp;
                }
            }
            const double cx = ((px + 0.5) / n) * 2.0 - 1.0, cy = ((py + 0.5) / n) * 2.0 - 1.0;
            const int cls = classify(cx, cy, tmp);
            double v = acc / 4.0;
            if (cls != 0) {
                for (const auto& w : waves) v += w.amp * std::sin(std::numbers::pi * (w.fx * cx + w.fy * cy) + w.phase);
                v += grain(rng);
            }
            img[py * n + px] = std::clamp(v, 0.0, 1.0);
            lbl[py * n + px] = cls;
        }
    }
    SrImage out;
    out.hr = Tensor::from_values({1, n, n}, img, DType::kF32);
    out.label = Tensor::from_values({n, n}, lbl, DType::kF32);
    std::ostringstream id;
    id << std::setw(4) << std::setfill('0') << index;
    out.id = id.str();
    return out;
}

void write_manifest(const std::filesystem::path& split_dir, const DatasetInfo& info) {
    std::ostringstream os;
    os << "count = " << info.count << '\n'
       << "channels = " << info.channels << '\n'
       << "height = " << info.height << '\n'
       << "width = " << info.width << '\n'
       << "classes = " << info.classes << '\n';
    write_file_atomic(split_dir / "manifest.txt", os.str());
}

DatasetInfo read_manifest(const std::filesystem::path& split_dir) {
    std::ifstream is(split_dir / "manifest.txt");
    if (!is) throw FormatError("missing manifest in " + split_dir.string());
    DatasetInfo info;
    std::string line;
    while (std::getline(is, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        key.erase(key.find_last_not_of(' ') + 1);
        const long long v = std::stoll(value);
        if (key == "count") info.count = v;
        else if (key == "channels") info.channels = v;
        else if (key == "height") info.height = v;
        else if (key == "width") info.width = v;
        else if (key == "classes") info.classes = static_cast<int>(v);
    }
    if (info.count < 1) throw FormatError("empty dataset in " + split_dir.string());
    return info;
}

void generate_dataset(const PhantomSpec& spec, std::int64_t count, double test_fraction,
                      const std::filesystem::path& root) {
    spec.validate();
    if (count < 2) throw std::invalid_argument("need at least two phantoms for a train/test split");
    if (test_fraction <= 0.0 || test_fraction >= 1.0) throw std::invalid_argument("test fraction must lie in (0, 1)");
    const auto n_test = std::clamp<std::int64_t>(std::llround(count * test_fraction), 1, count - 1);
    const std::int64_t n_train = count - n_test;
    for (const auto& [split, begin, end] :
         {std::tuple<std::string, std::int64_t, std::int64_t>{"train", 0, n_train}, {"test", n_train, count}}) {
        const auto dir = root / split;
        for (std::int64_t i = begin; i < end; ++i) {
            SrImage img = generate_phantom(spec, i);
            save_tensor(dir / "hr" / (img.id + ".rdt"), img.hr);
            save_tensor(dir / "lbl" / (img.id + ".rdt"), img.label);
        }
        write_manifest(dir, {end - begin, 1, spec.size, spec.size, spec.classes});
    }
}

std::vector<SrImage> load_split(const std::filesystem::path& split_dir) {
    const DatasetInfo info = read_manifest(split_dir);
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(split_dir / "hr")) {
        if (entry.path().extension() == ".rdt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (static_cast<std::int64_t>(files.size()) != info.count) {
        throw FormatError("manifest lists " + std::to_string(info.count) + " images, found " +
                          std::to_string(files.size()));
    }
    std::vector<SrImage> out;
    for (const auto& f : files) {
        SrImage img;
        img.id = f.stem().string();
        img.hr = load_tensor(f);
        const auto lbl = split_dir / "lbl" / f.filename();
        if (std::filesystem::exists(lbl)) img.label = load_tensor(lbl);
        out.push_back(std::move(img));
    }
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

Tensor read_png(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw FormatError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng initialisation failed");
    }
    std::vector<std::uint8_t> pixels;
    std::vector<png_bytep> rows;
    png_uint_32 width = 0, height = 0;
    int depth = 0;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("malformed PNG " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    width = png_get_image_width(png, info);
    height = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);
    const std::size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * height);
    rows.resize(height);
    for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    std::vector<double> v(static_cast<std::size_t>(width) * height);
    for (png_uint_32 y = 0; y < height; ++y) {
        for (png_uint_32 x = 0; x < width; ++x) {
            if (depth == 16) {
                const std::uint8_t* p = rows[y] + 2 * x;
                v[y * width + x] = ((p[0] << 8) | p[1]) / 65535.0;
            } else {
                v[y * width + x] = rows[y][x] / 255.0;
            }
        }
    }
    return Tensor::from_values({1, static_cast<std::int64_t>(height), static_cast<std::int64_t>(width)}, v,
                               DType::kF32);
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
        throw ShapeError("write_png expects [1,H,W] or [3,H,W], got " + to_string(image.shape()));
    }
    const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    const auto v = image.to_vector();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(c * h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const double s = std::clamp(v[(ch * h + y) * w + x], 0.0, 1.0);
                buf[(y * w + x) * c + ch] = static_cast<std::uint8_t>(std::lround(s * 255.0));
            }
        }
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw FormatError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

}  // namespace rdst::data
