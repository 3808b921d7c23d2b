#include "rdst/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace rdst {

const std::vector<ConfigKey>& known_config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"seed", "1", "root of all randomness"},
        {"model.preset", "rdst", "rdst | rdst-e | tiny; explicit model.* keys override the preset"},
        {"model.scale", "4", "upscaling factor s (2, 3 or 4)"},
        {"model.channels", "1", "image channels C"},
        {"model.d", "60", "base width d"},
        {"model.g", "30", "growth rate g"},
        {"model.window", "8", "attention window M"},
        {"model.heads", "6", "attention heads"},
        {"model.mlp_ratio", "2", "STL MLP hidden width multiplier"},
        {"model.stl_per_dstb", "2", "STLs per DSTB (even)"},
        {"model.dstb_per_rdstb", "3", "DSTBs per RDSTB"},
        {"model.n_rdstb", "8", "RDSTB count"},
        {"model.gff", "false", "global feature fusion across RDSTBs"},
        {"model.relpos", "true", "relative position bias in attention"},
        {"model.upsampler", "progressive", "progressive | single | direct"},
        {"model.branch_init", "0.1", "scale on the initial weights of branch-closing layers and the output conv"},
        {"unet.base", "64", "U-Net first-level width"},
        {"unet.levels", "5", "U-Net encoder levels"},
        {"unet.classes", "4", "segmentation classes K, background included"},
        {"unet.blocks", "2", "residual basic blocks per encoder level"},
        {"unet.channels", "1", "U-Net input channels"},
        {"data.dir", "data", "dataset root"},
        {"data.count", "200", "phantoms generated by gen-data"},
        {"data.size", "96", "phantom canvas side in pixels"},
        {"data.classes", "4", "phantom label classes, background included"},
        {"data.test_fraction", "0.2", "held-out share of generated phantoms"},
        {"data.sigma", "0.01", "Gaussian noise sigma after bicubic downsampling"},
        {"data.texture", "0.03", "phantom texture noise amplitude"},
        {"train.out", "runs/rdst", "output directory for checkpoints and logs"},
        {"train.batch", "32", "patches per step"},
        {"train.patch", "96", "HR patch side"},
        {"train.stage1.steps", "2000", "stage-1 steps"},
        {"train.stage1.lr", "2e-4", "stage-1 learning rate"},
        {"train.stage2.steps", "500", "stage-2 steps"},
        {"train.stage2.lr", "1e-4", "stage-2 initial learning rate"},
        {"train.stage2.milestones", "0.5,0.75,0.875", "fractions of stage 2 where the rate halves"},
        {"train.val_every", "0.05", "validation cadence as a fraction of the stage"},
        {"train.val_images", "8", "validation images drawn from the test split"},
        {"train.ckpt_every", "0", "extra checkpoint cadence in steps, 0 = only at validation"},
        {"train.dtype", "f32", "f32 | f64"},
        {"loss.variant", "none", "none | E1..E5 | sumE | D | HRL"},
        {"loss.alpha", "1", "L1 weight"},
        {"loss.lambda", "10", "perceptual weight"},
        {"loss.unet", "", "frozen U-Net checkpoint for perceptual losses"},
        {"seg.steps", "2000", "U-Net training steps"},
        {"seg.lr", "1e-3", "U-Net learning rate"},
        {"seg.batch", "8", "U-Net images per step"},
        {"seg.out", "runs/unet", "U-Net output directory"},
        {"eval.grids", "4", "comparison grids written by eval"},
    };
    return keys;
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool is_known(const std::string& key) {
    for (const auto& k : known_config_keys()) {
        if (k.key == key) return true;
    }
    return false;
}

}  // namespace

Config Config::defaults() {
    Config c;
    for (const auto& k : known_config_keys()) c.values_[k.key] = k.default_value;
    return c;
}

Config Config::parse(const std::string& text, const std::string& origin) {
    Config c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        try {
            c.set(key, trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
}

void Config::set(const std::string& key, const std::string& value) {
    if (!is_known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
}

void Config::merge(const Config& other) {
    for (const auto& [k, v] : other.values_) set(k, v);
}

std::string Config::str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config key '" + key + "' is not set");
    return it->second;
}

long long Config::integer(const std::string& key) const {
    const std::string v = str(key);
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not an integer");
    return out;
}

double Config::real(const std::string& key) const {
    const std::string v = str(key);
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
        return out;
    } catch (const std::logic_error&) {
        throw ConfigError(key + ": '" + v + "' is not a number");
    }
}

bool Config::boolean(const std::string& key) const {
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<double> Config::reals(const std::string& key) const {
    std::vector<double> out;
    std::istringstream is(str(key));
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::logic_error&) {
            throw ConfigError(key + ": '" + item + "' is not a number");
        }
    }
    return out;
}

std::map<std::string, std::string> Config::with_prefix(const std::string& prefix) const {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : values_) {
        if (k.rfind(prefix, 0) == 0) out[k] = v;
    }
    return out;
}

std::string Config::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
    return os.str();
}

}  // namespace rdst
