#include "rdst/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rdst/detail/dispatch.hpp"

namespace rdst {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace {

constexpr char kTensorMagic[4] = {'R', 'D', 'T', '1'};
constexpr char kCkptMagic[8] = {'R', 'D', 'S', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("truncated tensor stream");
    return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kTensorMagic, 4);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.dtype()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    detail::visit_dtype(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = t.data<T>();
        os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
    });
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("bad tensor magic");
    const auto code = read_pod<std::uint32_t>(is);
    if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code));
    const auto rank = read_pod<std::uint32_t>(is);
    if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) {
        const auto v = read_pod<std::uint64_t>(is);
        if (v == 0 || v > (1ull << 40)) throw FormatError("implausible tensor extent");
        e = static_cast<std::int64_t>(v);
    }
    Tensor t(shape, static_cast<DType>(code));
    detail::visit_dtype(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        if (!is.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()))) {
            throw FormatError("truncated tensor payload");
        }
    });
    return t;
}

std::string tensor_bytes(const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    return os.str();
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, tensor_bytes(t)); }

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    return read_tensor(is);
}

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw FormatError("checkpoint has no tensor " + name);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return true;
    }
    return false;
}

void Checkpoint::put_params(const std::string& prefix, const ParamStore& params) {
    for (const auto& [name, t] : params.entries()) add(prefix + name, t);
}

void Checkpoint::take_params(const std::string& prefix, ParamStore& params) const {
    for (auto& [name, t] : params.entries()) {
        const Tensor& src = get(prefix + name);
        if (src.shape() != t.shape()) {
            throw FormatError("checkpoint tensor " + prefix + name + " has shape " + to_string(src.shape()) +
                              ", model expects " + to_string(t.shape()));
        }
        t = src.to(t.dtype());
        t.set_requires_grad(true);
    }
}

std::string Checkpoint::to_bytes() const {
    std::string payload;
    std::ostringstream manifest;
    for (const auto& [k, v] : meta) {
        if (k.find_first_of(" \n=") != std::string::npos || v.find('\n') != std::string::npos) {
            throw FormatError("manifest key/value not representable: " + k);
        }
        manifest << "meta." << k << " = " << v << '\n';
    }
    for (const auto& [name, t] : tensors) {
        if (name.find_first_of(" \n") != std::string::npos) throw FormatError("tensor name has whitespace: " + name);
        std::string rec = tensor_bytes(t);
        manifest << "tensor " << name << ' ' << payload.size() << ' ' << rec.size() << '\n';
        payload += rec;
    }
    const std::string text = manifest.str();
    std::ostringstream os(std::ios::binary);
    os.write(kCkptMagic, 8);
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint64_t>(os, text.size());
    os << text << payload;
    return os.str();
}

Checkpoint Checkpoint::from_bytes(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCkptMagic, 8) != 0) throw FormatError("not a checkpoint file");
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto len = read_pod<std::uint64_t>(is);
    const std::size_t base = 8 + 4 + 8;
    if (base + len > bytes.size()) throw FormatError("truncated checkpoint manifest");
    std::istringstream manifest(bytes.substr(base, len));
    const std::size_t data_start = base + len;

    Checkpoint ck;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.rfind("meta.", 0) == 0) {
            const auto eq = line.find(" = ");
            if (eq == std::string::npos) throw FormatError("malformed manifest line: " + line);
            ck.meta[line.substr(5, eq - 5)] = line.substr(eq + 3);
        } else if (line.rfind("tensor ", 0) == 0) {
            std::istringstream ls(line.substr(7));
            std::string name;
            std::uint64_t offset = 0, size = 0;
            if (!(ls >> name >> offset >> size)) throw FormatError("malformed manifest line: " + line);
            if (data_start + offset + size > bytes.size()) throw FormatError("tensor " + name + " out of range");
            std::istringstream rec(bytes.substr(data_start + offset, size), std::ios::binary);
            ck.tensors.emplace_back(name, read_tensor(rec));
        } else if (!line.empty()) {
            throw FormatError("malformed manifest line: " + line);
        }
    }
    return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_atomic(path, to_bytes()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return from_bytes(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw FormatError("cannot write " + tmp.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw FormatError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string bytes_hash(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string file_hash(const std::filesystem::path& path) { return bytes_hash(read_file(path)); }

}  // namespace rdst
