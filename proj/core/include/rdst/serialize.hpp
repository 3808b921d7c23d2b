#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rdst/param_store.hpp"
#include "rdst/tensor.hpp"

namespace rdst {

class FormatError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// "RDT1", u32 dtype (0 = f32, 1 = f64), u32 rank, rank x u64 extents,
// little-endian payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);
std::string tensor_bytes(const Tensor& t);

/// Named tensors plus a key-value manifest.
///
/// File layout: 8-byte magic "RDSTCKPT", u32 format version, u64 manifest
/// length, manifest text, then the tensor records back to back. The manifest
/// holds `meta.<key> = <value>` lines and one `tensor <name> <offset> <bytes>`
/// line per record, offsets relative to the first record.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add(const std::string& name, const Tensor& t) { tensors.emplace_back(name, t); }
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    /// Copies every tensor named `prefix + param name` into `params`.
    void put_params(const std::string& prefix, const ParamStore& params);
    void take_params(const std::string& prefix, ParamStore& params) const;

    std::string to_bytes() const;
    static Checkpoint from_bytes(const std::string& bytes);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

/// FNV-1a 64 over a file's bytes, hex encoded.
std::string file_hash(const std::filesystem::path& path);
std::string bytes_hash(const std::string& bytes);

}  // namespace rdst
