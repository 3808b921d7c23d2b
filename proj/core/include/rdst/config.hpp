#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace rdst {

class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
    std::string key;
    std::string default_value;
    std::string help;
};

/// Every recognised key with its default. Unknown keys are rejected.
const std::vector<ConfigKey>& known_config_keys();

/// Flat `key = value` configuration. `#` starts a comment; blank lines are
/// ignored. Values are kept as text and converted on access.
class Config {
   public:
    /// Defaults for every known key.
    static Config defaults();
    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::filesystem::path& path);

    /// Throws ConfigError for unknown keys.
    void set(const std::string& key, const std::string& value);
    /// Applies `key=value` overrides in order.
    void merge(const Config& other);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string str(const std::string& key) const;
    long long integer(const std::string& key) const;
    double real(const std::string& key) const;
    bool boolean(const std::string& key) const;
    std::vector<double> reals(const std::string& key) const;

    /// Keys with a common prefix, e.g. "model." for a checkpoint manifest.
    std::map<std::string, std::string> with_prefix(const std::string& prefix) const;
    const std::map<std::string, std::string>& values() const { return values_; }
    std::string to_text() const;

   private:
    std::map<std::string, std::string> values_;
};

}  // namespace rdst
