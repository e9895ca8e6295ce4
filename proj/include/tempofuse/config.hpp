#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace tempofuse {

/// Flat key/value configuration read from a TOML-style text file:
/// `key = value` lines, `[section]` headers that prefix keys with
/// "section.", `#` comments, optional double quotes around strings and
/// comma-separated lists (optionally in brackets).
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key, double fallback);
    long long get_int(const std::string& key, long long fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback);

    /// Throws ConfigError naming every key that was never read.
    void reject_unused() const;

    /// Every key with its resolved value (including defaults that were
    /// requested), sorted, one `key = value` per line.
    std::string echo() const;

private:
    std::string origin_;
    std::map<std::string, std::string> values_;
    std::map<std::string, int> lines_;
    mutable std::set<std::string> used_;
    std::map<std::string, std::string> resolved_;
};

}  // namespace tempofuse
