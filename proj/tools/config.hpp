#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kr {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value store parsed from sectioned text. A `[section]` header
// prefixes the keys that follow as "section.key"; `#` and `;` start comments.
// Getters record every key they are asked about (present or not), and
// finish() rejects any stored key that was never requested, so a misspelled
// key can never silently fall back to a default.
class Config {
public:
    static Config from_file(const std::string& path);
    static Config from_text(const std::string& text, const std::string& origin);

    // "key=value" from the command line; replaces or appends.
    void apply_override(const std::string& assignment);

    bool empty() const { return items_.empty(); }
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long long get_ll(const std::string& key, long long fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
    std::vector<long long> get_lls(const std::string& key, std::vector<long long> fallback) const;

    // Throws listing every key that no getter asked about.
    void finish() const;

    // Stored pairs in insertion order, for the run-record echo.
    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

private:
    std::string raw(const std::string& key) const;  // marks requested; "" if absent
    void insert(const std::string& key, const std::string& value, int line);

    std::string origin_;
    std::vector<std::pair<std::string, std::string>> items_;
    mutable std::set<std::string> requested_;
};

}  // namespace kr
