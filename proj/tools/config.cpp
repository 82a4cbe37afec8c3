#include "config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace kr {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::vector<std::string> split_list(const std::string& v) {
    std::string spaced = v;
    std::replace(spaced.begin(), spaced.end(), ',', ' ');
    std::istringstream in(spaced);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

double parse_double(const std::string& key, const std::string& raw) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(raw, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: '" + raw + "'");
    }
    if (trim(raw.substr(pos)) != "")
        throw ConfigError("config key '" + key + "': trailing text in number: '" + raw + "'");
    return v;
}

long long parse_ll(const std::string& key, const std::string& raw) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(raw, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: '" + raw + "'");
    }
    if (trim(raw.substr(pos)) != "")
        throw ConfigError("config key '" + key + "': trailing text in integer: '" + raw + "'");
    return v;
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str(), path);
}

Config Config::from_text(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t cut = line.find_first_of("#;");
        if (cut != std::string::npos) line.erase(cut);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        cfg.insert(key, value, lineno);
    }
    return cfg;
}

void Config::insert(const std::string& key, const std::string& value, int line) {
    for (const auto& kv : items_)
        if (kv.first == key)
            throw ConfigError(origin_ + ":" + std::to_string(line) + ": duplicate key '" + key + "'");
    items_.emplace_back(key, value);
}

void Config::apply_override(const std::string& assignment) {
    std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    std::string key = trim(assignment.substr(0, eq));
    std::string value = trim(assignment.substr(eq + 1));
    for (auto& kv : items_) {
        if (kv.first == key) {
            kv.second = value;
            return;
        }
    }
    items_.emplace_back(key, value);
}

bool Config::has(const std::string& key) const {
    requested_.insert(key);
    for (const auto& kv : items_)
        if (kv.first == key) return true;
    return false;
}

std::string Config::raw(const std::string& key) const {
    requested_.insert(key);
    for (const auto& kv : items_)
        if (kv.first == key) return kv.second;
    return "";
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? raw(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    std::string v = lower(raw(key));
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': not a boolean: '" + raw(key) + "'");
}

double Config::get_double(const std::string& key, double fallback) const {
    return has(key) ? parse_double(key, raw(key)) : fallback;
}

long long Config::get_ll(const std::string& key, long long fallback) const {
    return has(key) ? parse_ll(key, raw(key)) : fallback;
}

int Config::get_int(const std::string& key, int fallback) const {
    long long v = get_ll(key, fallback);
    if (v < -2147483648LL || v > 2147483647LL)
        throw ConfigError("config key '" + key + "': out of int range");
    return static_cast<int>(v);
}

std::vector<double> Config::get_doubles(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& tok : split_list(raw(key))) out.push_back(parse_double(key, tok));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

std::vector<long long> Config::get_lls(const std::string& key, std::vector<long long> fallback) const {
    if (!has(key)) return fallback;
    std::vector<long long> out;
    for (const auto& tok : split_list(raw(key))) out.push_back(parse_ll(key, tok));
    if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
    return out;
}

void Config::finish() const {
    std::string unknown;
    for (const auto& kv : items_) {
        if (requested_.count(kv.first)) continue;
        if (!unknown.empty()) unknown += ", ";
        unknown += "'" + kv.first + "'";
    }
    if (!unknown.empty())
        throw ConfigError("unknown config key(s) in " + (origin_.empty() ? "config" : origin_) +
                          ": " + unknown);
}

}  // namespace kr
