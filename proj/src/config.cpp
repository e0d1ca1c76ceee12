#include "mtms/config.hpp"

#include "mtms/errors.hpp"

#include <cstdlib>
#include <fstream>

namespace mtms {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

} // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("config: cannot open " + path);
    Config cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config: " + path + ":" + std::to_string(lineno) +
                             ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw UsageError("config: " + path + ":" + std::to_string(lineno) + ": empty key");
        }
        cfg.values_[key] = value;
    }
    return cfg;
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const char* text = it->second.c_str();
    char* end = nullptr;
    const double v = std::strtod(text, &end);
    if (end == text || *end != '\0') {
        throw UsageError("config: key '" + key + "' is not a number: " + it->second);
    }
    return v;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const char* text = it->second.c_str();
    char* end = nullptr;
    const std::int64_t v = std::strtoll(text, &end, 10);
    if (end == text || *end != '\0') {
        throw UsageError("config: key '" + key + "' is not an integer: " + it->second);
    }
    return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const char* text = it->second.c_str();
    char* end = nullptr;
    const std::uint64_t v = std::strtoull(text, &end, 10);
    if (end == text || *end != '\0') {
        throw UsageError("config: key '" + key + "' is not an unsigned integer: " + it->second);
    }
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("config: key '" + key + "' is not a boolean: " + v);
}

void Config::write_snapshot(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw UsageError("config: cannot write snapshot " + path);
    for (const auto& [key, value] : values_) {
        out << key << '=' << value << '\n';
    }
}

} // namespace mtms
