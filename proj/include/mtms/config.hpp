#pragma once
// Flat key=value run configuration: optional file, flag overrides on top,
// snapshot written next to the outputs so every run is reproducible.

#include <cstdint>
#include <map>
#include <string>

namespace mtms {

class Config {
public:
    Config() = default;

    // Parses key=value lines; '#' starts a comment, blank lines are skipped.
    static Config from_file(const std::string& path);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // Writes sorted key=value lines.
    void write_snapshot(const std::string& path) const;

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

} // namespace mtms
