#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace kpeforge {

/// Sectioned "key = value" configuration with a fixed key set and defaults.
/// Keys are addressed as "section.key". Unknown sections or keys are rejected.
class RunConfig {
public:
    RunConfig();

    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    int getInt(const std::string& key) const;
    double getDouble(const std::string& key) const;
    bool getBool(const std::string& key) const;

    // FNV-1a over the sorted "section.key=value" lines of the given sections
    // (all sections when empty), as 16 hex digits.
    std::string hash(const std::vector<std::string>& sections = {}) const;

    // Every key with its effective value, grouped by section.
    std::string dump() const;

    static const std::vector<std::string>& sections();

private:
    std::map<std::string, std::string> values_;
};

} // namespace kpeforge
