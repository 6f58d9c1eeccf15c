#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace neurove {

/// Flat dotted-key configuration: one `key = value` per line, `#` comments.
/// Resolution order is defaults <- file <- command-line overrides; the fully
/// resolved map is serialized (sorted) as the reproducibility receipt before
/// any computation runs.
class RunConfig {
public:
    RunConfig() = default;

    static RunConfig from_file(const std::filesystem::path& path);
    static RunConfig from_string(const std::string& text);

    void set(const std::string& key, const std::string& value);
    void merge(const RunConfig& overrides);  // overrides win
    bool has(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    std::string serialize() const;  // sorted key = value lines
    void write_receipt(const std::filesystem::path& path) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

}  // namespace neurove
