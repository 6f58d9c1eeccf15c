#include "neurove/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace neurove {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string body = trim(line.substr(0, line.find('#')));
        if (body.empty()) continue;
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: missing '=' on line " + std::to_string(line_no));
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty()) throw std::runtime_error("config: empty key on line " + std::to_string(line_no));
        cfg.kv_[key] = value;
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) { kv_[key] = value; }

void RunConfig::merge(const RunConfig& overrides) {
    for (const auto& [k, v] : overrides.kv_) kv_[k] = v;
}

bool RunConfig::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config: key '" + key + "' is not a number: " + it->second);
    }
}

std::int64_t RunConfig::get_int(const std::string& key, std::int64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("config: key '" + key + "' is not an integer: " + it->second);
    }
}

std::uint64_t RunConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
    const std::int64_t v = get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw std::runtime_error("config: key '" + key + "' must be non-negative");
    return static_cast<std::uint64_t>(v);
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "on") return true;
    if (it->second == "false" || it->second == "0" || it->second == "off") return false;
    throw std::runtime_error("config: key '" + key + "' is not a boolean: " + it->second);
}

std::string RunConfig::serialize() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << '\n';
    return os.str();
}

void RunConfig::write_receipt(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write receipt " + path.string());
    os << serialize();
    if (!os) throw std::runtime_error("config: receipt write failed " + path.string());
}

}  // namespace neurove
