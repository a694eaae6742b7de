#ifndef MMFV_KV_HPP
#define MMFV_KV_HPP

// Flat key=value maps: model configs in checkpoint metadata, generator
// configs and run configs all use this representation.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <type_traits>
#include <string>
#include <vector>

#include "mmfv/error.hpp"

namespace mmfv::kv {

using Map = std::map<std::string, std::string>;

inline std::string to_string(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string to_string(long long v) { return std::to_string(v); }
inline std::string to_string(long v) { return std::to_string(v); }
inline std::string to_string(int v) { return std::to_string(v); }
inline std::string to_string(bool v) { return v ? "true" : "false"; }

template <class T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ",";
        out += to_string(values[i]);
    }
    return out;
}

inline double parse_double(const std::string& key, const std::string& s) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
    return v;
}

inline long long parse_int(const std::string& key, const std::string& s) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + s + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(item);
    return out;
}

inline std::vector<long long> parse_int_list(const std::string& key, const std::string& s) {
    std::vector<long long> out;
    for (const auto& item : split(s)) out.push_back(parse_int(key, item));
    return out;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split(s)) out.push_back(parse_double(key, item));
    return out;
}

/// Reads known keys out of `kv` into typed fields; remembers which keys were
/// consumed so leftovers can be rejected.
class Reader {
public:
    explicit Reader(Map kv) : kv_(std::move(kv)) {}

    template <class T>
    void read(const std::string& key, T& field) {
        auto it = kv_.find(key);
        used_.push_back(key);
        if (it == kv_.end()) return;
        const std::string& s = it->second;
        if constexpr (std::is_same_v<T, bool>) {
            field = parse_bool(key, s);
        } else if constexpr (std::is_integral_v<T>) {
            field = static_cast<T>(parse_int(key, s));
        } else if constexpr (std::is_floating_point_v<T>) {
            field = parse_double(key, s);
        } else if constexpr (std::is_same_v<T, std::string>) {
            field = s;
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            field = parse_double_list(key, s);
        } else {
            using E = typename T::value_type;
            field.clear();
            for (long long v : parse_int_list(key, s)) field.push_back(static_cast<E>(v));
        }
    }

    /// Throws ConfigError naming the first key that no read() asked for.
    void reject_unknown() const {
        for (const auto& [k, v] : kv_)
            if (std::find(used_.begin(), used_.end(), k) == used_.end())
                throw ConfigError("unknown config key '" + k + "'");
    }

private:
    Map kv_;
    std::vector<std::string> used_;
};

/// Parses INI-style "key = value" text; '#' and ';' start comments, section
/// headers are ignored.
inline Map parse(std::istream& in, const std::string& source = "config") {
    Map kv;
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find_first_of("#;"); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline std::string format(const Map& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

} // namespace mmfv::kv

#endif
