#pragma once
/**
 * @file config.hpp
 * @brief Flat experiment configs: `key = value` lines, dotted keys,
 * optional `[section]` prefixes, `#` comments. Values are numbers,
 * booleans, strings (bare or quoted) or numeric lists `[a, b, ...]`.
 * Every key must be consumed; leftovers are reported as errors.
 */

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <variant>

#include "twv/common.hpp"

namespace twv {

using ConfigValue = std::variant<double, bool, std::string, std::vector<double>>;

class Config {
public:
    static Config parse(const std::string& text, const std::string& origin = "<string>") {
        Config c;
        c.origin_ = origin;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            line = strip_comment(line);
            line = trim(line);
            if (line.empty()) continue;
            const std::string where = origin + ":" + std::to_string(lineno);
            if (line.front() == '[' && line.back() == ']' && line.find('=') == std::string::npos) {
                section = trim(line.substr(1, line.size() - 2));
                require(!section.empty(), ErrorKind::Config, where + ": empty section name");
                continue;
            }
            const auto eq = line.find('=');
            require(eq != std::string::npos, ErrorKind::Config, where + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            require(!key.empty(), ErrorKind::Config, where + ": empty key");
            if (!section.empty()) key = section + "." + key;
            require(!c.values_.count(key), ErrorKind::Config, where + ": duplicate key " + key);
            c.values_[key] = parse_value(trim(line.substr(eq + 1)), where);
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        require(static_cast<bool>(f), ErrorKind::Config, "cannot open config " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path);
    }

    /// Override or add `key=value` (command-line style).
    void set(const std::string& assignment) {
        const auto eq = assignment.find('=');
        require(eq != std::string::npos, ErrorKind::Config, "override must look like key=value: " + assignment);
        values_[trim(assignment.substr(0, eq))] = parse_value(trim(assignment.substr(eq + 1)), "override");
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    double number(const std::string& key) const { return get<double>(key, "a number"); }
    double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

    std::size_t count(const std::string& key, std::size_t fallback) const {
        if (!has(key)) return fallback;
        const double v = number(key);
        require(v >= 0.0 && v == std::floor(v), ErrorKind::Config, key + " must be a nonnegative integer");
        return static_cast<std::size_t>(v);
    }

    bool boolean(const std::string& key, bool fallback) const { return has(key) ? get<bool>(key, "a boolean") : fallback; }

    std::string string(const std::string& key, const std::string& fallback) const {
        if (!has(key)) return fallback;
        used_.insert(key);
        const auto& v = values_.at(key);
        if (const auto* s = std::get_if<std::string>(&v)) return *s;
        throw Error(ErrorKind::Config, origin_ + ": " + key + " must be a string");
    }

    std::vector<double> list(const std::string& key) const {
        used_.insert(key);
        require(has(key), ErrorKind::Config, origin_ + ": missing key " + key);
        const auto& v = values_.at(key);
        if (const auto* l = std::get_if<std::vector<double>>(&v)) return *l;
        if (const auto* d = std::get_if<double>(&v)) return {*d};
        throw Error(ErrorKind::Config, origin_ + ": " + key + " must be a list of numbers");
    }
    std::vector<double> list(const std::string& key, std::vector<double> fallback) const {
        return has(key) ? list(key) : fallback;
    }

    Vec2 point(const std::string& key) const {
        const auto l = list(key);
        require(l.size() == 2, ErrorKind::Config, origin_ + ": " + key + " must be a point [x, y]");
        return {l[0], l[1]};
    }
    Vec2 point(const std::string& key, Vec2 fallback) const { return has(key) ? point(key) : fallback; }

    /// True when the key holds the bare word `auto` (consumes it).
    bool is_auto(const std::string& key) const {
        if (!has(key)) return false;
        const auto* s = std::get_if<std::string>(&values_.at(key));
        if (s && *s == "auto") {
            used_.insert(key);
            return true;
        }
        return false;
    }

    /// Throws listing every key that no accessor asked for.
    void require_all_used() const {
        std::string unknown;
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
        require(unknown.empty(), ErrorKind::Config, origin_ + ": unknown keys: " + unknown);
    }

    const std::map<std::string, ConfigValue>& entries() const { return values_; }

private:
    template <class T>
    T get(const std::string& key, const char* what) const {
        used_.insert(key);
        const auto it = values_.find(key);
        require(it != values_.end(), ErrorKind::Config, origin_ + ": missing key " + key);
        if (const auto* v = std::get_if<T>(&it->second)) return *v;
        throw Error(ErrorKind::Config, origin_ + ": " + key + " must be " + what);
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    static std::string strip_comment(const std::string& s) {
        bool quoted = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') quoted = !quoted;
            if (s[i] == '#' && !quoted) return s.substr(0, i);
        }
        return s;
    }

    static std::optional<double> to_number(const std::string& s) {
        double v = 0.0;
        const char* b = s.data();
        const char* e = b + s.size();
        if (b != e && *b == '+') ++b;
        const auto [ptr, ec] = std::from_chars(b, e, v);
        if (ec != std::errc() || ptr != e) return std::nullopt;
        return v;
    }

    static ConfigValue parse_value(const std::string& raw, const std::string& where) {
        require(!raw.empty(), ErrorKind::Config, where + ": missing value");
        if (raw == "true") return true;
        if (raw == "false") return false;
        if (raw.front() == '"') {
            require(raw.size() >= 2 && raw.back() == '"', ErrorKind::Config, where + ": unterminated string");
            return raw.substr(1, raw.size() - 2);
        }
        if (raw.front() == '[') {
            require(raw.back() == ']', ErrorKind::Config, where + ": unterminated list");
            std::vector<double> out;
            std::stringstream ss(raw.substr(1, raw.size() - 2));
            std::string item;
            while (std::getline(ss, item, ',')) {
                item = trim(item);
                if (item.empty()) continue;
                const auto v = to_number(item);
                require(v.has_value(), ErrorKind::Config, where + ": list entry is not a number: " + item);
                out.push_back(*v);
            }
            return out;
        }
        if (const auto v = to_number(raw)) return *v;
        return raw;
    }

    std::string origin_;
    std::map<std::string, ConfigValue> values_;
    mutable std::set<std::string> used_;
};

}  // namespace twv
