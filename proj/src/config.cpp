#include "tfnf/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace tfnf {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Err::io, "cannot open config file: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_text(buf.str(), path);
}

Config Config::parse_text(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(Err::parse, origin + ":" + std::to_string(lineno) +
                                        ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw Error(Err::parse, origin + ":" + std::to_string(lineno) + ": empty key");
        if (cfg.values_.count(key))
            throw Error(Err::parse,
                        origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        cfg.values_[key] = value;
    }
    return cfg;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

std::string Config::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
        throw Error(Err::parse, origin_ + ": missing required key '" + key + "'");
    return it->second;
}

double Config::require_double(const std::string& key) const {
    const std::string v = raw(key);
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw Error(Err::parse, origin_ + ": key '" + key + "' is not a number: '" + v + "'");
    return x;
}

double Config::get_double(const std::string& key, double fallback) const {
    return has(key) ? require_double(key) : fallback;
}

int Config::require_int(const std::string& key) const {
    const std::string v = raw(key);
    char* end = nullptr;
    const long x = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw Error(Err::parse, origin_ + ": key '" + key + "' is not an integer: '" + v + "'");
    return static_cast<int>(x);
}

int Config::get_int(const std::string& key, int fallback) const {
    return has(key) ? require_int(key) : fallback;
}

std::string Config::require_string(const std::string& key) const { return raw(key); }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? raw(key) : fallback;
}

std::vector<std::string> Config::keys() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
}

}  // namespace tfnf
