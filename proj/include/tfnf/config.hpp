#pragma once

#include <map>
#include <string>
#include <vector>

#include "tfnf/errors.hpp"

namespace tfnf {

/// Flat key = value configuration file ('#' starts a comment, blank lines
/// ignored).  All lookups are typed; missing required keys and malformed
/// values raise Err::parse so the CLI reports them as input errors.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_text(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const;

    double require_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    int require_int(const std::string& key) const;
    int get_int(const std::string& key, int fallback) const;
    std::string require_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;

    /// Keys in sorted order (for deterministic echoing in reports).
    std::vector<std::string> keys() const;

private:
    std::string raw(const std::string& key) const;

    std::map<std::string, std::string> values_;
    std::string origin_;
};

}  // namespace tfnf
