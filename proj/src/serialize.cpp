#include "tfnf/serialize.hpp"

#include <fstream>
#include <sstream>

#include "tfnf/textio.hpp"

namespace tfnf {

void write_field(std::ostream& os, const TFVectorField& x) {
    os << "field " << x.m() << ' ' << x.n() << ' ' << x.order_cap() << ' '
       << (x.truncated() ? 1 : 0) << '\n';
    for (int h = 0; h < x.components(); ++h) {
        for (const auto& [idx, c] : x.component(h).terms()) {
            os << (h + 1);
            for (int i = 0; i < x.m() + x.n(); ++i) os << ' ' << idx.v[static_cast<std::size_t>(i)];
            os << ' ' << fnum(c.real()) << ' ' << fnum(c.imag()) << '\n';
        }
    }
}

namespace {

[[noreturn]] void parse_fail(int line, const std::string& what) {
    throw Error(Err::parse, "field file line " + std::to_string(line) + ": " + what);
}

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

int parse_int(const std::string& tok, int line, const char* what) {
    char* end = nullptr;
    const long v = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0')
        parse_fail(line, std::string(what) + " is not an integer: '" + tok + "'");
    return static_cast<int>(v);
}

double parse_double(const std::string& tok, int line, const char* what) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        parse_fail(line, std::string(what) + " is not a number: '" + tok + "'");
    return v;
}

}  // namespace

TFVectorField read_field(std::istream& is) {
    std::string line;
    int lineno = 0;
    // locate header
    int m = 0, n = 0, cap = kNoCap, truncated = 0;
    bool have_header = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto toks = tokenize(line);
        if (toks.size() != 5 || toks[0] != "field")
            parse_fail(lineno, "expected 'field m n cap truncated'");
        m = parse_int(toks[1], lineno, "variable count m");
        n = parse_int(toks[2], lineno, "variable count n");
        cap = parse_int(toks[3], lineno, "order cap");
        truncated = parse_int(toks[4], lineno, "truncated flag");
        have_header = true;
        break;
    }
    if (!have_header) throw Error(Err::parse, "field file: missing header");
    TFVectorField x(m, n);
    x.set_order_cap(cap);
    x.set_truncated(truncated != 0);
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto toks = tokenize(line);
        if (static_cast<int>(toks.size()) != 1 + m + n + 2)
            parse_fail(lineno, "expected 'h " + std::string(m + n > 1 ? "index..." : "index") +
                                   " re im' (" + std::to_string(1 + m + n + 2) + " tokens)");
        const int h = parse_int(toks[0], lineno, "component number");
        if (h < 1 || h > m + n) parse_fail(lineno, "component number out of range");
        MultiIndex idx;
        for (int i = 0; i < m + n; ++i)
            idx.v[static_cast<std::size_t>(i)] = static_cast<std::int16_t>(
                parse_int(toks[static_cast<std::size_t>(1 + i)], lineno, "index entry"));
        const double re = parse_double(toks[static_cast<std::size_t>(1 + m + n)], lineno, "re");
        const double im = parse_double(toks[static_cast<std::size_t>(2 + m + n)], lineno, "im");
        try {
            x.component(h - 1).add(idx, Coeff(re, im));
        } catch (const Error& e) {
            parse_fail(lineno, e.what());
        }
    }
    return x;
}

void save_field(const std::string& path, const TFVectorField& x) {
    std::ofstream os(path);
    if (!os) throw Error(Err::io, "cannot open for writing: " + path);
    write_field(os, x);
    if (!os) throw Error(Err::io, "write failed: " + path);
}

TFVectorField load_field(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Err::io, "cannot open for reading: " + path);
    return read_field(is);
}

}  // namespace tfnf
