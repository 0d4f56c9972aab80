#pragma once

#include <complex>
#include <cstdio>
#include <string>

namespace tfnf {

/// Shortest round-trip decimal rendering of a double ("%.17g" is exact for
/// IEEE binary64; reports and serialized files must be reproducible
/// byte-for-byte across runs).
inline std::string fnum(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Fixed-precision rendering for human-facing report lines.
inline std::string fnum(double x, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", precision, x);
    return buf;
}

inline std::string fnum(std::complex<double> z) {
    std::string s = fnum(z.real());
    s += (z.imag() < 0 ? " - " : " + ");
    s += fnum(std::abs(z.imag()));
    s += "i";
    return s;
}

inline std::string fnum(std::complex<double> z, int precision) {
    std::string s = fnum(z.real(), precision);
    s += (z.imag() < 0 ? " - " : " + ");
    s += fnum(std::abs(z.imag()), precision);
    s += "i";
    return s;
}

}  // namespace tfnf
