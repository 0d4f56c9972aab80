#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <string>

#include "tfnf/errors.hpp"

namespace tfnf {

/// Maximum total number of variables (slow + angle) a series may carry.
inline constexpr int kMaxVars = 8;

/// Combined exponent/wavenumber index (alpha, k) of a Taylor-Fourier term:
/// the first `m` slots hold the Taylor exponents alpha (non-negative), the
/// next `n` slots the Fourier wavenumbers k (any sign).  Unused slots are
/// zero, so ordering and equality are well defined without carrying (m, n).
struct MultiIndex {
    std::array<std::int16_t, kMaxVars> v{};

    friend auto operator<=>(const MultiIndex&, const MultiIndex&) = default;

    /// Total order |alpha|_1 + |k|_1.
    int order() const noexcept {
        int s = 0;
        for (int16_t e : v) s += std::abs(static_cast<int>(e));
        return s;
    }

    static MultiIndex zero() noexcept { return MultiIndex{}; }

    /// Unit index in slot `i` (exponent/wavenumber 1, all others 0).
    static MultiIndex unit(int i) {
        MultiIndex r{};
        r.v.at(static_cast<std::size_t>(i)) = 1;
        return r;
    }

    /// Slot-wise sum; used when multiplying monomials.
    friend MultiIndex operator+(const MultiIndex& a, const MultiIndex& b) {
        MultiIndex r{};
        for (int i = 0; i < kMaxVars; ++i)
            r.v[static_cast<std::size_t>(i)] =
                static_cast<std::int16_t>(a.v[static_cast<std::size_t>(i)] + b.v[static_cast<std::size_t>(i)]);
        return r;
    }

    /// Slot-wise difference; may leave temporarily negative Taylor slots,
    /// callers decide whether that is meaningful (e.g. lattice translation).
    friend MultiIndex operator-(const MultiIndex& a, const MultiIndex& b) {
        MultiIndex r{};
        for (int i = 0; i < kMaxVars; ++i)
            r.v[static_cast<std::size_t>(i)] =
                static_cast<std::int16_t>(a.v[static_cast<std::size_t>(i)] - b.v[static_cast<std::size_t>(i)]);
        return r;
    }

    /// Validates that the index is admissible for series with `m` slow and
    /// `n` angle variables: Taylor slots non-negative, trailing slots zero.
    void validate(int m, int n) const {
        for (int i = 0; i < m; ++i)
            if (v[static_cast<std::size_t>(i)] < 0)
                throw Error(Err::invalid_params, "negative Taylor exponent in multi-index");
        for (int i = m + n; i < kMaxVars; ++i)
            if (v[static_cast<std::size_t>(i)] != 0)
                throw Error(Err::invalid_params, "multi-index uses slots beyond declared variable count");
    }

    /// Renders as "(a1 .. am | k1 .. kn)".
    std::string to_string(int m, int n) const {
        std::string s = "(";
        for (int i = 0; i < m; ++i) {
            if (i) s += ' ';
            s += std::to_string(v[static_cast<std::size_t>(i)]);
        }
        s += " | ";
        for (int i = 0; i < n; ++i) {
            if (i) s += ' ';
            s += std::to_string(v[static_cast<std::size_t>(m + i)]);
        }
        s += ')';
        return s;
    }
};

}  // namespace tfnf
