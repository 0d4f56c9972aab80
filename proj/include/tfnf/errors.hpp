#pragma once

#include <stdexcept>
#include <string>

namespace tfnf {

/// Machine-readable failure categories.
///
/// `parse` and `io` are environmental (bad input files, unreadable paths);
/// everything else reports a violated mathematical precondition or a
/// structural failure detected while running the machinery.
enum class Err {
    parse,
    io,
    invalid_params,
    precondition_violated,
    small_divisor,
    resonance_found,
    divergent_series,
    smallness_violated,
    ksigma_too_small,
    degenerate_spectrum,
    window_violation,
    no_equilibrium,
    perturbation_average_nonzero,
    domain_shrink,
    out_of_domain,
    domain_exit,
    step_underflow,
    singular_eigenbasis,
};

/// Single exception type carrying an `Err` code plus a human-readable
/// message that names the violated condition by content.
class Error : public std::runtime_error {
public:
    Error(Err code, const std::string& what) : std::runtime_error(what), code_(code) {}

    Err code() const noexcept { return code_; }

    /// True for failures of user-supplied input (CLI exit 1), false for
    /// violated invariants/preconditions (CLI exit 2).
    bool is_input_error() const noexcept { return code_ == Err::parse || code_ == Err::io; }

private:
    Err code_;
};

inline const char* err_name(Err e) {
    switch (e) {
        case Err::parse: return "parse";
        case Err::io: return "io";
        case Err::invalid_params: return "invalid_params";
        case Err::precondition_violated: return "precondition_violated";
        case Err::small_divisor: return "small_divisor";
        case Err::resonance_found: return "resonance_found";
        case Err::divergent_series: return "divergent_series";
        case Err::smallness_violated: return "smallness_violated";
        case Err::ksigma_too_small: return "ksigma_too_small";
        case Err::degenerate_spectrum: return "degenerate_spectrum";
        case Err::window_violation: return "window_violation";
        case Err::no_equilibrium: return "no_equilibrium";
        case Err::perturbation_average_nonzero: return "perturbation_average_nonzero";
        case Err::domain_shrink: return "domain_shrink";
        case Err::out_of_domain: return "out_of_domain";
        case Err::domain_exit: return "domain_exit";
        case Err::step_underflow: return "step_underflow";
        case Err::singular_eigenbasis: return "singular_eigenbasis";
    }
    return "unknown";
}

}  // namespace tfnf
