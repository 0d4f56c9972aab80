#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tfnf/errors.hpp"

namespace tfnf {

/// Analyticity domain of a Taylor-Fourier series: a polydisc of radius
/// `eps` in every slow variable times a strip of half-width `s` about the
/// real angles.  Both parameters must be positive for a non-trivial domain.
struct Domain {
    double eps = 0.0;  ///< common polydisc radius for the slow block
    double s = 0.0;    ///< common strip half-width for the angle block

    bool valid() const noexcept { return eps > 0.0 && s > 0.0; }

    /// Shrinks by `(rho, sigma)`; throws when nothing would remain.
    Domain shrink(double rho, double sigma) const {
        Domain d{eps - rho, s - sigma};
        if (!d.valid())
            throw Error(Err::domain_shrink, "domain shrink leaves no analyticity margin");
        return d;
    }
};

/// Shrink increment (rho, sigma) applied to a `Domain`; also reused as the
/// per-block weight scale of a weighted field norm (slow components get
/// weight rho, angle components weight sigma).
struct Radii {
    double rho = 0.0;
    double sigma = 0.0;

    bool valid() const noexcept { return rho > 0.0 && sigma > 0.0; }

    Radii scaled(double c) const noexcept { return Radii{rho * c, sigma * c}; }
};

inline Domain shrink(const Domain& u, const Radii& w) { return u.shrink(w.rho, w.sigma); }
inline Domain shrink(const Domain& u, const Radii& w, int times) {
    Domain d = u;
    for (int i = 0; i < times; ++i) d = shrink(d, w);
    return d;
}
inline Domain grow(const Domain& u, const Radii& w) { return Domain{u.eps + w.rho, u.s + w.sigma}; }

/// Per-component weight vector for the weighted field norm together with
/// the evaluation domain.  `weights[h]` divides component h's majorant.
struct DomainWeights {
    Domain domain;
    std::vector<double> weights;

    void validate(int components) const {
        if (!domain.valid())
            throw Error(Err::invalid_params, "norm domain must have positive radius and strip width");
        if (static_cast<int>(weights.size()) != components)
            throw Error(Err::invalid_params, "weight vector length does not match component count");
        for (double w : weights)
            if (!(w > 0.0)) throw Error(Err::invalid_params, "norm weights must be positive");
    }

    /// Standard block weights: rho for the m slow components, sigma for the
    /// n angle components.
    static DomainWeights block(const Domain& u, const Radii& w, int m, int n) {
        DomainWeights dw;
        dw.domain = u;
        dw.weights.assign(static_cast<std::size_t>(m), w.rho);
        dw.weights.insert(dw.weights.end(), static_cast<std::size_t>(n), w.sigma);
        return dw;
    }
};

/// Exponential decay data of the ultraviolet remainder when passing from
/// domain `u` to `u` shrunk by `w`: a term of total order K loses at least
/// a factor exp(-K*tau), and the coarser, closed-form rate sigma_bar =
/// min(sigma, rho/eps) satisfies sigma_bar <= tau.
struct TailDecay {
    double tau = 0.0;
    double sigma_bar = 0.0;
};

inline TailDecay tail_decay_rate(const Domain& u, const Radii& w) {
    if (!u.valid() || !w.valid())
        throw Error(Err::invalid_params, "tail decay rate needs a valid domain and positive radii");
    if (w.rho >= u.eps || w.sigma >= u.s)
        throw Error(Err::domain_shrink, "tail decay rate: shrink must stay inside the domain");
    TailDecay t;
    t.tau = std::min(w.sigma, std::log(1.0 / (1.0 - w.rho / u.eps)));
    t.sigma_bar = std::min(w.sigma, w.rho / u.eps);
    return t;
}

/// Variant aware of the variable split: with no slow variables (m = 0) the
/// polydisc rate drops out of both minima, and with no angles (n = 0) the
/// strip rate does.  Matches `tail_decay_rate(u, w)` when both blocks are
/// present.
inline TailDecay tail_decay_rate(const Domain& u, const Radii& w, int m, int n) {
    if (m < 0 || n < 0 || m + n <= 0)
        throw Error(Err::invalid_params, "tail decay rate: need at least one variable");
    if (m > 0 && n > 0) return tail_decay_rate(u, w);
    if (!u.valid() || !w.valid())
        throw Error(Err::invalid_params, "tail decay rate needs a valid domain and positive radii");
    TailDecay t;
    if (n == 0) {
        if (w.rho >= u.eps)
            throw Error(Err::domain_shrink, "tail decay rate: shrink must stay inside the domain");
        t.tau = std::log(1.0 / (1.0 - w.rho / u.eps));
        t.sigma_bar = w.rho / u.eps;
    } else {
        if (w.sigma >= u.s)
            throw Error(Err::domain_shrink, "tail decay rate: shrink must stay inside the domain");
        t.tau = w.sigma;
        t.sigma_bar = w.sigma;
    }
    return t;
}

}  // namespace tfnf
