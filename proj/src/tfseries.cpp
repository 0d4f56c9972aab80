#include "tfnf/tfseries.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "tfnf/rng.hpp"

namespace tfnf {

namespace {

/// Neumaier variant of Kahan summation: tracks a running compensation so
/// norm and evaluation sums are reproducible and accurate to ~1 ulp even
/// for long, badly scaled term lists.
struct NeumaierSum {
    double s = 0.0;
    double c = 0.0;

    void add(double x) noexcept {
        const double t = s + x;
        if (std::abs(s) >= std::abs(x))
            c += (s - t) + x;
        else
            c += (x - t) + s;
        s = t;
    }

    double value() const noexcept { return s + c; }
};

bool is_zero(Coeff c) noexcept { return c.real() == 0.0 && c.imag() == 0.0; }

double binom(int nn, int kk) {
    double r = 1.0;
    for (int i = 1; i <= kk; ++i) r *= static_cast<double>(nn - kk + i) / static_cast<double>(i);
    return r;
}

void check_var_counts(int m, int n) {
    if (m < 0 || n < 0 || m + n > kMaxVars || m + n == 0)
        throw Error(Err::invalid_params,
                    "variable counts must satisfy m >= 0, n >= 0, 0 < m+n <= " +
                        std::to_string(kMaxVars));
}

}  // namespace

// --- TFComponent -------------------------------------------------------------

TFComponent::TFComponent(int m, int n) : m_(m), n_(n) { check_var_counts(m, n); }

Coeff TFComponent::at(const MultiIndex& idx) const {
    auto it = terms_.find(idx);
    return it == terms_.end() ? Coeff(0.0, 0.0) : it->second;
}

void TFComponent::set(const MultiIndex& idx, Coeff c) {
    idx.validate(m_, n_);
    if (is_zero(c))
        terms_.erase(idx);
    else
        terms_[idx] = c;
}

void TFComponent::add(const MultiIndex& idx, Coeff c) {
    idx.validate(m_, n_);
    auto [it, inserted] = terms_.try_emplace(idx, c);
    if (!inserted) it->second += c;
    if (is_zero(it->second)) terms_.erase(it);
}

int TFComponent::max_order() const noexcept {
    int best = -1;
    for (const auto& [idx, c] : terms_) best = std::max(best, idx.order());
    return best;
}

void TFComponent::scale_in_place(Coeff c) {
    if (is_zero(c)) {
        terms_.clear();
        return;
    }
    for (auto& [idx, v] : terms_) v *= c;
}

void TFComponent::add_in_place(const TFComponent& other, Coeff factor) {
    other.require_shape(m_, n_, "component addition");
    for (const auto& [idx, v] : other.terms_) add(idx, v * factor);
}

void TFComponent::require_shape(int m, int n, const char* what) const {
    if (m_ != m || n_ != n)
        throw Error(Err::invalid_params,
                    std::string(what) + ": variable layout mismatch (have " + std::to_string(m_) +
                        "+" + std::to_string(n_) + ", need " + std::to_string(m) + "+" +
                        std::to_string(n) + ")");
}

// --- Lattice -----------------------------------------------------------------

Lattice Lattice::explicit_list(std::vector<MultiIndex> indices, int m, int n) {
    check_var_counts(m, n);
    // Members live in Z^{m+n}: negative entries are legal even in Taylor
    // slots (membership is tested on translated indices), but slots beyond
    // the variable count must be unused.
    for (const auto& idx : indices)
        for (int i = m + n; i < kMaxVars; ++i)
            if (idx.v[static_cast<std::size_t>(i)] != 0)
                throw Error(Err::invalid_params,
                            "lattice index uses variable slots beyond the declared count");
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    Lattice lat(Kind::explicit_list);
    lat.list_ = std::move(indices);
    return lat;
}

bool Lattice::contains(const MultiIndex& idx, int m, int n) const {
    switch (kind_) {
        case Kind::zero:
            return idx.order() == 0;
        case Kind::fourier_average:
            // The subgroup Z^m x {0}: any Taylor part (signs included, since
            // translated indices are tested), zero wavenumber.
            for (int j = 0; j < n; ++j)
                if (idx.v[static_cast<std::size_t>(m + j)] != 0) return false;
            return true;
        case Kind::full:
            return true;
        case Kind::explicit_list:
            return std::binary_search(list_.begin(), list_.end(), idx);
    }
    return false;
}

std::vector<MultiIndex> Lattice::enumerate(int m, int n, int max_order) const {
    std::vector<MultiIndex> out;
    for (const auto& idx : enumerate_indices(m, n, max_order))
        if (contains(idx, m, n)) out.push_back(idx);
    return out;
}

std::string Lattice::describe() const {
    switch (kind_) {
        case Kind::zero: return "{0}";
        case Kind::fourier_average: return "zero-wavenumber sublattice";
        case Kind::full: return "full lattice";
        case Kind::explicit_list:
            return "explicit set of " + std::to_string(list_.size()) + " indices";
    }
    return "?";
}

// --- TFVectorField -------------------------------------------------------------

TFVectorField::TFVectorField(int m, int n) : m_(m), n_(n) {
    check_var_counts(m, n);
    comp_.assign(static_cast<std::size_t>(m + n), TFComponent(m, n));
}

const TFComponent& TFVectorField::component(int h) const {
    return comp_.at(static_cast<std::size_t>(h));
}

TFComponent& TFVectorField::component(int h) { return comp_.at(static_cast<std::size_t>(h)); }

void TFVectorField::set_component(int h, TFComponent c) {
    c.require_shape(m_, n_, "set_component");
    comp_.at(static_cast<std::size_t>(h)) = std::move(c);
}

int TFVectorField::max_order() const noexcept {
    int best = -1;
    for (const auto& c : comp_) best = std::max(best, c.max_order());
    return best;
}

std::size_t TFVectorField::term_count() const noexcept {
    std::size_t total = 0;
    for (const auto& c : comp_) total += c.size();
    return total;
}

void TFVectorField::scale_in_place(Coeff c) {
    for (auto& comp : comp_) comp.scale_in_place(c);
}

void TFVectorField::add_in_place(const TFVectorField& other, Coeff factor) {
    other.require_shape(m_, n_, "field addition");
    for (int h = 0; h < components(); ++h)
        comp_[static_cast<std::size_t>(h)].add_in_place(other.component(h), factor);
    order_cap_ = combine_caps(order_cap_, other.order_cap_);
    truncated_ = truncated_ || other.truncated_;
}

void TFVectorField::require_shape(int m, int n, const char* what) const {
    if (m_ != m || n_ != n)
        throw Error(Err::invalid_params,
                    std::string(what) + ": field layout mismatch (have " + std::to_string(m_) +
                        "+" + std::to_string(n_) + ", need " + std::to_string(m) + "+" +
                        std::to_string(n) + ")");
}

int combine_caps(int a, int b) noexcept {
    if (a == kNoCap) return b;
    if (b == kNoCap) return a;
    return std::min(a, b);
}

// --- norms ---------------------------------------------------------------------

double component_norm(const TFComponent& z, const Domain& u) {
    if (!u.valid())
        throw Error(Err::invalid_params, "component norm needs a valid domain");
    NeumaierSum sum;
    for (const auto& [idx, c] : z.terms()) {
        int a = 0;
        int k = 0;
        for (int i = 0; i < z.m(); ++i) a += idx.v[static_cast<std::size_t>(i)];
        for (int j = 0; j < z.n(); ++j)
            k += std::abs(static_cast<int>(idx.v[static_cast<std::size_t>(z.m() + j)]));
        sum.add(std::abs(c) * std::pow(u.eps, static_cast<double>(a)) *
                std::exp(static_cast<double>(k) * u.s));
    }
    return sum.value();
}

double weighted_field_norm(const TFVectorField& x, const DomainWeights& uw) {
    uw.validate(x.components());
    NeumaierSum sum;
    for (int h = 0; h < x.components(); ++h)
        sum.add(component_norm(x.component(h), uw.domain) / uw.weights[static_cast<std::size_t>(h)]);
    return sum.value();
}

double weighted_field_norm(const TFVectorField& x, const Domain& u, const Radii& w) {
    return weighted_field_norm(x, DomainWeights::block(u, w, x.m(), x.n()));
}

double sup_field_norm(const TFVectorField& x, const DomainWeights& uw, int samples,
                      std::uint64_t seed) {
    uw.validate(x.components());
    SplitMix64 rng(seed);
    const double two_pi = 8.0 * std::atan(1.0);
    double best = 0.0;
    std::vector<Coeff> zeta(static_cast<std::size_t>(x.m()));
    std::vector<Coeff> phi(static_cast<std::size_t>(x.n()));
    for (int sample = 0; sample < samples; ++sample) {
        for (auto& z : zeta) {
            const double theta = rng.uniform(0.0, two_pi);
            z = uw.domain.eps * Coeff(std::cos(theta), std::sin(theta));
        }
        for (auto& p : phi) {
            const double re = rng.uniform(0.0, two_pi);
            const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
            p = Coeff(re, sign * uw.domain.s);
        }
        for (int h = 0; h < x.components(); ++h) {
            const double v =
                std::abs(evaluate(x.component(h), zeta, phi)) / uw.weights[static_cast<std::size_t>(h)];
            best = std::max(best, v);
        }
    }
    return best;
}

// --- calculus --------------------------------------------------------------------

TFComponent partial_derivative(const TFComponent& z, int var, int p) {
    if (var < 0 || var >= z.vars())
        throw Error(Err::invalid_params, "derivative variable out of range");
    if (p < 1) throw Error(Err::invalid_params, "derivative order must be >= 1");
    TFComponent out(z.m(), z.n());
    const auto slot = static_cast<std::size_t>(var);
    if (var < z.m()) {
        for (const auto& [idx, c] : z.terms()) {
            const int a = idx.v[slot];
            if (a < p) continue;
            double fall = 1.0;
            for (int q = 0; q < p; ++q) fall *= static_cast<double>(a - q);
            MultiIndex shifted = idx;
            shifted.v[slot] = static_cast<std::int16_t>(a - p);
            out.add(shifted, c * fall);
        }
    } else {
        for (const auto& [idx, c] : z.terms()) {
            const int k = idx.v[slot];
            if (k == 0) continue;
            Coeff factor(1.0, 0.0);
            const Coeff ik(0.0, static_cast<double>(k));
            for (int q = 0; q < p; ++q) factor *= ik;
            out.add(idx, c * factor);
        }
    }
    return out;
}

TFComponent multiply(const TFComponent& a, const TFComponent& b, int order_cap, bool* truncated) {
    b.require_shape(a.m(), a.n(), "series product");
    TFComponent out(a.m(), a.n());
    for (const auto& [ia, ca] : a.terms()) {
        for (const auto& [ib, cb] : b.terms()) {
            const MultiIndex idx = ia + ib;
            if (order_cap != kNoCap && idx.order() > order_cap) {
                if (truncated) *truncated = true;
                continue;
            }
            out.add(idx, ca * cb);
        }
    }
    return out;
}

TFVectorField lie_bracket(const TFVectorField& y, const TFVectorField& x) {
    x.require_shape(y.m(), y.n(), "lie_bracket");
    const int cap = combine_caps(y.order_cap(), x.order_cap());
    TFVectorField out(y.m(), y.n());
    out.set_order_cap(cap);
    bool truncated = y.truncated() || x.truncated();
    for (int h = 0; h < y.components(); ++h) {
        TFComponent acc(y.m(), y.n());
        for (int j = 0; j < y.components(); ++j) {
            if (!x.component(h).empty() && !y.component(j).empty())
                acc.add_in_place(multiply(partial_derivative(x.component(h), j), y.component(j),
                                          cap, &truncated));
            if (!y.component(h).empty() && !x.component(j).empty())
                acc.add_in_place(multiply(partial_derivative(y.component(h), j), x.component(j),
                                          cap, &truncated),
                                 Coeff(-1.0, 0.0));
        }
        out.set_component(h, std::move(acc));
    }
    out.set_truncated(truncated);
    return out;
}

// --- projections -------------------------------------------------------------------

namespace {

template <typename KeepTerm>
TFVectorField filter_field(const TFVectorField& x, KeepTerm&& keep) {
    TFVectorField out(x.m(), x.n());
    out.set_order_cap(x.order_cap());
    out.set_truncated(x.truncated());
    for (int h = 0; h < x.components(); ++h) {
        TFComponent c(x.m(), x.n());
        for (const auto& [idx, v] : x.component(h).terms())
            if (keep(h, idx)) c.set(idx, v);
        out.set_component(h, std::move(c));
    }
    return out;
}

bool in_translated_lattice(const Lattice& lattice, const MultiIndex& idx, int h, int m, int n) {
    MultiIndex base = idx;
    if (h < m) base = base - MultiIndex::unit(h);
    return lattice.contains(base, m, n);
}

}  // namespace

TFVectorField project_order(const TFVectorField& x, int K) {
    return filter_field(x, [K](int, const MultiIndex& idx) { return idx.order() <= K; });
}

TFVectorField project_lattice(const TFVectorField& x, const Lattice& lattice) {
    return filter_field(x, [&](int h, const MultiIndex& idx) {
        return in_translated_lattice(lattice, idx, h, x.m(), x.n());
    });
}

TFVectorField project_lattice_complement(const TFVectorField& x, const Lattice& lattice) {
    return filter_field(x, [&](int h, const MultiIndex& idx) {
        return !in_translated_lattice(lattice, idx, h, x.m(), x.n());
    });
}

UVSplit ultraviolet_split(const TFVectorField& x, int K) {
    if (K < 1) throw Error(Err::invalid_params, "ultraviolet split needs K >= 1");
    UVSplit split{
        filter_field(x, [K](int, const MultiIndex& idx) { return idx.order() < 2 * K; }),
        filter_field(x, [K](int, const MultiIndex& idx) { return idx.order() >= 2 * K; })};
    return split;
}

// --- evaluation & substitution --------------------------------------------------

Coeff evaluate(const TFComponent& z, const std::vector<Coeff>& zeta,
               const std::vector<Coeff>& phi) {
    if (static_cast<int>(zeta.size()) != z.m() || static_cast<int>(phi.size()) != z.n())
        throw Error(Err::invalid_params, "evaluation point does not match variable layout");
    NeumaierSum re;
    NeumaierSum im;
    for (const auto& [idx, c] : z.terms()) {
        Coeff term = c;
        for (int i = 0; i < z.m(); ++i) {
            const int a = idx.v[static_cast<std::size_t>(i)];
            for (int q = 0; q < a; ++q) term *= zeta[static_cast<std::size_t>(i)];
        }
        Coeff phase(0.0, 0.0);
        for (int j = 0; j < z.n(); ++j)
            phase += static_cast<double>(idx.v[static_cast<std::size_t>(z.m() + j)]) *
                     phi[static_cast<std::size_t>(j)];
        term *= std::exp(Coeff(0.0, 1.0) * phase);
        re.add(term.real());
        im.add(term.imag());
    }
    return {re.value(), im.value()};
}

namespace {

void shift_slow_recurse(const MultiIndex& idx, const std::vector<Coeff>& delta, int var,
                        MultiIndex beta, Coeff acc, int m, TFComponent& out) {
    if (var == m) {
        out.add(beta, acc);
        return;
    }
    const auto slot = static_cast<std::size_t>(var);
    const int a = idx.v[slot];
    if (delta[slot] == Coeff(0.0, 0.0)) {
        beta.v[slot] = static_cast<std::int16_t>(a);
        shift_slow_recurse(idx, delta, var + 1, beta, acc, m, out);
        return;
    }
    Coeff dpow(1.0, 0.0);
    for (int b = a; b >= 0; --b) {
        // contribution of choosing exponent b in (zeta + delta)^a
        beta.v[slot] = static_cast<std::int16_t>(b);
        shift_slow_recurse(idx, delta, var + 1, beta, acc * binom(a, b) * dpow, m, out);
        dpow *= delta[slot];
    }
}

}  // namespace

TFComponent shift_slow(const TFComponent& z, const std::vector<Coeff>& delta) {
    if (static_cast<int>(delta.size()) != z.m())
        throw Error(Err::invalid_params, "shift vector length does not match slow variable count");
    TFComponent out(z.m(), z.n());
    for (const auto& [idx, c] : z.terms())
        shift_slow_recurse(idx, delta, 0, idx, c, z.m(), out);
    return out;
}

TFComponent substitute_slow_linear(const TFComponent& z,
                                   const std::vector<std::vector<Coeff>>& bmat) {
    const int m = z.m();
    if (static_cast<int>(bmat.size()) != m)
        throw Error(Err::invalid_params, "substitution matrix must be m x m");
    for (const auto& row : bmat)
        if (static_cast<int>(row.size()) != m)
            throw Error(Err::invalid_params, "substitution matrix must be m x m");

    TFComponent out(z.m(), z.n());
    using Poly = std::map<MultiIndex, Coeff>;
    for (const auto& [idx, c] : z.terms()) {
        Poly poly{{MultiIndex::zero(), Coeff(1.0, 0.0)}};
        for (int i = 0; i < m; ++i) {
            const int a = idx.v[static_cast<std::size_t>(i)];
            for (int rep = 0; rep < a; ++rep) {
                Poly next;
                for (const auto& [pidx, pc] : poly) {
                    for (int j = 0; j < m; ++j) {
                        const Coeff bij = bmat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                        if (is_zero(bij)) continue;
                        next[pidx + MultiIndex::unit(j)] += pc * bij;
                    }
                }
                poly = std::move(next);
            }
        }
        MultiIndex kpart = MultiIndex::zero();
        for (int j = 0; j < z.n(); ++j)
            kpart.v[static_cast<std::size_t>(m + j)] = idx.v[static_cast<std::size_t>(m + j)];
        for (const auto& [pidx, pc] : poly) out.add(pidx + kpart, c * pc);
    }
    return out;
}

TFVectorField pullback_linear_slow(const TFVectorField& x,
                                   const std::vector<std::vector<Coeff>>& bmat,
                                   const std::vector<std::vector<Coeff>>& bmat_inv) {
    const int m = x.m();
    if (static_cast<int>(bmat_inv.size()) != m)
        throw Error(Err::invalid_params, "inverse substitution matrix must be m x m");
    TFVectorField out(x.m(), x.n());
    out.set_order_cap(x.order_cap());
    out.set_truncated(x.truncated());

    std::vector<TFComponent> slow_sub;
    slow_sub.reserve(static_cast<std::size_t>(m));
    for (int h = 0; h < m; ++h) slow_sub.push_back(substitute_slow_linear(x.component(h), bmat));

    for (int h = 0; h < m; ++h) {
        TFComponent acc(x.m(), x.n());
        for (int j = 0; j < m; ++j)
            acc.add_in_place(slow_sub[static_cast<std::size_t>(j)],
                             bmat_inv[static_cast<std::size_t>(h)][static_cast<std::size_t>(j)]);
        out.set_component(h, std::move(acc));
    }
    for (int h = m; h < x.components(); ++h)
        out.set_component(h, substitute_slow_linear(x.component(h), bmat));
    return out;
}

// --- index enumeration -------------------------------------------------------------

namespace {

void enumerate_recurse(int m, int n, int max_order, int slot, int used, MultiIndex idx,
                       std::vector<MultiIndex>& out) {
    if (slot == m + n) {
        out.push_back(idx);
        return;
    }
    const int rem = max_order - used;
    if (slot < m) {
        for (int a = 0; a <= rem; ++a) {
            idx.v[static_cast<std::size_t>(slot)] = static_cast<std::int16_t>(a);
            enumerate_recurse(m, n, max_order, slot + 1, used + a, idx, out);
        }
    } else {
        for (int k = -rem; k <= rem; ++k) {
            idx.v[static_cast<std::size_t>(slot)] = static_cast<std::int16_t>(k);
            enumerate_recurse(m, n, max_order, slot + 1, used + std::abs(k), idx, out);
        }
    }
}

}  // namespace

std::vector<MultiIndex> enumerate_indices(int m, int n, int max_order) {
    check_var_counts(m, n);
    if (max_order < 0) throw Error(Err::invalid_params, "enumeration order must be >= 0");
    std::vector<MultiIndex> out;
    enumerate_recurse(m, n, max_order, 0, 0, MultiIndex::zero(), out);
    return out;
}

// --- field arithmetic ---------------------------------------------------------------

TFVectorField add(const TFVectorField& a, const TFVectorField& b) {
    TFVectorField out = a;
    out.add_in_place(b);
    return out;
}

TFVectorField sub(const TFVectorField& a, const TFVectorField& b) {
    TFVectorField out = a;
    out.add_in_place(b, Coeff(-1.0, 0.0));
    return out;
}

TFVectorField scale(const TFVectorField& a, Coeff c) {
    TFVectorField out = a;
    out.scale_in_place(c);
    return out;
}

}  // namespace tfnf
