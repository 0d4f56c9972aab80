#include "tfnf/normalform.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "tfnf/textio.hpp"

namespace tfnf {

namespace {

constexpr double kE = 2.718281828459045235360287471353;

void require_freq_shape(const Frequencies& freq) {
    if (freq.m() < 0 || freq.n() < 0 || freq.m() + freq.n() <= 0 ||
        freq.m() + freq.n() > kMaxVars)
        throw Error(Err::invalid_params, "frequency vector has an unsupported variable count");
}

void require_field_shape(const Frequencies& freq, const TFVectorField& x, const char* what) {
    x.require_shape(freq.m(), freq.n(), what);
}

std::string index_text(const MultiIndex& idx, int m, int n) { return idx.to_string(m, n); }

}  // namespace

// --- Frequencies ---------------------------------------------------------------

Coeff Frequencies::pairing(const MultiIndex& base) const {
    const int mm = m(), nn = n();
    Coeff acc(0.0, 0.0);
    for (int i = 0; i < mm; ++i) {
        const double a = static_cast<double>(base.v[static_cast<std::size_t>(i)]);
        if (a != 0.0) acc += lambda[static_cast<std::size_t>(i)] * a;
    }
    double kdot = 0.0;
    for (int j = 0; j < nn; ++j)
        kdot += omega[static_cast<std::size_t>(j)] *
                static_cast<double>(base.v[static_cast<std::size_t>(mm + j)]);
    acc += Coeff(0.0, kdot);
    return acc;
}

Coeff Frequencies::divisor(const MultiIndex& idx, int h) const {
    MultiIndex base = idx;
    if (h < m()) base = idx - MultiIndex::unit(h);
    return -pairing(base);
}

TFVectorField Frequencies::vector_field() const {
    require_freq_shape(*this);
    TFVectorField x(m(), n());
    for (int i = 0; i < m(); ++i)
        if (lambda[static_cast<std::size_t>(i)] != Coeff(0.0, 0.0))
            x.component(i).set(MultiIndex::unit(i), lambda[static_cast<std::size_t>(i)]);
    for (int j = 0; j < n(); ++j)
        if (omega[static_cast<std::size_t>(j)] != 0.0)
            x.component(m() + j).set(MultiIndex::zero(), Coeff(omega[static_cast<std::size_t>(j)], 0.0));
    return x;
}

double Frequencies::magnitude() const noexcept {
    double s = 0.0;
    for (const Coeff& l : lambda) s += std::abs(l);
    for (double o : omega) s += std::abs(o);
    return s;
}

// --- nonresonance scan ------------------------------------------------------------

namespace {

struct ScanState {
    const Frequencies* freq = nullptr;
    const Lattice* lattice = nullptr;
    double gamma = 0.0;
    int K = 0;
    int m = 0, n = 0;
    double worst = std::numeric_limits<double>::infinity();
    MultiIndex worst_index{};
    MultiIndex current{};

    void visit(const Coeff& pairing_value) {
        if (lattice->contains(current, m, n)) return;
        const double v = std::abs(pairing_value);
        if (v < gamma) {
            throw Error(Err::resonance_found,
                        "near-resonant divisor |" + fnum(v, 6) + "| < gamma = " + fnum(gamma, 6) +
                            " at base index " + index_text(current, m, n));
        }
        if (v < worst) {
            worst = v;
            worst_index = current;
        }
    }
};

/// Recursive scan over all base indices that can occur as divisor
/// arguments: slow entries >= -1 with at most one -1 slot (a translated
/// index (alpha, k) - e_h has exactly that shape), any angle signs, total
/// order <= K.  `acc` carries the partial frequency pairing.
void scan_bases(ScanState& st, int slot, int budget, bool used_negative, Coeff acc) {
    const int total = st.m + st.n;
    if (slot == total) {
        st.visit(acc);
        return;
    }
    const bool slow = slot < st.m;
    const std::size_t us = static_cast<std::size_t>(slot);
    if (slow) {
        const Coeff l = st.freq->lambda[us];
        for (int a = used_negative ? 0 : -1; a <= budget; ++a) {
            if (a == 0 && budget >= 0) {
                st.current.v[us] = 0;
                scan_bases(st, slot + 1, budget, used_negative, acc);
            } else if (a != 0 && std::abs(a) <= budget) {
                st.current.v[us] = static_cast<std::int16_t>(a);
                scan_bases(st, slot + 1, budget - std::abs(a), used_negative || a < 0,
                           acc + l * static_cast<double>(a));
            }
        }
        st.current.v[us] = 0;
    } else {
        const double o = st.freq->omega[static_cast<std::size_t>(slot - st.m)];
        for (int k = -budget; k <= budget; ++k) {
            st.current.v[us] = static_cast<std::int16_t>(k);
            scan_bases(st, slot + 1, budget - std::abs(k), used_negative,
                       acc + Coeff(0.0, o * static_cast<double>(k)));
        }
        st.current.v[us] = 0;
    }
}

/// Enumerates wavenumbers k in Z^n with |k|_1 <= budget, calling visit on
/// each (used by the all-lambda-zero fast path, where the pairing depends
/// on k alone).
void scan_wavenumbers(ScanState& st, int slot, int budget, double kdot) {
    if (slot == st.n) {
        st.visit(Coeff(0.0, kdot));
        return;
    }
    const std::size_t us = static_cast<std::size_t>(st.m + slot);
    const double o = st.freq->omega[static_cast<std::size_t>(slot)];
    for (int k = -budget; k <= budget; ++k) {
        st.current.v[us] = static_cast<std::int16_t>(k);
        scan_wavenumbers(st, slot + 1, budget - std::abs(k), kdot + o * static_cast<double>(k));
    }
    st.current.v[us] = 0;
}

}  // namespace

NonresonanceCertificate check_nonresonant(const Frequencies& freq, double gamma,
                                          const Lattice& lattice, int K) {
    require_freq_shape(freq);
    if (!(gamma > 0.0)) throw Error(Err::invalid_params, "nonresonance scan needs gamma > 0");
    if (K < 0) throw Error(Err::invalid_params, "nonresonance scan needs a finite order K >= 0");

    ScanState st;
    st.freq = &freq;
    st.lattice = &lattice;
    st.gamma = gamma;
    st.K = K;
    st.m = freq.m();
    st.n = freq.n();

    bool lambda_zero = true;
    for (const Coeff& l : freq.lambda)
        if (l != Coeff(0.0, 0.0)) lambda_zero = false;

    if (lattice.kind() == Lattice::Kind::full) {
        // Nothing lies outside the lattice; the scan is vacuous.
    } else if (lambda_zero && lattice.kind() != Lattice::Kind::explicit_list) {
        // The pairing collapses to i * omega.k: one representative per
        // wavenumber suffices.  Membership of (0, k) agrees with membership
        // of every (beta, k) for the kind-based lattices, except that the
        // zero lattice additionally exposes the k = 0, beta != 0 bases,
        // whose pairing vanishes identically.
        if (lattice.kind() == Lattice::Kind::zero && st.m >= 1 && K >= 1) {
            throw Error(Err::resonance_found,
                        "zero divisor at base index " +
                            index_text(MultiIndex::unit(0), st.m, st.n) +
                            ": all slow exponents vanish, so every purely slow index is resonant");
        }
        scan_wavenumbers(st, 0, K, 0.0);
        if (lattice.kind() == Lattice::Kind::zero) {
            // k = 0 was visited through the representative 0, which the zero
            // lattice contains; with m = 0 no other base shares it.
        }
    } else {
        scan_bases(st, 0, K, false, Coeff(0.0, 0.0));
    }

    NonresonanceCertificate cert;
    cert.gamma = gamma;
    cert.K = K;
    cert.lattice = lattice;
    cert.worst_value = st.worst;
    cert.worst_index = st.worst_index;
    return cert;
}

bool check_lambda_resonant(const Frequencies& freq, const Lattice& lattice, int order_cap) {
    require_freq_shape(freq);
    const double tol = 1e-12 * std::max(freq.magnitude(), 1e-300);
    switch (lattice.kind()) {
        case Lattice::Kind::zero:
            return true;
        case Lattice::Kind::fourier_average:
            // Spanned by the slow unit vectors: resonant iff every lambda_i
            // vanishes.
            for (const Coeff& l : freq.lambda)
                if (std::abs(l) > tol) return false;
            return true;
        case Lattice::Kind::full:
            // Spanned by all unit vectors: resonant iff the whole frequency
            // vector vanishes.
            for (const Coeff& l : freq.lambda)
                if (std::abs(l) > tol) return false;
            for (double o : freq.omega)
                if (std::abs(o) > tol) return false;
            return true;
        case Lattice::Kind::explicit_list: {
            (void)order_cap;  // finite lists are checked exhaustively
            for (const MultiIndex& idx : lattice.members()) {
                const double scale = std::max(1, idx.order());
                if (std::abs(freq.pairing(idx)) > tol * scale) return false;
            }
            return true;
        }
    }
    return false;
}

// --- homological equation -----------------------------------------------------------

TFVectorField solve_homological(const Frequencies& freq, const TFVectorField& z,
                                const Lattice& lattice, int K, double gamma) {
    require_freq_shape(freq);
    require_field_shape(freq, z, "solve_homological");
    if (!(gamma > 0.0)) throw Error(Err::invalid_params, "homological solve needs gamma > 0");
    const int m = freq.m(), n = freq.n();

    TFVectorField y(m, n);
    y.set_order_cap(z.order_cap());
    y.set_truncated(z.truncated());
    for (int h = 0; h < z.components(); ++h) {
        for (const auto& [idx, c] : z.component(h).terms()) {
            MultiIndex base = idx;
            if (h < m) base = idx - MultiIndex::unit(h);
            if (lattice.contains(base, m, n))
                throw Error(Err::precondition_violated,
                            "right-hand side has a resonant term (component " +
                                std::to_string(h + 1) + ", index " + index_text(idx, m, n) +
                                "); project it out before solving");
            if (K >= 0 && idx.order() > K)
                throw Error(Err::precondition_violated,
                            "right-hand side has a term of order " +
                                std::to_string(idx.order()) + " above the cutoff " +
                                std::to_string(K));
            const Coeff d = -freq.pairing(base);
            const double ad = std::abs(d);
            if (ad < gamma)
                throw Error(Err::small_divisor,
                            "divisor |" + fnum(ad, 6) + "| < gamma = " + fnum(gamma, 6) +
                                " at component " + std::to_string(h + 1) + ", index " +
                                index_text(idx, m, n));
            y.component(h).set(idx, c / d);
        }
    }
    return y;
}

// --- Lie series ------------------------------------------------------------------

LieSeriesResult lie_series_apply(const TFVectorField& y, const TFVectorField& w_field,
                                 const Domain& u, const Radii& w, const LieSeriesOptions& opts) {
    y.require_shape(w_field.m(), w_field.n(), "lie_series_apply");
    if (opts.start_order < 0)
        throw Error(Err::invalid_params, "lie series start order must be >= 0");
    if (!(opts.rel_tol > 0.0))
        throw Error(Err::invalid_params, "lie series tolerance must be positive");

    LieSeriesResult res;
    const Domain u_plus = grow(u, w);
    const double y_norm = weighted_field_norm(y, u_plus, w);
    const double q = kE * y_norm;
    res.q = q;
    if (q >= 1.0)
        throw Error(Err::divergent_series,
                    "Lie series does not contract: e*[[Y]] = " + fnum(q, 6) + " >= 1");

    const double w_norm = weighted_field_norm(w_field, u, w);

    // Largest power retained a priori: the smallest M with the geometric
    // tail bound q^M/(1-q) below tolerance.  The adaptive per-term bound
    // below usually stops earlier.
    int M;
    if (opts.max_terms >= 0) {
        M = opts.max_terms;
    } else if (q == 0.0 || w_norm == 0.0) {
        M = opts.start_order + 1;
    } else {
        const double target = opts.rel_tol * (1.0 - q);
        M = static_cast<int>(std::ceil(std::log(target) / std::log(q))) + 1;
        M = std::clamp(M, opts.start_order + 1, 1000);
    }

    TFVectorField acc(w_field.m(), w_field.n());
    acc.set_order_cap(combine_caps(y.order_cap(),
                                   combine_caps(w_field.order_cap(), opts.order_cap)));
    acc.set_truncated(y.truncated() || w_field.truncated());
    if (opts.start_order == 0) acc.add_in_place(w_field);

    TFVectorField power = w_field;  // L_Y^k W, unscaled
    if (opts.order_cap != kNoCap)
        power.set_order_cap(combine_caps(power.order_cap(), opts.order_cap));
    double factorial = 1.0;
    bool exhausted = w_field.empty();
    int k = 0;
    double retained_scale = (opts.start_order == 0) ? w_norm : 0.0;

    if (exhausted) {
        res.field = acc;
        res.tail_bound = 0.0;
        res.terms_used = 1;
        res.exhausted = true;
        return res;
    }

    double tail = 0.0;
    bool tail_resolved = false;
    for (k = 1; k < M; ++k) {
        power = lie_bracket(y, power);
        if (opts.order_cap != kNoCap) {
            TFVectorField capped = project_order(power, opts.order_cap);
            capped.set_order_cap(power.order_cap());
            capped.set_truncated(power.truncated() || capped.term_count() != power.term_count());
            power = capped;
        }
        if (power.empty()) {
            exhausted = true;
            tail = 0.0;
            tail_resolved = true;
            break;
        }
        factorial *= static_cast<double>(k);
        const double term_norm = weighted_field_norm(power, u, w) / factorial;
        if (k >= opts.start_order) {
            acc.add_in_place(power, Coeff(1.0 / factorial, 0.0));
            retained_scale = std::max(retained_scale, term_norm);
        }
        if (k >= opts.start_order && q < 1.0) {
            // Bound on the dropped tail, in terms of the last computed
            // iterate: sum_{k' > k} [[L^{k'} W]]/k'! <= term_norm * q/(1-q),
            // using [[L^{k'} W]] <= (k'-k)! q^{k'-k} [[L^k W]] and
            // (k'-k)! k! <= k'!.
            const double adaptive_tail = term_norm * q / (1.0 - q);
            if (opts.max_terms < 0 && adaptive_tail <= opts.rel_tol * retained_scale) {
                tail = adaptive_tail;
                tail_resolved = true;
                ++k;
                break;
            }
        }
    }
    if (!tail_resolved) {
        // A-priori geometric bound from the first omitted power.
        const double classic = (q > 0.0) ? std::pow(q, static_cast<double>(k)) / (1.0 - q) * w_norm
                                         : 0.0;
        double adaptive = std::numeric_limits<double>::infinity();
        if (k > std::max(opts.start_order, 0) && !power.empty())
            adaptive = weighted_field_norm(power, u, w) / factorial * q / (1.0 - q);
        tail = std::min(classic, adaptive);
    }

    res.field = acc;
    res.tail_bound = tail;
    res.terms_used = k;
    res.exhausted = exhausted;
    return res;
}

// --- ledger -----------------------------------------------------------------------

void Ledger::add(const std::string& step, const std::string& label, double claimed,
                 double measured) {
    LedgerRow row;
    row.step = step;
    row.label = label;
    row.claimed = claimed;
    row.measured = measured;
    row.pass = measured <= claimed;
    rows.push_back(std::move(row));
}

void Ledger::append(const Ledger& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

bool Ledger::all_pass() const noexcept {
    for (const LedgerRow& r : rows)
        if (!r.pass) return false;
    return true;
}

std::string Ledger::to_text() const {
    std::string out = "step    label                                                claimed        measured       pass\n";
    char buf[256];
    for (const LedgerRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%-7s %-52s %-14s %-14s %s\n", r.step.c_str(),
                      r.label.c_str(), fnum(r.claimed, 6).c_str(), fnum(r.measured, 6).c_str(),
                      r.pass ? "PASS" : "FAIL");
        out += buf;
    }
    return out;
}

// --- one normalization step ----------------------------------------------------------

IterationOutcome iteration_step(const Frequencies& freq, const TFVectorField& g,
                                const TFVectorField& p, const Domain& u, const Radii& w,
                                const Lattice& lattice, int K, double gamma,
                                const IterationOptions& opts) {
    require_freq_shape(freq);
    require_field_shape(freq, p, "iteration_step perturbation");
    require_field_shape(freq, g, "iteration_step normal-form correction");
    if (K < 1) throw Error(Err::invalid_params, "iteration step needs a cutoff K >= 1");
    if (!(gamma > 0.0)) throw Error(Err::invalid_params, "iteration step needs gamma > 0");
    const int m = freq.m(), n = freq.n();

    const Domain u1 = shrink(u, w);   // u - w
    const Domain u2 = shrink(u1, w);  // u - 2w
    const TailDecay td = tail_decay_rate(u, w, m, n);
    const std::string& SL = opts.step_label;

    IterationOutcome out;
    Ledger& led = out.ledger;

    const double p_norm_u = weighted_field_norm(p, u, w);
    const double p_norm_u1 = weighted_field_norm(p, u1, w);
    const double q0 = kE * p_norm_u / gamma;
    out.p_norm = p_norm_u;
    out.q0 = q0;
    led.add(SL, "smallness e*[[P]]/gamma < 1", 1.0, q0);
    if (!(q0 < 1.0))
        throw Error(Err::smallness_violated,
                    "iteration step: e*[[P]]/gamma = " + fnum(q0, 6) + " is not < 1");

    if (!g.empty()) {
        TFVectorField g_proj = project_lattice(project_order(g, 2 * K - 1), lattice);
        if (weighted_field_norm(sub(g, g_proj), u, w) != 0.0)
            throw Error(Err::precondition_violated,
                        "normal-form correction must equal its own resonant truncation");
    }

    // Split P into its resonant part (absorbed into G), the nonresonant
    // low-order part (removed by the generator), and the ultraviolet tail
    // (merely transported).
    const UVSplit split = ultraviolet_split(p, K);
    TFVectorField p_bar = project_lattice(split.low, lattice);
    TFVectorField p_tilde = sub(split.low, p_bar);
    TFVectorField rhs = scale(p_tilde, Coeff(-1.0, 0.0));
    TFVectorField y = solve_homological(freq, rhs, lattice, 2 * K - 1, gamma);

    const double y_norm = weighted_field_norm(y, u, w);
    led.add(SL, "generator [[Y]] <= [[P]]/gamma", p_norm_u / gamma, y_norm);
    led.add(SL, "close to identity [[Y]] <= [[P]]/gamma", p_norm_u / gamma, y_norm);

    const TFVectorField n_field = freq.vector_field();
    {
        const TFVectorField resid = add(lie_bracket(y, n_field), p_tilde);
        const double resid_norm = weighted_field_norm(resid, u, w);
        const double rhs_norm = weighted_field_norm(p_tilde, u, w);
        led.add(SL, "homological residual <= 1e-10*[[rhs]]", 1e-10 * rhs_norm, resid_norm);
    }

    const double uv_norm_u1 = weighted_field_norm(split.tail, u1, w);
    led.add(SL, "ultraviolet tail <= e^{-K tau}[[P]]", std::exp(-K * td.tau) * p_norm_u,
            uv_norm_u1);

    // Transport every piece with the Lie series of Y.  All pieces are
    // analytic on u - w and land on u - 2w; the contraction factor is
    // q = e*[[Y]]^w_u for each of them.
    LieSeriesOptions lopt;
    lopt.rel_tol = opts.lie_rel_tol;
    lopt.max_terms = opts.lie_max_terms;
    lopt.order_cap = opts.order_cap;

    lopt.start_order = 2;
    const LieSeriesResult e2_n = lie_series_apply(y, n_field, u1, w, lopt);
    lopt.start_order = 1;
    const LieSeriesResult e1_low = lie_series_apply(y, split.low, u1, w, lopt);
    LieSeriesResult e1_g;
    if (!g.empty()) e1_g = lie_series_apply(y, g, u1, w, lopt);
    lopt.start_order = 0;
    LieSeriesResult e0_tail;
    if (!split.tail.empty()) e0_tail = lie_series_apply(y, split.tail, u1, w, lopt);

    TFVectorField p_next = e2_n.field;
    p_next.add_in_place(e1_low.field);
    if (!g.empty()) p_next.add_in_place(e1_g.field);
    if (!split.tail.empty()) p_next.add_in_place(e0_tail.field);
    p_next.set_order_cap(combine_caps(p.order_cap(), combine_caps(g.order_cap(), opts.order_cap)));
    p_next.set_truncated(p.truncated() || g.truncated() || e2_n.field.truncated() ||
                         e1_low.field.truncated() || e1_g.field.truncated() ||
                         e0_tail.field.truncated());

    out.lie_tail_total =
        e2_n.tail_bound + e1_low.tail_bound + e1_g.tail_bound + e0_tail.tail_bound;

    double bracket_g_norm = 0.0;
    if (!g.empty()) bracket_g_norm = weighted_field_norm(lie_bracket(y, g), u1, w);
    out.bracket_g_norm = bracket_g_norm;

    const double measured = weighted_field_norm(p_next, u2, w) + out.lie_tail_total;
    const double claimed =
        (q0 * p_norm_u1 + bracket_g_norm + std::exp(-K * td.tau) * p_norm_u) / (1.0 - q0);
    led.add(SL, "remainder [[P+]] <= step bound", claimed, measured);

    out.g_next = add(g, p_bar);
    out.p_next = p_next;
    out.u_next = u2;
    out.p_next_norm = measured;
    out.p_next_claimed = claimed;

    GeneratorStep gen;
    gen.y = std::move(y);
    gen.q = kE * y_norm;
    gen.y_norm = y_norm;
    gen.domain_before = u;
    gen.domain_after = u2;
    gen.weights = w;
    gen.gamma = gamma;
    gen.K = K;
    out.generator = std::move(gen);
    return out;
}

// --- iterated normal form ---------------------------------------------------------------

double default_C_star() { return 48.0 * kE / std::log(12.0); }

NormalFormOutcome normalize(const Frequencies& freq, const TFVectorField& p, const Domain& u,
                            const Radii& w, const Lattice& lattice, int K, double gamma,
                            double c_star, const NormalFormOptions& opts) {
    require_freq_shape(freq);
    require_field_shape(freq, p, "normalize perturbation");
    if (K < 1) throw Error(Err::invalid_params, "normalize needs a cutoff K >= 1");
    if (!(gamma > 0.0)) throw Error(Err::invalid_params, "normalize needs gamma > 0");
    if (!(c_star > 0.0)) throw Error(Err::invalid_params, "normalize needs C_* > 0");
    const int m = freq.m(), n = freq.n();

    (void)shrink(u, w, 4);  // the final domain u - 4w must exist
    const TailDecay td = tail_decay_rate(u, w, m, n);
    const double log12 = std::log(12.0);
    const double ksb = K * td.sigma_bar;

    NormalFormOutcome out;
    out.freq = freq;
    Ledger& led = out.ledger;

    const double p0_norm = weighted_field_norm(p, u, w);
    out.p0_norm = p0_norm;

    led.add("pre", "threshold log 12 <= K*sigma_bar", ksb, log12);
    if (ksb < log12)
        throw Error(Err::ksigma_too_small, "K*sigma_bar = " + fnum(ksb, 6) +
                                               " is below the threshold log 12 = " +
                                               fnum(log12, 6));

    const double smallness = c_star * ksb * p0_norm / gamma;
    led.add("pre", "smallness C_* K sigma_bar [[P]]/gamma < 1", 1.0, smallness);
    if (!(smallness < 1.0))
        throw Error(Err::smallness_violated,
                    "C_* K sigma_bar [[P]]/gamma = " + fnum(smallness, 6) + " is not < 1");

    // Per-step constant C = C_* log(12)/e; the halving argument needs the
    // floors 8 (base step), 4 sqrt(3) (contraction) and 48 (bracket load).
    const double C = c_star * log12 / kE;
    led.add("pre", "constant floor 8 <= C", C, 8.0);
    led.add("pre", "constant floor 4*sqrt(3) <= C", C, 4.0 * std::sqrt(3.0));
    led.add("pre", "constant floor 48 <= C", C, 48.0);

    const double q00 = kE * p0_norm / gamma;
    IterationOptions iopt;
    iopt.order_cap = opts.order_cap;
    iopt.lie_rel_tol = opts.lie_rel_tol;
    iopt.lie_max_terms = opts.lie_max_terms;

    TFVectorField g0(m, n);

    if (q00 <= std::exp(-K * td.tau)) {
        // The perturbation is already below the ultraviolet floor: one sweep
        // reaches the target decay.
        iopt.step_label = "1";
        IterationOutcome step = iteration_step(freq, g0, p, u, w, lattice, K, gamma, iopt);
        led.append(step.ledger);
        out.generators.push_back(step.generator);
        out.g_star = step.g_next;
        out.p_star = step.p_next;
        out.u_final = shrink(u, w, 4);
        out.p_star_norm = weighted_field_norm(step.p_next, out.u_final, w) + step.lie_tail_total;
        out.close_to_id = step.generator.y_norm;
        out.close_to_id_claimed = 2.0 * p0_norm / gamma;
        out.decay_claimed = std::exp(-ksb / 4.0) * p0_norm;
        out.steps = 1;
        out.short_circuit = true;
        led.add("final", "one-sweep remainder <= 4 e^{-K tau}[[P]]",
                4.0 * std::exp(-K * td.tau) * p0_norm, out.p_star_norm);
        led.add("final", "remainder decay <= e^{-K sigma_bar/4}[[P]]", out.decay_claimed,
                out.p_star_norm);
        led.add("final", "normal-form correction <= 8e[[P]]^2/gamma",
                8.0 * kE * p0_norm * p0_norm / gamma, 0.0);
        led.add("final", "close to identity <= 2[[P]]/gamma", out.close_to_id_claimed,
                out.close_to_id);
        return out;
    }

    const int p_count = static_cast<int>(std::floor(ksb / log12));
    const double p_d = static_cast<double>(p_count);
    const Radii wp = w.scaled(1.0 / p_d);

    // Step 1: full width w, from u to u - 2w.
    iopt.step_label = "1";
    IterationOutcome step1;
    try {
        step1 = iteration_step(freq, g0, p, u, w, lattice, K, gamma, iopt);
    } catch (const Error& e) {
        throw Error(e.code(), std::string("normalization step 1: ") + e.what());
    }
    led.append(step1.ledger);
    out.generators.push_back(step1.generator);

    const TFVectorField p_bar0 = step1.g_next;  // G was empty
    TFVectorField g_cur = step1.g_next;
    TFVectorField p_cur = step1.p_next;
    Domain u_cur = step1.u_next;

    // Conservative propagation of the Lie-series truncation allowances: a
    // discrepancy delta on P enters the next step through series with gain
    // at most 1/(1-q); the factor 2 dominates the second-order couplings
    // through the generator and the absorbed resonant part.
    double p_allowance = step1.lie_tail_total;
    double g_allowance = 0.0;
    double prev_norm_w = p0_norm;
    double close_measured = step1.generator.y_norm;

    {
        const double next_norm = weighted_field_norm(p_cur, u_cur, w) + p_allowance;
        led.add("1", "halving [[P_1]] <= [[P_0]]/2", 0.5 * prev_norm_w, next_norm);
        prev_norm_w = next_norm;
    }

    for (int j = 1; j <= p_count; ++j) {
        const std::string label = std::to_string(j + 1);
        iopt.step_label = label;
        IterationOutcome step;
        try {
            step = iteration_step(freq, g_cur, p_cur, u_cur, wp, lattice, K, gamma, iopt);
        } catch (const Error& e) {
            throw Error(e.code(), "normalization step " + label + ": " + e.what());
        }
        led.append(step.ledger);
        out.generators.push_back(step.generator);

        // The three per-step loads that the halving constant C controls.
        led.add(label, "sixth bound: contraction 2e[[P]]/gamma <= 1/6", 1.0 / 6.0, 2.0 * step.q0);
        const TailDecay tdp = tail_decay_rate(u, wp, m, n);
        led.add(label, "sixth bound: ultraviolet 2e^{-K tau_p} <= 1/6", 1.0 / 6.0,
                2.0 * std::exp(-K * tdp.tau));
        led.add(label, "sixth bound: bracket 2[[[Y,G]]] <= [[P]]/6", step.p_norm / 6.0,
                2.0 * step.bracket_g_norm);

        g_allowance += p_allowance;  // the absorbed resonant part inherits the discrepancy
        p_allowance = 2.0 * p_allowance / (1.0 - step.generator.q) + step.lie_tail_total;
        close_measured += step.generator.y_norm / p_d;

        g_cur = step.g_next;
        p_cur = step.p_next;
        u_cur = step.u_next;

        const double next_norm = weighted_field_norm(p_cur, u_cur, w) + p_allowance;
        led.add(label, "halving [[P_" + std::to_string(j + 1) + "]] <= [[P_" +
                           std::to_string(j) + "]]/2",
                0.5 * prev_norm_w, next_norm);
        prev_norm_w = next_norm;
    }

    out.g_star = g_cur;
    out.p_star = p_cur;
    out.u_final = u_cur;
    out.p_star_norm = prev_norm_w;
    out.steps = p_count + 1;
    out.short_circuit = false;

    const double two_pow = std::pow(2.0, -static_cast<double>(p_count + 1));
    led.add("final", "remainder halved " + std::to_string(p_count + 1) + " times",
            two_pow * p0_norm, out.p_star_norm);
    out.decay_claimed = std::exp(-ksb / 4.0) * p0_norm;
    led.add("final", "remainder decay <= e^{-K sigma_bar/4}[[P]]", out.decay_claimed,
            out.p_star_norm);

    const double corr_measured =
        weighted_field_norm(sub(g_cur, p_bar0), u_cur, w) + g_allowance;
    led.add("final", "normal-form correction <= 8e[[P]]^2/gamma",
            8.0 * kE * p0_norm * p0_norm / gamma, corr_measured);

    out.close_to_id = close_measured;
    out.close_to_id_claimed = 2.0 * p0_norm / gamma;
    led.add("final", "close to identity <= 2[[P]]/gamma", out.close_to_id_claimed,
            out.close_to_id);
    return out;
}

}  // namespace tfnf
