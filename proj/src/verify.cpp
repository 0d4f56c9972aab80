#include "tfnf/verify.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "tfnf/domain.hpp"
#include "tfnf/dynamics.hpp"
#include "tfnf/errors.hpp"
#include "tfnf/normalform.hpp"
#include "tfnf/rng.hpp"
#include "tfnf/textio.hpp"
#include "tfnf/tfseries.hpp"
#include "tfnf/twolayer.hpp"

namespace tfnf {
namespace {

constexpr double kE = 2.71828182845904523536;

std::string row_label(const char* stem, int i) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s-%03d", stem, i);
    return buf;
}

SuiteCase ratio_case(std::string label, double measured, double bound) {
    SuiteCase c;
    c.label = std::move(label);
    c.measured = measured;
    c.bound = bound;
    c.pass = measured <= bound;
    return c;
}

TFComponent random_component(int m, int n, int max_order, double density, SplitMix64& rng) {
    TFComponent z(m, n);
    for (const auto& idx : enumerate_indices(m, n, max_order)) {
        if (rng.uniform01() > density) continue;
        z.set(idx, Coeff(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)));
    }
    return z;
}

TFVectorField random_field(int m, int n, int max_order, double density, SplitMix64& rng) {
    TFVectorField x(m, n);
    for (int h = 0; h < m + n; ++h) x.set_component(h, random_component(m, n, max_order, density, rng));
    return x;
}

using Mat2 = std::array<std::array<Coeff, 2>, 2>;

Mat2 expm2(const Mat2& a) {
    Mat2 result{};
    Mat2 term{};
    for (int i = 0; i < 2; ++i) {
        result[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = Coeff(1.0, 0.0);
        term[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = Coeff(1.0, 0.0);
    }
    for (int k = 1; k <= 60; ++k) {
        Mat2 next{};
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                Coeff s(0.0, 0.0);
                for (int l = 0; l < 2; ++l)
                    s += term[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)] *
                         a[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
                next[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    s / Coeff(static_cast<double>(k), 0.0);
            }
        term = next;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                result[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +=
                    term[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    return result;
}

Mat2 matmul(const Mat2& a, const Mat2& b) {
    Mat2 c{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            Coeff s(0.0, 0.0);
            for (int l = 0; l < 2; ++l)
                s += a[static_cast<std::size_t>(i)][static_cast<std::size_t>(l)] *
                     b[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
            c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s;
        }
    return c;
}

/// Admissible random model parameters: friction ordering theta > eps > ups,
/// underdamping with a wide margin, optionally a core drift torque with
/// ups*|v0| <= c2/2 so the equilibrium stays on the cos(2 eta0) > 0 branch.
TwoLayerParams random_model(SplitMix64& rng, bool with_drift) {
    TwoLayerParams p;
    p.c1 = rng.uniform(0.5, 2.0);
    p.c2 = rng.uniform(0.5, 2.0);
    p.theta_fric = rng.uniform(0.05, 0.5) * std::sqrt(std::min(p.c1, p.c2));
    p.eps_fric = p.theta_fric * rng.uniform(0.15, 0.85);
    p.ups_fric = p.eps_fric * rng.uniform(0.15, 0.85);
    p.omega_orb = rng.uniform(1.0, 50.0);
    p.v0 = with_drift ? rng.uniform(-0.5, 0.5) * p.c2 / p.ups_fric : 0.0;
    p.eps0 = 1e-3;
    p.s0 = 0.5;
    return p;
}

// --- the seven suites -------------------------------------------------------------

/// Derivative majorant bounds: d^p/d z^p loses p!/rho^p on a slow shrink by
/// rho, and (p/(e sigma))^p on an angle-strip shrink by sigma.
void run_cauchy(SuiteResult& out, SplitMix64& rng, int cases) {
    const Domain u{0.8, 0.5};
    for (int i = 0; i < cases; ++i) {
        const TFComponent z = random_component(2, 1, 4, 0.5, rng);
        const double sigma = rng.uniform(0.05, 0.45);
        const double rho = rng.uniform(0.05, 0.7);
        const double full = component_norm(z, u);
        double worst = 0.0;
        if (full > 0.0) {
            const Domain slow_shrunk{u.eps - rho, u.s};
            const Domain angle_shrunk{u.eps, u.s - sigma};
            for (int p = 1; p <= 3; ++p) {
                double pf_slow = 1.0;  // p! / rho^p
                for (int q = 1; q <= p; ++q) pf_slow *= static_cast<double>(q) / rho;
                for (int var = 0; var <= 1; ++var) {
                    const double lhs = component_norm(partial_derivative(z, var, p), slow_shrunk);
                    worst = std::max(worst, lhs / (pf_slow * full));
                }
                double pf_angle = 1.0;  // (p / (e sigma))^p
                for (int q = 0; q < p; ++q) pf_angle *= static_cast<double>(p) / (kE * sigma);
                const double lhs = component_norm(partial_derivative(z, 2, p), angle_shrunk);
                worst = std::max(worst, lhs / (pf_angle * full));
            }
        }
        out.rows.push_back(ratio_case(row_label("cauchy", i), worst, 1.0 + 1e-12));
    }
}

/// Bracket norm inequality with shifted weights, for Y analytic on u0 and
/// W on u:  [[L_Y W]]^{u0-u+w}_{u-w} <= [[Y]]^w_{u-w} [[W]]^{u0-u+w}_u
///                                    + [[W]]^{u0-u+w}_{u-w} [[Y]]^{u0-u+w}_{u0}.
void run_bracket(SuiteResult& out, SplitMix64& rng, int cases) {
    const Domain u0{1.0, 0.8};
    const Domain u{0.7, 0.6};
    const Radii w{0.2, 0.15};
    const Radii shifted{u0.eps - u.eps + w.rho, u0.s - u.s + w.sigma};
    const Domain u_minus = shrink(u, w);
    for (int i = 0; i < cases; ++i) {
        const TFVectorField y = random_field(1, 1, 4, 0.5, rng);
        const TFVectorField x = random_field(1, 1, 4, 0.5, rng);
        const double lhs = weighted_field_norm(lie_bracket(y, x), u_minus, shifted);
        const double rhs = weighted_field_norm(y, u_minus, w) * weighted_field_norm(x, u, shifted) +
                           weighted_field_norm(x, u_minus, shifted) * weighted_field_norm(y, u0, shifted);
        const double measured = rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        out.rows.push_back(ratio_case(row_label("bracket", i), measured, 1.0 + 1e-12));
    }
}

/// Factorial-geometric bounds on iterated brackets:
/// [[L_Y^k W]]^w_{u-w} <= k! q^k [[W]]^w_u with q = e [[Y]]^w_{u+w}, k = 1..4.
/// The generator is rescaled so that q lands at a prescribed value in (0, 1).
void run_lie_tail(SuiteResult& out, SplitMix64& rng, int cases) {
    const Domain u{0.5, 0.5};
    const Radii w{0.12, 0.12};
    const Domain u_minus = shrink(u, w);
    const Domain u_plus = grow(u, w);
    for (int i = 0; i < cases; ++i) {
        TFVectorField y = random_field(1, 1, 3, 0.3, rng);
        const TFVectorField x = random_field(1, 1, 3, 1.0, rng);
        const double target_q = rng.uniform(0.1, 0.8);
        const double n0 = weighted_field_norm(y, u_plus, w);
        const double wn = weighted_field_norm(x, u, w);
        double worst = 0.0;
        if (n0 > 0.0 && wn > 0.0) {
            y = scale(y, Coeff(target_q / (kE * n0), 0.0));
            const double q = kE * weighted_field_norm(y, u_plus, w);
            TFVectorField t = x;
            double fact = 1.0;
            for (int k = 1; k <= 4; ++k) {
                t = lie_bracket(y, t);
                fact *= static_cast<double>(k);
                const double lhs = weighted_field_norm(t, u_minus, w);
                worst = std::max(worst, lhs / (fact * std::pow(q, k) * wn));
            }
        }
        out.rows.push_back(ratio_case(row_label("lie-tail", i), worst, 1.0 + 1e-12));
    }
}

/// Ultraviolet decay: the order >= 2K part of a field loses a factor
/// e^{-2 K tau} of the full majorant norm on the shrunk domain.
void run_uv_decay(SuiteResult& out, SplitMix64& rng, int cases) {
    const Domain u{0.8, 0.6};
    const Radii w{0.2, 0.15};
    const Domain shrunk = shrink(u, w);
    const TailDecay td = tail_decay_rate(u, w);
    for (int i = 0; i < cases; ++i) {
        const TFVectorField x = random_field(1, 1, 12, 0.4, rng);
        const int K = 2 + (i % 4);
        const auto split = ultraviolet_split(x, K);
        const double lhs = weighted_field_norm(split.tail, shrunk, w);
        const double rhs = std::exp(-2.0 * K * td.tau) * weighted_field_norm(x, u, w);
        const double measured = rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        out.rows.push_back(ratio_case(row_label("uv-decay", i), measured, 1.0 + 1e-12));
    }
}

/// Divisor solve: residual of [Y, N] = Z at roundoff scale, and the
/// componentwise majorant bound ||Y_h|| <= ||Z_h|| / gamma, with gamma
/// certified by the library's own divisor scan.
void run_homological(SuiteResult& out, SplitMix64& rng, int cases) {
    const Lattice lam = Lattice::zero();
    const int K = 5;
    const Domain u{0.4, 0.5};
    const Radii w{0.1, 0.1};
    for (int i = 0; i < cases; ++i) {
        Frequencies freq;
        freq.lambda = {Coeff(-rng.uniform(0.2, 1.0), rng.uniform(-1.5, 1.5))};
        freq.omega = {rng.uniform(0.5, 2.0)};
        const NonresonanceCertificate cert = check_nonresonant(freq, 1e-12, lam, K);
        const double gamma = 0.9 * cert.worst_value;

        const TFVectorField z = project_lattice_complement(random_field(1, 1, K, 1.0, rng), lam);
        const TFVectorField y = solve_homological(freq, z, lam, K, gamma);

        const TFVectorField resid = sub(lie_bracket(y, freq.vector_field()), z);
        const double rn = weighted_field_norm(resid, u, w);
        const double zn = weighted_field_norm(z, u, w);
        out.rows.push_back(ratio_case(row_label("residual", i), rn, 1e-10 * zn));

        double worst = 0.0;
        for (int h = 0; h < 2; ++h) {
            const double zh = component_norm(z.component(h), u);
            const double yh = component_norm(y.component(h), u);
            if (zh > 0.0) worst = std::max(worst, yh / (zh / gamma));
        }
        SuiteCase comp = ratio_case(row_label("component-bound", i), worst, 1.0 + 1e-13);
        comp.pass = comp.pass && project_lattice(y, lam).empty() && y.max_order() <= K;
        out.rows.push_back(comp);
    }
}

/// Linear-generator transport: for Y = A zeta and X = B zeta the series
/// transport must reproduce e^{-A} B e^{A} zeta coefficientwise, and the two
/// integration routes of the flow check must agree within its tolerance
/// plus the series tail allowance.
void run_conjugation(SuiteResult& out, std::uint64_t seed, SplitMix64& rng, int cases,
                     int samples, double tol) {
    const Domain u{0.5, 0.5};
    const Radii w{0.15, 0.15};
    for (int i = 0; i < cases; ++i) {
        Mat2 a{}, b{};
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) {
                a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                    Coeff(rng.uniform(-0.012, 0.012), rng.uniform(-0.012, 0.012));
                b[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                    Coeff(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
            }
        TFVectorField y(2, 0), x(2, 0);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) {
                y.component(r).set(MultiIndex::unit(c), a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
                x.component(r).set(MultiIndex::unit(c), b[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]);
            }

        const LieSeriesResult z = lie_series_apply(y, x, u, w, {});

        Mat2 minus_a{};
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c)
                minus_a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] =
                    -a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
        const Mat2 conj = matmul(expm2(minus_a), matmul(b, expm2(a)));
        double coeff_err = 0.0;
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) {
                const Coeff got = z.field.component(r).at(MultiIndex::unit(c));
                coeff_err = std::max(
                    coeff_err,
                    std::abs(got - conj[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]));
            }
        out.rows.push_back(ratio_case(row_label("coefficient-error", i), coeff_err, 1e-10));

        ConjugationOptions copts;
        copts.samples = samples;
        copts.checkpoints = 3;
        copts.tol = tol;
        copts.seed = static_cast<unsigned>(seed ^ (0x9e3779b9u * static_cast<unsigned>(i + 1)));
        const ConjugationReport rep = verify_conjugation(y, x, u, w, copts);
        SuiteCase route;
        route.label = row_label("route-gap", i);
        route.measured = rep.max_discrepancy;
        route.bound = rep.tol + rep.tail_allowance;
        route.pass = rep.pass;
        out.rows.push_back(route);
    }
}

/// Quadratic-pencil positivity chain on admissible models: the pencil
/// margin 4 lamT_min lamV_min - lamB_max^2 stays above the provable floor
/// 8 eps^2 min{c1, c2bar} - 9 theta^2 eps^2, itself positive.
void run_pencil(SuiteResult& out, SplitMix64& rng, int cases) {
    for (int i = 0; i < cases; ++i) {
        const TwoLayerParams p = random_model(rng, i % 2 == 1);
        p.validate();
        const Equilibrium eq = equilibrium(p);
        const QuadraticPencil q = reduce_to_pencil(p, eq);
        const double ep = p.eps_fric;
        const double th = p.theta_fric;
        const double floor8 = 8.0 * ep * ep * std::min(p.c1, eq.c2bar) - 9.0 * th * th * ep * ep;
        SuiteCase row;
        row.label = row_label("pencil", i);
        row.measured = floor8;
        row.bound = q.positivity();
        row.pass = q.positivity() >= floor8 * (1.0 - 1e-12) - 1e-15 && q.positivity() > 0.0 &&
                   floor8 > 0.0;
        out.rows.push_back(row);
    }
}

}  // namespace

std::string SuiteResult::to_text() const {
    std::ostringstream os;
    os << "suite: " << suite << "\n";
    os << "seed: " << seed << "\n";
    os << "cases: " << cases << "\n";
    for (const auto& row : rows) {
        os << "  " << row.label << ": measured = " << fnum(row.measured)
           << "  bound = " << fnum(row.bound) << "  " << (row.pass ? "PASS" : "FAIL") << "\n";
    }
    os << "violations: " << violations << "\n";
    os << "result: " << (pass() ? "PASS" : "FAIL") << "\n";
    return os.str();
}

const std::vector<std::string>& verify_suite_names() {
    static const std::vector<std::string> names = {
        "cauchy", "bracket", "lie-tail", "uv-decay", "homological", "conjugation", "pencil",
    };
    return names;
}

SuiteResult verify_suite(const std::string& name, std::uint64_t seed, int cases,
                         int samples, double tol) {
    if (cases <= 0) throw Error(Err::parse, "suite case count must be positive");
    if (samples <= 0) throw Error(Err::parse, "suite sample count must be positive");
    if (!(tol > 0.0)) throw Error(Err::parse, "suite tolerance must be positive");
    SuiteResult out;
    out.suite = name;
    out.seed = seed;
    out.cases = cases;
    SplitMix64 rng(seed);
    if (name == "cauchy") {
        run_cauchy(out, rng, cases);
    } else if (name == "bracket") {
        run_bracket(out, rng, cases);
    } else if (name == "lie-tail") {
        run_lie_tail(out, rng, cases);
    } else if (name == "uv-decay") {
        run_uv_decay(out, rng, cases);
    } else if (name == "homological") {
        run_homological(out, rng, cases);
    } else if (name == "conjugation") {
        run_conjugation(out, seed, rng, cases, samples, tol);
    } else if (name == "pencil") {
        run_pencil(out, rng, cases);
    } else {
        std::string known;
        for (const auto& n : verify_suite_names()) {
            if (!known.empty()) known += ", ";
            known += n;
        }
        throw Error(Err::parse, "unknown verify suite '" + name + "' (available: " + known + ")");
    }
    for (const auto& row : out.rows)
        if (!row.pass) ++out.violations;
    return out;
}

}  // namespace tfnf
