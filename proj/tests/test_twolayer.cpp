#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "tfnf/normalform.hpp"
#include "tfnf/rng.hpp"
#include "tfnf/tfseries.hpp"
#include "tfnf/twolayer.hpp"

using namespace tfnf;

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

MultiIndex mk(std::initializer_list<int> entries) {
    MultiIndex idx;
    int i = 0;
    for (int e : entries) idx.v[static_cast<std::size_t>(i++)] = static_cast<std::int16_t>(e);
    return idx;
}

/// The committed well-conditioned instance: fast rotation, split pair
/// frequencies, tiny slow radius.  Every pipeline inequality closes here.
TwoLayerParams reference_instance() {
    TwoLayerParams p;
    p.c1 = 1.0;
    p.c2 = 1.3;
    p.theta_fric = 0.1;
    p.eps_fric = 0.05;
    p.ups_fric = 0.02;
    p.omega_orb = 1e11;
    p.v0 = 0.0;
    p.eps0 = 8e-4;
    p.s0 = 1.0;
    return p;
}

/// Equal restoring coefficients: the two pair frequencies nearly collide and
/// one real part crosses -ups/3.  Used to document the failure of the
/// heuristic spectral window.
TwoLayerParams equal_restoring_instance() {
    TwoLayerParams p = reference_instance();
    p.c2 = 1.0;
    p.omega_orb = 10.0;
    return p;
}

/// Random admissible parameters: friction ordering, underdamping with a wide
/// margin, and (optionally) a drift torque with ups|v0| <= c2/2.
TwoLayerParams random_params(SplitMix64& rng, bool with_drift) {
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

/// Eigenvalues of the symmetric 2x2 matrix [[a, b], [b, d]].
std::pair<double, double> sym2_eig(double a, double b, double d) {
    double mid = 0.5 * (a + d);
    double rad = std::hypot(0.5 * (a - d), b);
    return {mid - rad, mid + rad};
}

/// Monic quartic coefficients (ascending) of the linear-block spectrum.
std::array<double, 5> model_quartic(const TwoLayerParams& p, double c2bar) {
    double th = p.theta_fric, de = p.delta(), B = 2.0 * p.c1, D = 2.0 * c2bar;
    return {B * D, th * D + B * de, B + D + th * de - th * p.eps_fric, th + de, 1.0};
}

/// Largest mismatch between the elementary symmetric functions of the four
/// returned eigenvalues and the quartic coefficients (Vieta residual).
double vieta_residual(const std::array<Coeff, 4>& lam, const std::array<double, 5>& poly) {
    Coeff e1(0.0, 0.0), e2(0.0, 0.0), e3(0.0, 0.0), e4(1.0, 0.0);
    for (const Coeff& l : lam) e1 += l;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) e2 += lam[static_cast<std::size_t>(i)] * lam[static_cast<std::size_t>(j)];
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            for (int k = j + 1; k < 4; ++k)
                e3 += lam[static_cast<std::size_t>(i)] * lam[static_cast<std::size_t>(j)] * lam[static_cast<std::size_t>(k)];
    for (const Coeff& l : lam) e4 *= l;
    double r = 0.0;
    r = std::max(r, std::abs(e1 + Coeff(poly[3], 0.0)));
    r = std::max(r, std::abs(e2 - Coeff(poly[2], 0.0)));
    r = std::max(r, std::abs(e3 + Coeff(poly[1], 0.0)));
    r = std::max(r, std::abs(e4 - Coeff(poly[0], 0.0)));
    return r;
}

const LedgerRow* find_row(const Ledger& lg, const std::string& needle) {
    for (const auto& r : lg.rows)
        if (r.label.find(needle) != std::string::npos) return &r;
    return nullptr;
}

Err thrown_code(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return Err::parse;  // sentinel: nothing was thrown
}

}  // namespace

TEST_CASE("equilibrium: closed forms, branch choice, and torque balance") {
    TwoLayerParams p = reference_instance();

    SUBCASE("zero drift sits at the origin") {
        Equilibrium eq = equilibrium(p);
        CHECK(eq.eta0 == 0.0);
        CHECK(eq.cos2eta0 == 1.0);
        CHECK(eq.c2bar == p.c2);
    }

    SUBCASE("half-maximal drift gives the pi/12 textbook angle") {
        p.v0 = 0.5 * p.c2 / p.ups_fric;  // ups*v0/c2 = 1/2 exactly
        Equilibrium eq = equilibrium(p);
        CHECK(eq.eta0 == doctest::Approx(kPi / 12.0).epsilon(1e-15));
        CHECK(eq.cos2eta0 == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-15));
        CHECK(eq.c2bar == doctest::Approx(p.c2 * std::sqrt(3.0) / 2.0).epsilon(1e-15));
    }

    SUBCASE("unbalanceable torque is rejected") {
        p.v0 = p.c2 / p.ups_fric;  // ups*|v0| = c2: balance impossible
        CHECK(thrown_code([&] { equilibrium(p); }) == Err::no_equilibrium);
        p.c2 = 0.0;
        CHECK(thrown_code([&] { equilibrium(p); }) == Err::no_equilibrium);
    }

    SUBCASE("the full field vanishes at the equilibrium point (100 draws)") {
        SplitMix64 rng(0x00e9'11b2'51a0'77c1ULL);
        for (int trial = 0; trial < 100; ++trial) {
            TwoLayerParams q = random_params(rng, true);
            // Push the drift toward the edge of the admissible range too.
            if (trial % 4 == 0) q.v0 = rng.uniform(-0.9, 0.9) * q.c2 / q.ups_fric;
            Equilibrium eq = equilibrium(q);
            TFVectorField f = build_full_field(q, PerturbationInputs{}, 25);
            std::vector<Coeff> zeta = {Coeff(0.0, 0.0), Coeff(0.0, 0.0), Coeff(eq.eta0, 0.0),
                                       Coeff(0.0, 0.0)};
            std::vector<Coeff> phi = {Coeff(rng.uniform(0.0, 2.0 * kPi), 0.0)};
            double scale = std::max(1.0, q.c2 + q.ups_fric * std::abs(q.v0));
            for (int h = 0; h < 4; ++h) {
                CAPTURE(trial);
                CAPTURE(h);
                CHECK(std::abs(evaluate(f.component(h), zeta, phi)) <= 1e-14 * scale);
            }
            CHECK(evaluate(f.component(4), zeta, phi) == Coeff(q.omega_orb, 0.0));
        }
    }
}

TEST_CASE("parameter validation rejects each broken regime") {
    TwoLayerParams p = reference_instance();
    CHECK_NOTHROW(p.validate());

    TwoLayerParams bad = p;
    bad.eps_fric = bad.theta_fric;  // ordering must be strict
    CHECK(thrown_code([&] { bad.validate(); }) == Err::invalid_params);

    bad = p;
    bad.ups_fric = 0.0;
    CHECK(thrown_code([&] { bad.validate(); }) == Err::invalid_params);

    bad = p;
    bad.theta_fric = 1.4;  // theta^2 = 1.96 > (8/9) min{c1, c2}: overdamped
    CHECK(thrown_code([&] { bad.validate(); }) == Err::invalid_params);

    bad = p;
    bad.omega_orb = 0.0;
    CHECK(thrown_code([&] { bad.validate(); }) == Err::invalid_params);

    bad = p;
    bad.v0 = 2.0 * bad.c2 / bad.ups_fric;  // no equilibrium
    CHECK(thrown_code([&] { bad.validate(); }) == Err::invalid_params);
}

TEST_CASE("full field: assembled series matches the analytic right-hand side") {
    SplitMix64 rng(0x5f1de1d0'c0ffee11ULL);

    SUBCASE("torque balance against closed-form sines (50 draws)") {
        for (int trial = 0; trial < 50; ++trial) {
            TwoLayerParams p = random_params(rng, trial % 2 == 1);
            TFVectorField f = build_full_field(p, PerturbationInputs{}, 25);
            double g = rng.uniform(-0.4, 0.4), pg = rng.uniform(-2.0, 2.0);
            double et = rng.uniform(-0.4, 0.4), pe = rng.uniform(-2.0, 2.0);
            std::vector<Coeff> zeta = {Coeff(g, 0.0), Coeff(pg, 0.0), Coeff(et, 0.0),
                                       Coeff(pe, 0.0)};
            std::vector<Coeff> phi = {Coeff(rng.uniform(0.0, 2.0 * kPi), 0.0)};
            double scale = std::max({1.0, p.c1, p.c2});
            CAPTURE(trial);
            CHECK(std::abs(evaluate(f.component(0), zeta, phi) - Coeff(pg, 0.0)) <= 1e-13 * scale);
            Coeff rhs1(-p.c1 * std::sin(2.0 * g) - p.theta_fric * (pg - pe), 0.0);
            CHECK(std::abs(evaluate(f.component(1), zeta, phi) - rhs1) <= 1e-12 * scale);
            CHECK(std::abs(evaluate(f.component(2), zeta, phi) - Coeff(pe, 0.0)) <= 1e-13 * scale);
            Coeff rhs3(-p.c2 * std::sin(2.0 * et) + p.eps_fric * (pg - pe) -
                           p.ups_fric * (pe - p.v0),
                       0.0);
            CHECK(std::abs(evaluate(f.component(3), zeta, phi) - rhs3) <= 1e-12 * scale);
            CHECK(evaluate(f.component(4), zeta, phi) == Coeff(p.omega_orb, 0.0));
        }
    }

    SUBCASE("forcing terms are carried verbatim") {
        TwoLayerParams p = reference_instance();
        PerturbationInputs pert;
        pert.tilde.component(1).set(mk({0, 0, 0, 0, 1}), Coeff(0.0, -1e-5));
        pert.tilde.component(1).set(mk({0, 0, 0, 0, -1}), Coeff(0.0, 1e-5));
        pert.hat.component(1).set(mk({2, 0, 0, 0, 0}), Coeff(1e-5, 0.0));
        TFVectorField f = build_full_field(p, pert, 9);
        CHECK(f.component(1).at(mk({0, 0, 0, 0, 1})) == Coeff(0.0, -1e-5));
        CHECK(f.component(1).at(mk({0, 0, 0, 0, -1})) == Coeff(0.0, 1e-5));
        CHECK(f.component(1).at(mk({2, 0, 0, 0, 0})) == Coeff(1e-5, 0.0));
        // The sine series only occupies odd orders; gamma^2 came from `hat` alone.
        CHECK(f.component(1).at(mk({1, 0, 0, 0, 0})) == Coeff(-2.0 * p.c1, 0.0));
    }

    SUBCASE("an oscillating forcing with a nonzero angle average is rejected") {
        TwoLayerParams p = reference_instance();
        PerturbationInputs pert;
        pert.tilde.component(3).set(mk({1, 0, 0, 0, 0}), Coeff(1e-7, 0.0));
        CHECK(thrown_code([&] { build_full_field(p, pert, 9); }) ==
              Err::perturbation_average_nonzero);
    }

    SUBCASE("switching off the core restoring torque decouples the core pendulum") {
        TwoLayerParams p = reference_instance();
        p.c2 = 0.0;
        TFVectorField f = build_full_field(p, PerturbationInputs{}, 9);
        CHECK(f.component(3).at(mk({0, 0, 1, 0, 0})) == Coeff(0.0, 0.0));
        CHECK(f.component(3).at(mk({0, 0, 3, 0, 0})) == Coeff(0.0, 0.0));
        CHECK(f.component(3).at(mk({0, 1, 0, 0, 0})) == Coeff(p.eps_fric, 0.0));
    }

    SUBCASE("order cap is honored and recorded") {
        TwoLayerParams p = reference_instance();
        TFVectorField f = build_full_field(p, PerturbationInputs{}, 1);
        CHECK(f.order_cap() == 1);
        CHECK(f.truncated());
        CHECK(f.component(1).at(mk({1, 0, 0, 0, 0})) == Coeff(-2.0 * p.c1, 0.0));
        CHECK(f.component(1).at(mk({3, 0, 0, 0, 0})) == Coeff(0.0, 0.0));
        CHECK(thrown_code([&] { build_full_field(p, PerturbationInputs{}, 0); }) ==
              Err::invalid_params);
    }
}

TEST_CASE("recentred field: linear block and remainder structure") {
    TwoLayerParams p = reference_instance();
    p.v0 = 0.5 * p.c2 / p.ups_fric;  // genuine drift so eta0 != 0
    Equilibrium eq = equilibrium(p);

    SUBCASE("linear block closed form") {
        LinearBlock L = build_linear_block(p, eq);
        CHECK(L.a[0][1] == 1.0);
        CHECK(L.a[1][0] == -2.0 * p.c1);
        CHECK(L.a[1][1] == -p.theta_fric);
        CHECK(L.a[1][3] == p.theta_fric);
        CHECK(L.a[2][3] == 1.0);
        CHECK(L.a[3][1] == p.eps_fric);
        CHECK(L.a[3][2] == doctest::Approx(-2.0 * eq.c2bar).epsilon(1e-15));
        CHECK(L.a[3][3] == -p.delta());
        CHECK(L.trace() == doctest::Approx(-(p.theta_fric + p.delta())).epsilon(1e-15));
        CHECK(L.inf_norm() ==
              doctest::Approx(std::max({1.0, 2.0 * p.c1 + 2.0 * p.theta_fric,
                                        p.eps_fric + 2.0 * eq.c2bar + p.delta()}))
                  .epsilon(1e-15));
    }

    SUBCASE("remainders start at the right orders with the right coefficients") {
        LinearizedSystem sys = build_linearized_field(p, eq, PerturbationInputs{}, 25);
        // Shell row: -2 c1 gamma  +  (4/3) c1 gamma^3 + ...
        CHECK(sys.p0.component(1).at(mk({1, 0, 0, 0, 0})) == Coeff(-2.0 * p.c1, 0.0));
        CHECK(std::abs(sys.p0.component(1).at(mk({3, 0, 0, 0, 0})) -
                       Coeff(4.0 * p.c1 / 3.0, 0.0)) <= 1e-15);
        CHECK(sys.p0.component(1).at(mk({2, 0, 0, 0, 0})) == Coeff(0.0, 0.0));
        // Core row: -2 c2bar psi + 2 ups v0 psi^2 + (4/3) c2bar psi^3 + ...
        CHECK(std::abs(sys.p0.component(3).at(mk({0, 0, 1, 0, 0})) -
                       Coeff(-2.0 * eq.c2bar, 0.0)) <= 1e-15);
        CHECK(std::abs(sys.p0.component(3).at(mk({0, 0, 2, 0, 0})) -
                       Coeff(2.0 * p.ups_fric * p.v0, 0.0)) <= 1e-15);
        CHECK(std::abs(sys.p0.component(3).at(mk({0, 0, 3, 0, 0})) -
                       Coeff(4.0 * eq.c2bar / 3.0, 0.0)) <= 1e-14);
        // Recentring killed the constant torque exactly.
        CHECK(sys.p0.component(3).at(MultiIndex::zero()) == Coeff(0.0, 0.0));
        // The fast angle runs at omega; the perturbation has no angle row.
        CHECK(sys.freq.omega[0] == p.omega_orb);
        CHECK(sys.freq.lambda == std::vector<Coeff>(4, Coeff(0.0, 0.0)));
        CHECK(sys.p0.component(4).empty());
        CHECK(sys.u0.eps == p.eps0);
        CHECK(sys.u0.s == p.s0);
    }

    SUBCASE("recentring agrees with evaluating the full field at the shifted point") {
        SplitMix64 rng(0x7ab8'12cd'9e01'44f3ULL);
        PerturbationInputs pert;
        for (int h = 0; h < 5; ++h)
            for (const auto& idx : enumerate_indices(4, 1, 3)) {
                if (rng.uniform01() < 0.08 && idx.v[4] != 0)
                    pert.tilde.component(h).set(
                        idx, Coeff(rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3)));
                if (rng.uniform01() < 0.08 && idx.v[4] == 0)
                    pert.hat.component(h).set(
                        idx, Coeff(rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3)));
            }
        TFVectorField full = build_full_field(p, pert, 25);
        LinearizedSystem sys = build_linearized_field(p, eq, pert, 25);
        for (int trial = 0; trial < 20; ++trial) {
            double g = rng.uniform(-0.3, 0.3), pg = rng.uniform(-1.0, 1.0);
            double ps = rng.uniform(-0.3, 0.3), pp = rng.uniform(-1.0, 1.0);
            double ph = rng.uniform(0.0, 2.0 * kPi);
            std::vector<Coeff> recentred = {Coeff(g, 0.0), Coeff(pg, 0.0), Coeff(ps, 0.0),
                                            Coeff(pp, 0.0)};
            std::vector<Coeff> original = {Coeff(g, 0.0), Coeff(pg, 0.0),
                                           Coeff(eq.eta0 + ps, 0.0), Coeff(pp, 0.0)};
            std::vector<Coeff> phi = {Coeff(ph, 0.0)};
            CAPTURE(trial);
            for (int h = 0; h < 4; ++h) {
                Coeff lhs = evaluate(sys.p0.component(h), recentred, phi);
                Coeff rhs = evaluate(full.component(h), original, phi);
                CAPTURE(h);
                CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
            }
            Coeff lhs4 = evaluate(sys.p0.component(4), recentred, phi) +
                         Coeff(p.omega_orb, 0.0);
            Coeff rhs4 = evaluate(full.component(4), original, phi);
            CHECK(std::abs(lhs4 - rhs4) <= 1e-12 * p.omega_orb);
        }
    }

    SUBCASE("a cap below the first remainder order is rejected") {
        CHECK(thrown_code([&] { build_linearized_field(p, eq, PerturbationInputs{}, 2); }) ==
              Err::precondition_violated);
    }
}

TEST_CASE("pencil: closed-form extremes match a symmetric 2x2 eigensolve") {
    SplitMix64 rng2(0x9e3779b97f4a7c15ULL);
    for (int trial = 0; trial < 200; ++trial) {
        TwoLayerParams p = random_params(rng2, trial % 3 == 2);
        Equilibrium eq = equilibrium(p);
        QuadraticPencil q = reduce_to_pencil(p, eq);
        double th = p.theta_fric, ep = p.eps_fric, de = p.delta();
        CAPTURE(trial);

        CHECK(q.t[0][0] == ep);
        CHECK(q.t[1][1] == th);
        CHECK(q.b[0][0] == th * ep);
        CHECK(q.b[0][1] == -th * ep);
        CHECK(q.b[1][1] == doctest::Approx(th * de).epsilon(1e-15));
        CHECK(q.v[0][0] == 2.0 * p.c1 * ep);
        CHECK(q.v[1][1] == doctest::Approx(2.0 * eq.c2bar * th).epsilon(1e-15));

        auto [tmin, tmax] = sym2_eig(q.t[0][0], q.t[0][1], q.t[1][1]);
        auto [bmin, bmax] = sym2_eig(q.b[0][0], q.b[0][1], q.b[1][1]);
        auto [vmin, vmax] = sym2_eig(q.v[0][0], q.v[0][1], q.v[1][1]);
        double scale = std::max({tmax, bmax, vmax});
        CHECK(std::abs(q.lamT_min - tmin) <= 1e-13 * scale);
        CHECK(std::abs(q.lamT_max - tmax) <= 1e-13 * scale);
        CHECK(std::abs(q.lamB_min - bmin) <= 1e-13 * scale);
        CHECK(std::abs(q.lamB_max - bmax) <= 1e-13 * scale);
        CHECK(std::abs(q.lamV_min - vmin) <= 1e-13 * scale);
        CHECK(std::abs(q.lamV_max - vmax) <= 1e-13 * scale);

        // det B = theta^2 eps ups, and the provable floor on the small eigenvalue.
        CHECK(q.lamB_min * q.lamB_max ==
              doctest::Approx(th * th * ep * p.ups_fric).epsilon(1e-12));
        CHECK(q.lamB_min >= th * ep * p.ups_fric / (ep + de) * (1.0 - 1e-12));

        // Positivity floor forcing strictly complex pairs.
        double floor8 = 8.0 * ep * ep * std::min(p.c1, eq.c2bar) - 9.0 * th * th * ep * ep;
        CHECK(q.positivity() >= floor8 * (1.0 - 1e-12) - 1e-15);
        CHECK(q.positivity() > 0.0);
    }

    SUBCASE("the twice-stronger textbook floor on lamB_min genuinely fails") {
        TwoLayerParams p = equal_restoring_instance();
        Equilibrium eq = equilibrium(p);
        QuadraticPencil q = reduce_to_pencil(p, eq);
        double th = p.theta_fric, ep = p.eps_fric, de = p.delta();
        // The provable floor holds ...
        CHECK(q.lamB_min >= th * ep * p.ups_fric / (ep + de) * (1.0 - 1e-12));
        // ... but doubling it overshoots the true eigenvalue: only
        // 1 - sqrt(1-x) >= x/2 is available, not >= x.
        CHECK(q.lamB_min < 2.0 * th * ep * p.ups_fric / (ep + de));
    }
}

TEST_CASE("spectrum: frozen instances match an independent quartic solve") {
    SUBCASE("split pair frequencies (reference instance)") {
        TwoLayerParams p = reference_instance();
        Equilibrium eq = equilibrium(p);
        SpectrumResult s = solve_spectrum(build_linear_block(p, eq), p);
        // Frozen from a 40-digit multiprecision root solve of the quartic.
        CHECK(std::abs(s.eigenvalues[0] -
                       Coeff(-5.0898134716293987e-02, -1.4193358309878374e+00)) <= 1e-11);
        CHECK(std::abs(s.eigenvalues[1] -
                       Coeff(-3.4101865283706012e-02, -1.6052380995377262e+00)) <= 1e-11);
        CHECK(s.eigenvalues[2] == std::conj(s.eigenvalues[0]));
        CHECK(s.eigenvalues[3] == std::conj(s.eigenvalues[1]));
        CHECK(s.rayleigh_lo == doctest::Approx(-1.109901951359279e-01).epsilon(1e-12));
        CHECK(s.rayleigh_hi == doctest::Approx(-4.504902432036076e-03).epsilon(1e-12));
        CHECK(s.coarse_window_ok);
        CHECK(s.coarse_violation == 0.0);
        CHECK(s.min_abs_re == doctest::Approx(3.410186528370601e-02).epsilon(1e-10));
        CHECK(s.b_norm_inf == doctest::Approx(2.552434392111729).epsilon(1e-12));
    }

    SUBCASE("equal restoring coefficients: heuristic window honestly fails") {
        TwoLayerParams p = equal_restoring_instance();
        Equilibrium eq = equilibrium(p);
        SpectrumResult s = solve_spectrum(build_linear_block(p, eq), p);
        CHECK(std::abs(s.eigenvalues[0] -
                       Coeff(-7.8642080737002407e-02, -1.4120252912527291e+00)) <= 1e-11);
        CHECK(std::abs(s.eigenvalues[1] -
                       Coeff(-6.3579192629975995e-03, -1.4141992705636095e+00)) <= 1e-11);
        // One real part sits above -ups/3: the narrow window is not a theorem.
        CHECK(s.min_abs_re == doctest::Approx(6.357919262997599e-03).epsilon(1e-9));
        CHECK(s.min_abs_re < p.ups_fric / 3.0);
        CHECK_FALSE(s.coarse_window_ok);
        CHECK(s.coarse_violation == doctest::Approx(3.087474036690677e-04).epsilon(1e-9));
        // The certified window still holds (solve_spectrum did not throw).
        CHECK(s.rayleigh_lo <= -s.min_abs_re);
    }
}

TEST_CASE("spectrum: invariants over random admissible draws") {
    SplitMix64 rng(0xb10c'0000'0000'0001ULL);
    int coarse_failures = 0;
    for (int trial = 0; trial < 200; ++trial) {
        TwoLayerParams p = random_params(rng, trial % 3 == 0);
        Equilibrium eq = equilibrium(p);
        LinearBlock L = build_linear_block(p, eq);
        SpectrumResult s = solve_spectrum(L, p);
        CAPTURE(trial);

        // Exact conjugate closure and (sign Im, |Im|) ordering.
        CHECK(s.eigenvalues[2] == std::conj(s.eigenvalues[0]));
        CHECK(s.eigenvalues[3] == std::conj(s.eigenvalues[1]));
        CHECK(s.eigenvalues[0].imag() < 0.0);
        CHECK(s.eigenvalues[1].imag() < 0.0);
        CHECK(std::abs(s.eigenvalues[0].imag()) <= std::abs(s.eigenvalues[1].imag()));

        // Damping and the certified window.
        double slack = 1e-12 * std::max(1.0, -s.rayleigh_lo);
        for (const Coeff& l : s.eigenvalues) {
            CHECK(l.real() < 0.0);
            CHECK(l.real() >= s.rayleigh_lo - slack);
            CHECK(l.real() <= s.rayleigh_hi + slack);
        }
        if (!s.coarse_window_ok) {
            ++coarse_failures;
            CHECK(s.coarse_violation > 0.0);
        }

        // Vieta residuals against the model quartic.
        double vr = vieta_residual(s.eigenvalues, model_quartic(p, eq.c2bar));
        CHECK(vr <= 1e-10 * std::max({1.0, 4.0 * p.c1 * eq.c2bar}));

        // Eigenvector quality.
        double lnorm = L.inf_norm();
        for (int j = 0; j < 4; ++j) CHECK(s.residuals[static_cast<std::size_t>(j)] <= 1e-10 * lnorm);
        CHECK(s.offdiag_mass <= 1e-10 * lnorm);
        for (int j = 0; j < 4; ++j) {
            double top = 0.0;
            int imax = 0;
            for (int i = 0; i < 4; ++i) {
                double a = std::abs(s.b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
                if (a > top) {
                    top = a;
                    imax = i;
                }
            }
            CHECK(top == doctest::Approx(1.0).epsilon(1e-14));
            CHECK(std::abs(s.b[static_cast<std::size_t>(imax)][static_cast<std::size_t>(j)].imag()) <= 1e-15);
            CHECK(s.b[static_cast<std::size_t>(imax)][static_cast<std::size_t>(j)].real() > 0.9);
        }

        // b_inv really inverts b.
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                Coeff sum(0.0, 0.0);
                for (int k = 0; k < 4; ++k)
                    sum += s.b_inv[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * s.b[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
                if (i == j) sum -= Coeff(1.0, 0.0);
                CHECK(std::abs(sum) <= 1e-13 * s.b_inv_norm_inf);
            }

        // Consistency between the two window reports.
        QuadraticPencil q = reduce_to_pencil(p, eq);
        CHECK(s.rayleigh_lo == doctest::Approx(q.rayleigh_lo()).epsilon(1e-15));
        CHECK(s.rayleigh_hi == doctest::Approx(q.rayleigh_hi()).epsilon(1e-15));
    }
    // The narrow window failing on a minority of draws is expected (it is not
    // a theorem); the sweep documents both that it does fail and that the
    // certified window never does.
    CHECK(coarse_failures >= 1);
    CHECK(coarse_failures <= 60);

    SUBCASE("vanishing-friction limit approaches the two pendulum frequencies") {
        TwoLayerParams p;
        p.c1 = 0.7;
        p.c2 = 1.9;
        p.theta_fric = 1e-8;
        p.eps_fric = 5e-9;
        p.ups_fric = 2e-9;
        p.omega_orb = 10.0;
        Equilibrium eq = equilibrium(p);
        SpectrumResult s = solve_spectrum(build_linear_block(p, eq), p);
        CHECK(std::abs(s.eigenvalues[0] - Coeff(0.0, -std::sqrt(2.0 * p.c1))) <= 1e-6);
        CHECK(std::abs(s.eigenvalues[1] - Coeff(0.0, -std::sqrt(2.0 * p.c2))) <= 1e-6);
    }

    SUBCASE("colliding pairs are reported, not silently mangled") {
        TwoLayerParams p;
        p.c1 = 1.0;
        p.c2 = 1.0;
        p.theta_fric = 1e-9;
        p.eps_fric = 5e-10;
        p.ups_fric = 2e-10;
        p.omega_orb = 10.0;
        Equilibrium eq = equilibrium(p);
        CHECK(thrown_code([&] { solve_spectrum(build_linear_block(p, eq), p); }) ==
              Err::degenerate_spectrum);
    }
}

TEST_CASE("budget: formula cases, flags, and the exponential horizon") {
    TwoLayerParams p = reference_instance();

    SUBCASE("reference instance values") {
        BudgetConstants b = compute_budget(p, 24.0, 0.01);
        CHECK(b.mu0 == doctest::Approx(24.0 * 1.3).epsilon(1e-15));
        CHECK(b.mu1 == doctest::Approx(24.0 * 1.3 * 8e-4 * 8e-4).epsilon(1e-15));
        CHECK(b.gamma1 == doctest::Approx(0.02 / 3.0).epsilon(1e-15));
        CHECK(b.eps_star == doctest::Approx(7.835656838745702e-05).epsilon(1e-12));
        CHECK(b.flag_mu0);
        CHECK(b.flag_mu1);
        CHECK(b.feasible());
        CHECK(b.T_horizon > 1e100);  // e^{gamma1/mu1} with gamma1/mu1 ~ 334
        CHECK(std::isfinite(b.T_horizon));

        // The overload taking a precomputed spectrum agrees.
        Equilibrium eq = equilibrium(p);
        SpectrumResult s = solve_spectrum(build_linear_block(p, eq), p);
        BudgetConstants b2 = compute_budget(p, 24.0, 0.01, s);
        CHECK(b2.mu0 == b.mu0);
        CHECK(b2.mu1 == b.mu1);
        CHECK(b2.eps_star == b.eps_star);
        CHECK(b2.T_horizon == b.T_horizon);
    }

    SUBCASE("tidal term can dominate mu0") {
        TwoLayerParams q = p;
        q.eps0 = 1e-3;
        q.r_over_a = 0.1;  // (r/a)^2/(eps0 Cmin) = 10 > c2
        BudgetConstants b = compute_budget(q, 24.0, 0.01);
        CHECK(b.mu0 == doctest::Approx(240.0).epsilon(1e-15));
        // mu1 now picks up the mu0 * r/a slot.
        CHECK(b.mu1 == doctest::Approx(24.0 * 240.0 * 0.1).epsilon(1e-15));
    }

    SUBCASE("horizon grows as the remainder budget shrinks, and saturates to infinity") {
        TwoLayerParams small = p;
        small.eps0 = 7e-4;
        double t8 = compute_budget(p, 24.0, 0.01).T_horizon;
        double t7 = compute_budget(small, 24.0, 0.01).T_horizon;
        CHECK(std::isfinite(t8));
        CHECK(std::isfinite(t7));
        CHECK(t7 > t8);
        TwoLayerParams tiny = p;
        tiny.eps0 = 4e-4;  // gamma1/mu1 ~ 1335 > 700: exp overflows to the cap
        CHECK(std::isinf(compute_budget(tiny, 24.0, 0.01).T_horizon));
    }

    SUBCASE("gamma1 is capped by the rotation rate") {
        TwoLayerParams slow = p;
        slow.omega_orb = 1e-3;  // slower than ups/3
        Equilibrium eq = equilibrium(slow);
        SpectrumResult s = solve_spectrum(build_linear_block(slow, eq), slow);
        BudgetConstants b = compute_budget(slow, 24.0, 0.01, s);
        CHECK(b.gamma1 == 1e-3);
    }
}

TEST_CASE("averaging step keeps exactly the angle-average terms") {
    TwoLayerParams p = reference_instance();
    PerturbationInputs pert;
    pert.tilde.component(1).set(mk({0, 0, 0, 0, 1}), Coeff(0.0, -1e-5));
    pert.tilde.component(1).set(mk({0, 0, 0, 0, -1}), Coeff(0.0, 1e-5));
    pert.tilde.component(3).set(mk({0, 0, 1, 0, 2}), Coeff(2e-5, 0.0));
    pert.tilde.component(3).set(mk({0, 0, 1, 0, -2}), Coeff(2e-5, 0.0));
    pert.hat.component(1).set(mk({2, 0, 0, 0, 0}), Coeff(1e-5, 0.0));
    Equilibrium eq = equilibrium(p);
    LinearizedSystem sys = build_linearized_field(p, eq, pert, 9);

    IterationOptions io;
    io.order_cap = 9;
    TFVectorField g0(4, 1);
    Radii w0{p.eps0 / 4.0, p.s0 / 4.0};
    const int K = 30;
    IterationOutcome out = iteration_step(sys.freq, g0, sys.p0, sys.u0, w0,
                                          Lattice::fourier_average(), K, p.omega_orb, io);

    // g_next must be the literal angle average of P0 (all k = 0 terms, any
    // slow order), with coefficients carried through untouched.
    TFVectorField expected = project_lattice(project_order(sys.p0, 2 * K - 1),
                                             Lattice::fourier_average());
    for (int h = 0; h < 5; ++h) {
        for (const auto& [idx, c] : expected.component(h).terms())
            CHECK(out.g_next.component(h).at(idx) == c);
        for (const auto& [idx, c] : out.g_next.component(h).terms()) {
            CHECK(idx.v[4] == 0);
            CHECK(expected.component(h).at(idx) == c);
        }
    }
    // The generator lives purely on the oscillating part.
    for (int h = 0; h < 5; ++h)
        for (const auto& [idx, c] : out.generator.y.component(h).terms()) {
            CHECK(idx.v[4] != 0);
            (void)c;
        }
    // With omega = 1e11 the removal is nearly free of domain cost in norm:
    // [[P1~]] <= const mu0^2/omega is checked end-to-end in the pipeline test.
    CHECK(out.p_next_norm <= 1e-6);
}

TEST_CASE("pipeline: zero forcing reproduces the block exponents exactly") {
    TwoLayerParams p = reference_instance();
    PipelineOptions opts;
    opts.order_cap = 5;
    opts.scan_nonresonance = false;
    PipelineReport rep = main_pipeline(p, PerturbationInputs{}, opts);

    INFO(rep.ledger.to_text());
    CHECK(rep.all_pass());

    // No forcing and an odd-only remainder: nothing lands on the resonant
    // lattice, so the exponent shifts vanish up to diagonalization dust.
    for (int j = 0; j < 4; ++j) {
        CAPTURE(j);
        CHECK(std::abs(rep.lambda_shift[static_cast<std::size_t>(j)]) <= 1e-13);
        CHECK(rep.lambda_hat[static_cast<std::size_t>(j)].real() < 0.0);
    }
    CHECK(std::abs(rep.omega_shift) <= 1e-13);
    // [[P2]] ~ 2.8e-6 is far below the one-sweep threshold e^{-K1 tau} gamma1/e,
    // so the normal form legitimately finishes in a single sweep.
    CHECK(rep.nf.steps == 1);
    CHECK(rep.nf.short_circuit);
    CHECK(rep.u3.eps == doctest::Approx(rep.budget.eps_star).epsilon(1e-12));
    CHECK(rep.eps_star == rep.u3.eps);
}

TEST_CASE("pipeline: forced reference instance closes every certified inequality") {
    TwoLayerParams p = reference_instance();
    PerturbationInputs pert;
    // 2e-5 sin(ell) torque on the shell momentum, 3e-5 cos(ell) on the core.
    pert.tilde.component(1).set(mk({0, 0, 0, 0, 1}), Coeff(0.0, -1e-5));
    pert.tilde.component(1).set(mk({0, 0, 0, 0, -1}), Coeff(0.0, 1e-5));
    pert.tilde.component(3).set(mk({0, 0, 0, 0, 1}), Coeff(1.5e-5, 0.0));
    pert.tilde.component(3).set(mk({0, 0, 0, 0, -1}), Coeff(1.5e-5, 0.0));
    // Steady torque curvature on the shell, plus a tiny extra friction that
    // lands on the resonant lattice and genuinely shifts the exponents.
    pert.hat.component(1).set(mk({2, 0, 0, 0, 0}), Coeff(1e-5, 0.0));
    pert.hat.component(1).set(mk({0, 1, 0, 0, 0}), Coeff(-1e-8, 0.0));

    PipelineReport rep = main_pipeline(p, pert);

    INFO(rep.ledger.to_text());
    CHECK(rep.all_pass());

    // Step controls came out as designed.  (Sequential blocks, not subcases:
    // the pipeline is expensive and must not be re-entered per section.)
    {
        CHECK(rep.K0 == 88);
        CHECK(rep.tau0 == doctest::Approx(0.25).epsilon(1e-15));
        CHECK(rep.sigma_bar == doctest::Approx(0.0625).epsilon(1e-15));
        int expect_k1 = static_cast<int>(std::floor(
            rep.gamma1 / (2.0 * default_C_star() * rep.budget.mu1 * rep.sigma_bar)));
        CHECK(rep.K1 == expect_k1);
        CHECK(rep.K1 * rep.sigma_bar >= std::log(12.0));
        CHECK(rep.nonres.worst_value >= rep.gamma1);
        CHECK(rep.u2.eps == doctest::Approx(1.567131367749140e-04).epsilon(1e-12));
    }

    // Exponent shifts are real effects, within budget, and damping survives.
    {
        double max_shift = 0.0;
        for (int j = 0; j < 4; ++j) {
            max_shift = std::max(max_shift,
                                 std::abs(rep.lambda_shift[static_cast<std::size_t>(j)]));
            CHECK(rep.lambda_hat[static_cast<std::size_t>(j)].real() < 0.0);
            CHECK(std::abs(rep.lambda_hat[static_cast<std::size_t>(j)] -
                           rep.freq2.lambda[static_cast<std::size_t>(j)]) <=
                  rep.budget.mu1 / 2.0);
        }
        CHECK(max_shift > 1e-12);          // the friction tweak was picked up
        CHECK(max_shift <= rep.budget.mu1 / 2.0);
        CHECK(std::abs(rep.omega_shift) == 0.0);  // no angle-row forcing average
    }

    // Key ledger rows carry the expected quantities.
    {
        const LedgerRow* r0 = find_row(rep.ledger, "raw field within budget");
        REQUIRE(r0 != nullptr);
        CHECK(r0->claimed == doctest::Approx(rep.budget.mu0).epsilon(1e-15));
        CHECK(r0->measured > 20.0);  // the kinematic rows alone weigh ~27
        const LedgerRow* r2 = find_row(rep.ledger, "diagonalized remainder");
        REQUIRE(r2 != nullptr);
        CHECK(r2->measured <= rep.budget.mu1);
        CHECK(r2->measured > 1e-6);  // the cubic remainder is genuinely there
        const LedgerRow* r3 = find_row(rep.ledger, "exponentially small remainder");
        REQUIRE(r3 != nullptr);
        CHECK(r3->measured <= r3->claimed);
        CHECK(rep.nf.p_star_norm <= rep.nf.decay_claimed * (1.0 + 1e-12));
    }

    // The report is deterministic across repeated runs.
    {
        PipelineReport rep2 = main_pipeline(p, pert);
        CHECK(report_to_text(rep) == report_to_text(rep2));
    }
}
