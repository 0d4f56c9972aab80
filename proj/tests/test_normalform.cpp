#include <doctest.h>

#include <array>
#include <cmath>
#include <complex>
#include <string>
#include <vector>

#include "tfnf/normalform.hpp"
#include "tfnf/rng.hpp"
#include "tfnf/tfseries.hpp"

using namespace tfnf;

namespace {

MultiIndex mk(std::initializer_list<int> entries) {
    MultiIndex idx;
    int i = 0;
    for (int e : entries) idx.v[static_cast<std::size_t>(i++)] = static_cast<std::int16_t>(e);
    return idx;
}

constexpr double kEuler = 2.718281828459045235360287471353;

/// Random field with terms of order <= max_order and coefficients of size
/// ~scale (independent of library RNG plumbing: SplitMix64 is fixed).
TFVectorField random_field(int m, int n, int max_order, double scale, SplitMix64& rng) {
    TFVectorField x(m, n);
    for (int h = 0; h < m + n; ++h)
        for (const auto& idx : enumerate_indices(m, n, max_order))
            if (rng.uniform01() < 0.4)
                x.component(h).set(idx, Coeff(rng.uniform(-scale, scale), rng.uniform(-scale, scale)));
    return x;
}

// --- tiny independent 2x2 matrix oracle for the Lie series ---------------------

using C = std::complex<double>;
using Mat2 = std::array<std::array<C, 2>, 2>;

Mat2 matmul(const Mat2& a, const Mat2& b) {
    Mat2 r{};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            C s(0.0, 0.0);
            for (int k = 0; k < 2; ++k) s += a[i][k] * b[k][j];
            r[i][j] = s;
        }
    return r;
}

Mat2 matexp(const Mat2& a) {
    Mat2 x{};
    Mat2 term{};
    for (int i = 0; i < 2; ++i) {
        x[i][i] = C(1.0, 0.0);
        term[i][i] = C(1.0, 0.0);
    }
    for (int k = 1; k <= 60; ++k) {
        term = matmul(term, a);
        for (auto& row : term)
            for (auto& e : row) e /= static_cast<double>(k);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) x[i][j] += term[i][j];
    }
    return x;
}

TFVectorField linear_slow_field(const Mat2& a) {
    TFVectorField x(2, 0);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            if (a[i][j] != C(0.0, 0.0)) x.component(i).set(MultiIndex::unit(j), a[i][j]);
    return x;
}

}  // namespace

TEST_SUITE("normalform") {

TEST_CASE("frequency pairing and divisors") {
    Frequencies freq;
    freq.lambda = {Coeff(-0.5, 0.25)};
    freq.omega = {2.0};
    // pairing of (alpha, k) = lambda*alpha + i*omega*k
    CHECK(freq.pairing(mk({3, -2})) == Coeff(-1.5, 0.75 - 4.0));
    // slow component divisor subtracts the unit exponent first
    CHECK(freq.divisor(mk({1, 1}), 0) == -Coeff(0.0, 2.0));
    // angle component divisor uses the index as is
    CHECK(freq.divisor(mk({1, 1}), 1) == -Coeff(-0.5, 0.25 + 2.0));

    TFVectorField nf = freq.vector_field();
    CHECK(nf.component(0).at(mk({1, 0})) == Coeff(-0.5, 0.25));
    CHECK(nf.component(1).at(mk({0, 0})) == Coeff(2.0, 0.0));
    CHECK(freq.magnitude() == doctest::Approx(std::abs(Coeff(-0.5, 0.25)) + 2.0));
}

TEST_CASE("homological equation: single rotational harmonic") {
    // One angle, frequency 1, right-hand side e^{i phi} on the angle row.
    // Dividing by -(i omega k) = -i gives exactly i e^{i phi}.
    Frequencies freq;
    freq.omega = {1.0};
    TFVectorField z(0, 1);
    z.component(0).set(mk({1}), Coeff(1.0, 0.0));
    TFVectorField y = solve_homological(freq, z, Lattice::zero(), kNoCap, 0.5);
    CHECK(y.component(0).size() == 1);
    CHECK(y.component(0).at(mk({1})) == Coeff(0.0, 1.0));

    // And the defining equation holds exactly: [Y, N] = Z.
    TFVectorField resid = sub(lie_bracket(y, freq.vector_field()), z);
    CHECK(weighted_field_norm(resid, Domain{1.0, 1.0}, Radii{1.0, 1.0}) == 0.0);
}

TEST_CASE("homological equation: residual, projections and componentwise bound") {
    Frequencies freq;
    freq.lambda = {Coeff(-0.6, 0.1)};
    freq.omega = {1.0};
    const Lattice lam = Lattice::zero();
    const int K = 5;
    const NonresonanceCertificate cert = check_nonresonant(freq, 0.3, lam, K);
    CHECK(cert.worst_value >= 0.3);

    SplitMix64 rng(424242u);
    const Domain u{0.4, 0.5};
    const Radii w{0.1, 0.1};
    for (int trial = 0; trial < 10; ++trial) {
        TFVectorField z = project_lattice_complement(random_field(1, 1, K, 1.0, rng), lam);
        TFVectorField y = solve_homological(freq, z, lam, K, 0.3);

        // (i) the solution carries no resonant and no over-order term
        CHECK(project_lattice(y, lam).empty());
        CHECK(y.max_order() <= K);
        // (ii) componentwise majorant bound ||Y_h|| <= ||Z_h||/gamma
        for (int h = 0; h < 2; ++h) {
            const double zn = component_norm(z.component(h), u);
            const double yn = component_norm(y.component(h), u);
            CHECK(yn <= zn / 0.3 * (1.0 + 1e-13));
        }
        // (iii) the equation holds up to roundoff
        TFVectorField resid = sub(lie_bracket(y, freq.vector_field()), z);
        const double rn = weighted_field_norm(resid, u, w);
        const double zn = weighted_field_norm(z, u, w);
        CHECK(rn <= 1e-10 * zn);
    }
}

TEST_CASE("homological equation rejects resonant and over-order right-hand sides") {
    Frequencies freq;
    freq.lambda = {Coeff(-0.01, 0.0)};
    freq.omega = {1.0};

    // Resonant term: slow row, index (1|0) translates to the origin.
    TFVectorField z1(1, 1);
    z1.component(0).set(mk({1, 0}), Coeff(1.0, 0.0));
    CHECK_THROWS_WITH_AS(solve_homological(freq, z1, Lattice::zero(), kNoCap, 0.5),
                         doctest::Contains("resonant term"), Error);

    // Order above the declared cutoff.
    TFVectorField z2(1, 1);
    z2.component(1).set(mk({3, 1}), Coeff(1.0, 0.0));
    CHECK_THROWS_WITH_AS(solve_homological(freq, z2, Lattice::zero(), 2, 0.5),
                         doctest::Contains("above the cutoff"), Error);

    // Small divisor: slow row (2|0) has divisor lambda*(1) = 0.01 < gamma.
    TFVectorField z3(1, 1);
    z3.component(0).set(mk({2, 0}), Coeff(1.0, 0.0));
    try {
        solve_homological(freq, z3, Lattice::zero(), kNoCap, 0.5);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Err::small_divisor);
    }
}

TEST_CASE("nonresonance scan: rotational frequencies with the zero lattice") {
    Frequencies freq;
    freq.omega = {1.0};
    NonresonanceCertificate cert = check_nonresonant(freq, 1.0, Lattice::zero(), 6);
    CHECK(cert.worst_value == doctest::Approx(1.0));
    CHECK(cert.gamma == 1.0);
    CHECK(cert.K == 6);
}

TEST_CASE("nonresonance scan: exact resonance is reported with its index") {
    // Conjugate elliptic pair: alpha = (1,1) pairs to i - i = 0.
    Frequencies freq;
    freq.lambda = {Coeff(0.0, 1.0), Coeff(0.0, -1.0)};
    try {
        check_nonresonant(freq, 0.1, Lattice::zero(), 3);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Err::resonance_found);
        CHECK(std::string(e.what()).find("gamma") != std::string::npos);
    }
}

TEST_CASE("nonresonance scan: damped slow direction") {
    Frequencies freq;
    freq.lambda = {Coeff(-1.0, 0.0)};
    freq.omega = {1.0};
    // Divisors |-alpha + i k| over translated indices: minimum 1 (at
    // alpha = +-1, k = 0 or alpha = 0, k = +-1).
    NonresonanceCertificate cert = check_nonresonant(freq, 0.5, Lattice::zero(), 8);
    CHECK(cert.worst_value == doctest::Approx(1.0));
}

TEST_CASE("nonresonance scan: angle-average lattice with vanishing slow exponents") {
    // All lambda = 0: every purely slow base is lattice material, the scan
    // reduces to wavenumbers.
    Frequencies freq;
    freq.lambda = {Coeff(0.0, 0.0)};
    freq.omega = {2.3};
    NonresonanceCertificate cert = check_nonresonant(freq, 2.0, Lattice::fourier_average(), 5);
    CHECK(cert.worst_value == doctest::Approx(2.3));

    // With the zero lattice the same frequencies are resonant (the slow
    // bases have exactly vanishing divisors).
    CHECK_THROWS_AS(check_nonresonant(freq, 2.0, Lattice::zero(), 5), Error);
}

TEST_CASE("nonresonance scan: explicit lattice removes selected bases from the scan") {
    Frequencies freq;
    freq.lambda = {Coeff(-0.3, 0.0)};
    freq.omega = {1.0};
    const Lattice lam = Lattice::explicit_list({mk({0, 0}), mk({0, 2})}, 1, 1);
    // Base (0|2) has pairing 2i but is excluded; the worst survivor is the
    // translated slow base (+-1|0) with |pairing| = 0.3.
    NonresonanceCertificate cert = check_nonresonant(freq, 0.25, lam, 4);
    CHECK(cert.worst_value == doctest::Approx(0.3));
    CHECK(cert.worst_index.order() == 1);
    // Raising gamma above that worst value turns the scan into a failure.
    CHECK_THROWS_AS(check_nonresonant(freq, 0.35, lam, 4), Error);
}

TEST_CASE("lattice resonance check") {
    Frequencies freq;
    freq.lambda = {Coeff(0.0, 0.0)};
    freq.omega = {1.5};
    CHECK(check_lambda_resonant(freq, Lattice::zero(), 4));
    CHECK(check_lambda_resonant(freq, Lattice::fourier_average(), 4));
    CHECK_FALSE(check_lambda_resonant(freq, Lattice::full(), 4));

    Frequencies damped;
    damped.lambda = {Coeff(-1e-3, 0.0)};
    damped.omega = {1.5};
    CHECK_FALSE(check_lambda_resonant(damped, Lattice::fourier_average(), 4));

    // Conjugate pair: lambda.(1,1) = 0, so the diagonal lattice is resonant.
    Frequencies pair;
    pair.lambda = {Coeff(0.0, 1.0), Coeff(0.0, -1.0)};
    CHECK(check_lambda_resonant(pair, Lattice::explicit_list({mk({1, 1})}, 2, 0), 4));
    CHECK_FALSE(check_lambda_resonant(pair, Lattice::explicit_list({mk({1, 0})}, 2, 0), 4));
}

TEST_CASE("Lie series on linear fields matches the matrix conjugation oracle") {
    // Y = B zeta, W = A zeta: the transported field is e^{-B} A e^{B} zeta.
    Mat2 b{{{C(0.0, 0.0), C(0.015, 0.0)}, {C(-0.01, 0.0), C(0.005, 0.0)}}};
    Mat2 a{{{C(1.0, 0.0), C(0.5, 0.0)}, {C(0.0, 0.0), C(-0.7, 0.0)}}};
    const TFVectorField y = linear_slow_field(b);
    const TFVectorField w_field = linear_slow_field(a);
    const Domain u{0.5, 1.0};
    const Radii w{0.1, 0.1};

    LieSeriesResult res = lie_series_apply(y, w_field, u, w);
    CHECK(res.q < 1.0);
    CHECK(res.q == doctest::Approx(kEuler * weighted_field_norm(y, grow(u, w), w)));

    Mat2 expb = matexp(b);
    Mat2 bneg = b;
    for (auto& row : bneg)
        for (auto& e : row) e = -e;
    Mat2 expected = matmul(matexp(bneg), matmul(a, expb));
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            const Coeff got = res.field.component(i).at(MultiIndex::unit(j));
            CHECK(std::abs(got - expected[i][j]) <= 1e-12 * (1.0 + std::abs(expected[i][j])));
        }
    // The reported tail allowance is consistent with the tolerance target.
    CHECK(res.tail_bound <= 1e-10 * weighted_field_norm(w_field, u, w));
}

TEST_CASE("Lie series partial sums match manual bracket accumulation") {
    SplitMix64 rng(7u);
    TFVectorField y = random_field(1, 1, 2, 0.001, rng);
    TFVectorField w_field = random_field(1, 1, 3, 1.0, rng);
    const Domain u{0.4, 0.4};
    const Radii w{0.1, 0.1};

    LieSeriesOptions opts;
    opts.max_terms = 4;  // powers 0..3
    LieSeriesResult res = lie_series_apply(y, w_field, u, w, opts);

    TFVectorField manual = w_field;
    TFVectorField t = w_field;
    double fact = 1.0;
    for (int k = 1; k <= 3; ++k) {
        t = lie_bracket(y, t);
        fact *= k;
        manual.add_in_place(t, Coeff(1.0 / fact, 0.0));
    }
    CHECK(weighted_field_norm(sub(res.field, manual), u, w) <=
          1e-14 * weighted_field_norm(manual, u, w));
    CHECK(res.terms_used == 4);

    // Divergence guard: a generator with e*[[Y]] >= 1 is rejected.
    TFVectorField big = scale(y, Coeff(1e4, 0.0));
    CHECK_THROWS_AS(lie_series_apply(big, w_field, u, w), Error);
}

TEST_CASE("bracket norm inequality with shifted weights") {
    // [[L_Y W]]^{u0-u+w}_{u-w} <= [[Y]]^w_{u-w} [[W]]^{u0-u+w}_u
    //                            + [[W]]^{u0-u+w}_{u-w} [[Y]]^{u0-u+w}_{u0}
    // for Y analytic on u0, W on u, w < u <= u0.
    SplitMix64 rng(991u);
    const Domain u0{1.0, 0.8};
    const Domain u{0.7, 0.6};
    const Radii w{0.2, 0.15};
    const Radii shifted{u0.eps - u.eps + w.rho, u0.s - u.s + w.sigma};
    const Domain u_minus = shrink(u, w);
    for (int trial = 0; trial < 10; ++trial) {
        TFVectorField y = random_field(1, 1, 4, 0.5, rng);
        TFVectorField x = random_field(1, 1, 4, 0.5, rng);
        const double lhs = weighted_field_norm(lie_bracket(y, x), u_minus, shifted);
        const double rhs = weighted_field_norm(y, u_minus, w) * weighted_field_norm(x, u, shifted) +
                           weighted_field_norm(x, u_minus, shifted) * weighted_field_norm(y, u0, shifted);
        CHECK(lhs <= rhs * (1.0 + 1e-12));
    }
}

TEST_CASE("iterated bracket norms obey the factorial-geometric bound") {
    // [[L_Y^k W]]^w_{u-w} <= k! q^k [[W]]^w_u with q = e [[Y]]^w_{u+w}.
    SplitMix64 rng(5150u);
    const Domain u{0.5, 0.5};
    const Radii w{0.12, 0.12};
    TFVectorField y = random_field(1, 1, 3, 0.0005, rng);
    TFVectorField x = random_field(1, 1, 3, 1.0, rng);
    const double q = kEuler * weighted_field_norm(y, grow(u, w), w);
    REQUIRE(q < 1.0);
    const double wn = weighted_field_norm(x, u, w);
    const Domain u_minus = shrink(u, w);
    TFVectorField t = x;
    double fact = 1.0;
    for (int k = 1; k <= 4; ++k) {
        t = lie_bracket(y, t);
        fact *= k;
        CHECK(weighted_field_norm(t, u_minus, w) <= fact * std::pow(q, k) * wn * (1.0 + 1e-12));
    }
}

TEST_CASE("iteration step: zero perturbation is a fixed point") {
    Frequencies freq;
    freq.lambda = {Coeff(-0.4, 0.0)};
    freq.omega = {1.0};
    TFVectorField p(1, 1), g(1, 1);
    IterationOutcome out = iteration_step(freq, g, p, Domain{0.5, 0.5}, Radii{0.1, 0.1},
                                          Lattice::zero(), 3, 0.4);
    CHECK(out.p_next.empty());
    CHECK(out.g_next.empty());
    CHECK(out.generator.y.empty());
    CHECK(out.p_next_norm == 0.0);
    CHECK(out.ledger.all_pass());
}

TEST_CASE("iteration step: full lattice absorbs everything below the cutoff") {
    Frequencies freq;
    freq.lambda = {Coeff(-0.4, 0.0)};
    freq.omega = {1.0};
    SplitMix64 rng(31u);
    TFVectorField p = random_field(1, 1, 3, 1e-3, rng);
    TFVectorField g(1, 1);
    const int K = 2;  // cutoff 2K = 4 exceeds the maximal order present
    IterationOutcome out = iteration_step(freq, g, p, Domain{0.5, 0.5}, Radii{0.1, 0.1},
                                          Lattice::full(), K, 0.4);
    CHECK(out.generator.y.empty());
    CHECK(out.p_next.empty());
    CHECK(weighted_field_norm(sub(out.g_next, p), Domain{0.5, 0.5}, Radii{0.1, 0.1}) == 0.0);
    CHECK(out.ledger.all_pass());
}

TEST_CASE("iteration step: single rotational harmonic") {
    // One angle, N = d/dphi, P = mu e^{i phi} d/dphi with mu = 1e-3: the
    // step removes the harmonic and leaves a remainder of size O(mu^2).
    Frequencies freq;
    freq.omega = {1.0};
    const double mu = 1e-3;
    TFVectorField p(0, 1);
    p.component(0).set(mk({1}), Coeff(mu, 0.0));
    TFVectorField g(0, 1);
    const Domain u{1.0, 1.0};
    const Radii w{0.2, 0.2};
    const int K = 4;
    check_nonresonant(freq, 1.0, Lattice::zero(), 2 * K);

    IterationOutcome out = iteration_step(freq, g, p, u, w, Lattice::zero(), K, 1.0);

    // The generator is exactly -i mu e^{i phi} (divisor -i).
    CHECK(out.generator.y.component(0).size() == 1);
    CHECK(std::abs(out.generator.y.component(0).at(mk({1})) - Coeff(0.0, -mu)) <= 1e-18);

    // Nothing resonant was produced: G stays empty.
    CHECK(out.g_next.empty());

    // The remainder is quadratically small and within the step bound.
    const double p_norm = weighted_field_norm(p, u, w);
    CHECK(out.p_next_norm <= 50.0 * p_norm * p_norm);
    CHECK(out.p_next_norm <= out.p_next_claimed);
    CHECK(out.ledger.all_pass());

    // Generator invariants: no resonant term, support below the cutoff 2K.
    CHECK(project_lattice(out.generator.y, Lattice::zero()).empty());
    CHECK(out.generator.y.max_order() <= 2 * K - 1);
    CHECK(out.generator.q < 1.0);
}

TEST_CASE("iteration step: remainder bound holds with a nonzero normal-form part") {
    Frequencies freq;
    freq.lambda = {Coeff(-0.5, 0.0)};
    freq.omega = {1.0};
    const Lattice lam = Lattice::zero();
    SplitMix64 rng(606u);
    const Domain u{0.5, 0.5};
    const Radii w{0.1, 0.1};
    const int K = 3;

    // A resonant correction G (supported on the translated lattice) and a
    // generic perturbation.
    TFVectorField g(1, 1);
    g.component(0).set(mk({1, 0}), Coeff(5e-4, 0.0));
    TFVectorField p = random_field(1, 1, 4, 2e-4, rng);

    IterationOutcome out = iteration_step(freq, g, p, u, w, lam, K, 0.5);
    CHECK(out.p_next_norm <= out.p_next_claimed);
    CHECK(out.bracket_g_norm > 0.0);
    CHECK(out.ledger.all_pass());
    // The resonant part of P moved into G.
    TFVectorField expected_g = add(g, project_lattice(project_order(p, 2 * K - 1), lam));
    CHECK(weighted_field_norm(sub(out.g_next, expected_g), u, w) == 0.0);
}

TEST_CASE("iteration step rejects an unreduced normal-form part") {
    Frequencies freq;
    freq.omega = {1.0};
    TFVectorField g(0, 1);
    g.component(0).set(mk({2}), Coeff(1.0, 0.0));  // k != 0: not resonant
    TFVectorField p(0, 1);
    try {
        iteration_step(freq, g, p, Domain{1.0, 1.0}, Radii{0.2, 0.2}, Lattice::zero(), 3, 1.0);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Err::precondition_violated);
    }
}

TEST_CASE("iteration step enforces the smallness condition") {
    Frequencies freq;
    freq.omega = {1.0};
    TFVectorField p(0, 1);
    p.component(0).set(mk({1}), Coeff(1.0, 0.0));  // e*[[P]]/gamma >> 1
    TFVectorField g(0, 1);
    try {
        iteration_step(freq, g, p, Domain{1.0, 1.0}, Radii{0.2, 0.2}, Lattice::zero(), 3, 1e-3);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Err::smallness_violated);
    }
}

TEST_CASE("split tail decay rates honor missing variable blocks") {
    const Domain u{1.0, 4.0};
    const Radii w{0.25, 1.0};
    // Both blocks: the generic formula.
    TailDecay both = tail_decay_rate(u, w, 1, 1);
    CHECK(both.tau == doctest::Approx(std::min(1.0, std::log(1.0 / (1.0 - 0.25)))));
    CHECK(both.sigma_bar == doctest::Approx(0.25));
    // No slow block: only the strip narrows.
    TailDecay angles = tail_decay_rate(u, w, 0, 1);
    CHECK(angles.tau == doctest::Approx(1.0));
    CHECK(angles.sigma_bar == doctest::Approx(1.0));
    // No angle block: only the polydisc shrinks.
    TailDecay slow = tail_decay_rate(u, w, 1, 0);
    CHECK(slow.tau == doctest::Approx(std::log(1.0 / (1.0 - 0.25))));
    CHECK(slow.sigma_bar == doctest::Approx(0.25));
}

TEST_CASE("normal form: zero perturbation short-circuits") {
    Frequencies freq;
    freq.omega = {1.0};
    TFVectorField p(0, 1);
    NormalFormOutcome out = normalize(freq, p, Domain{1.0, 1.0}, Radii{0.05, 0.2},
                                      Lattice::zero(), 15, 1.0, default_C_star());
    CHECK(out.short_circuit);
    CHECK(out.steps == 1);
    CHECK(out.p_star.empty());
    CHECK(out.g_star.empty());
    CHECK(out.p_star_norm == 0.0);
    CHECK(out.ledger.all_pass());
}

TEST_CASE("normal form rejects an insufficient cutoff") {
    Frequencies freq;
    freq.omega = {1.0};
    TFVectorField p(0, 1);
    p.component(0).set(mk({1}), Coeff(1e-6, 0.0));
    try {
        normalize(freq, p, Domain{1.0, 1.0}, Radii{0.1, 0.1}, Lattice::zero(), 1, 1.0,
                  default_C_star());
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Err::ksigma_too_small);
    }
}

TEST_CASE("normal form rejects an oversized perturbation") {
    Frequencies freq;
    freq.omega = {1.0};
    TFVectorField p(0, 1);
    p.component(0).set(mk({1}), Coeff(0.3, 0.0));
    try {
        normalize(freq, p, Domain{1.0, 1.2}, Radii{0.1, 0.25}, Lattice::zero(), 10, 1.0,
                  default_C_star());
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Err::smallness_violated);
    }
}

TEST_CASE("normal form: single harmonic at K sigma_bar = 8") {
    // One angle, omega = 1, P = mu e^{i phi} d/dphi on a wide strip: K
    // sigma_bar = 8 gives p* = 3 extra steps and a guaranteed decay factor
    // e^{-2}.
    Frequencies freq;
    freq.omega = {1.0};
    const double mu = 1e-5;
    TFVectorField p(0, 1);
    p.component(0).set(mk({1}), Coeff(mu, 0.0));
    const Domain u{1.0, 4.2};
    const Radii w{0.1, 1.0};
    const int K = 8;
    const double gamma = 1.0;
    check_nonresonant(freq, gamma, Lattice::zero(), 2 * K);

    NormalFormOutcome out =
        normalize(freq, p, u, w, Lattice::zero(), K, gamma, default_C_star());

    CHECK_FALSE(out.short_circuit);
    CHECK(out.steps == 4);  // 1 + floor(8/log 12)
    CHECK(out.generators.size() == 4);

    // Every certified inequality holds, including the per-step halving and
    // the final decay e^{-K sigma_bar/4} = e^{-2}.
    CHECK(out.ledger.all_pass());
    CHECK(out.decay_claimed == doctest::Approx(std::exp(-2.0) * out.p0_norm));
    CHECK(out.p_star_norm <= out.decay_claimed);

    // Close-to-identity data.
    CHECK(out.close_to_id <= out.close_to_id_claimed);
    CHECK(out.close_to_id_claimed == doctest::Approx(2.0 * out.p0_norm / gamma));

    // Structural invariants of the outputs.
    for (const GeneratorStep& gen : out.generators) {
        CHECK(gen.q < 1.0);
        CHECK(project_lattice(gen.y, Lattice::zero()).empty());
        CHECK(gen.y.max_order() <= 2 * K - 1);
    }
    TFVectorField g_proj =
        project_lattice(project_order(out.g_star, 2 * K - 1), Lattice::zero());
    CHECK(weighted_field_norm(sub(out.g_star, g_proj), out.u_final, w) == 0.0);

    // The final domain lost exactly four step widths.
    CHECK(out.u_final.eps == doctest::Approx(u.eps - 4.0 * w.rho));
    CHECK(out.u_final.s == doctest::Approx(u.s - 4.0 * w.sigma));
}

TEST_CASE("normal form: tiny perturbation takes the one-sweep branch") {
    Frequencies freq;
    freq.omega = {1.0};
    TFVectorField p(0, 1);
    p.component(0).set(mk({1}), Coeff(1e-9, 0.0));
    const Domain u{1.0, 4.2};
    const Radii w{0.1, 1.0};
    NormalFormOutcome out =
        normalize(freq, p, u, w, Lattice::zero(), 8, 1.0, default_C_star());
    CHECK(out.short_circuit);
    CHECK(out.steps == 1);
    CHECK(out.ledger.all_pass());
    CHECK(out.p_star_norm <= out.decay_claimed);
}

TEST_CASE("normal form: a weakened constant fails its floor rows but still runs") {
    Frequencies freq;
    freq.omega = {1.0};
    TFVectorField p(0, 1);
    p.component(0).set(mk({1}), Coeff(1e-5, 0.0));
    NormalFormOutcome out = normalize(freq, p, Domain{1.0, 4.2}, Radii{0.1, 1.0},
                                      Lattice::zero(), 8, 1.0, 1.0);
    CHECK_FALSE(out.ledger.all_pass());
    int floor_failures = 0;
    for (const LedgerRow& row : out.ledger.rows)
        if (row.label.find("constant floor") != std::string::npos && !row.pass) ++floor_failures;
    CHECK(floor_failures == 3);
    // The analytic content is unaffected: the remainder still decayed.
    CHECK(out.p_star_norm <= out.decay_claimed);
}

TEST_CASE("ledger export is tabular and reproducible") {
    Ledger led;
    led.add("1", "sample bound", 2.0, 1.0);
    led.add("2", "violated bound", 1.0, 3.0);
    const std::string text = led.to_text();
    CHECK(text.find("step") != std::string::npos);
    CHECK(text.find("claimed") != std::string::npos);
    CHECK(text.find("PASS") != std::string::npos);
    CHECK(text.find("FAIL") != std::string::npos);
    CHECK(text == led.to_text());
    CHECK_FALSE(led.all_pass());
}

}  // TEST_SUITE
