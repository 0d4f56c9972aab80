#include "tfnf/twolayer.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include "tfnf/textio.hpp"

namespace tfnf {
namespace {

MultiIndex mi(int a0, int a1, int a2, int a3, int k) {
    MultiIndex r{};
    r.v[0] = static_cast<std::int16_t>(a0);
    r.v[1] = static_cast<std::int16_t>(a1);
    r.v[2] = static_cast<std::int16_t>(a2);
    r.v[3] = static_cast<std::int16_t>(a3);
    r.v[4] = static_cast<std::int16_t>(k);
    return r;
}

/// Coefficient of x^o in sin(2x): 2^o (-1)^((o-1)/2) / o! for odd o.
double sin2_coefficient(int o) {
    double c = 1.0;
    for (int j = 1; j <= o; ++j) c *= 2.0 / static_cast<double>(j);
    return (((o - 1) / 2) % 2 == 0) ? c : -c;
}

/// Coefficient of x^o in cos(2x): 2^o (-1)^(o/2) / o! for even o.
double cos2_coefficient(int o) {
    double c = 1.0;
    for (int j = 1; j <= o; ++j) c *= 2.0 / static_cast<double>(j);
    return ((o / 2) % 2 == 0) ? c : -c;
}

/// Adds c * sin(2 * zeta_var) truncated at `cap` to component `z`,
/// starting at order `min_order` (1 for the full sine, 3 to keep only the
/// remainder after the linear part is split off).
void add_sin2_series(TFComponent& z, int var, double c, int cap, int min_order,
                     bool* truncated) {
    if (c == 0.0) return;
    for (int o = min_order; o <= cap; o += 2) {
        MultiIndex idx{};
        idx.v[static_cast<std::size_t>(var)] = static_cast<std::int16_t>(o);
        z.add(idx, Coeff(c * sin2_coefficient(o), 0.0));
    }
    if (truncated) *truncated = true;  // the sine series never terminates
}

/// Adds c * (cos(2 * zeta_var) - 1) truncated at `cap` (orders 2, 4, ...).
void add_cos2_minus_one_series(TFComponent& z, int var, double c, int cap,
                               bool* truncated) {
    if (c == 0.0) return;
    for (int o = 2; o <= cap; o += 2) {
        MultiIndex idx{};
        idx.v[static_cast<std::size_t>(var)] = static_cast<std::int16_t>(o);
        z.add(idx, Coeff(c * cos2_coefficient(o), 0.0));
    }
    if (truncated) *truncated = true;
}

void require_forcing_shapes(const PerturbationInputs& pert) {
    pert.tilde.require_shape(4, 1, "oscillating forcing");
    pert.hat.require_shape(4, 1, "steady forcing");
}

void require_zero_angle_average(const TFVectorField& tilde) {
    for (int h = 0; h < tilde.components(); ++h) {
        for (const auto& [idx, c] : tilde.component(h).terms()) {
            if (idx.v[4] == 0 && c != Coeff(0.0, 0.0))
                throw Error(Err::perturbation_average_nonzero,
                            "oscillating forcing has a nonzero angle average in component " +
                                std::to_string(h) + " at " + idx.to_string(4, 1));
        }
    }
}

// --- small complex linear algebra -------------------------------------------------

using Mat4 = std::array<std::array<Coeff, 4>, 4>;

Mat4 mat_mul(const Mat4& a, const Mat4& b) {
    Mat4 r{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            Coeff s(0.0, 0.0);
            for (int k = 0; k < 4; ++k) s += a[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * b[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
            r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = s;
        }
    return r;
}

Mat4 mat_inverse(const Mat4& a) {
    // Gauss-Jordan with partial pivoting on [A | I].
    std::array<std::array<Coeff, 8>, 4> w{};
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) w[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        w[static_cast<std::size_t>(i)][static_cast<std::size_t>(i + 4)] = Coeff(1.0, 0.0);
    }
    double scale = 0.0;
    for (const auto& row : a)
        for (const Coeff& c : row) scale = std::max(scale, std::abs(c));
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(w[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)]) > std::abs(w[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)])) piv = r;
        if (std::abs(w[static_cast<std::size_t>(piv)][static_cast<std::size_t>(col)]) <= 1e-14 * scale)
            throw Error(Err::singular_eigenbasis, "eigenvector basis is numerically singular");
        std::swap(w[static_cast<std::size_t>(piv)], w[static_cast<std::size_t>(col)]);
        Coeff d = w[static_cast<std::size_t>(col)][static_cast<std::size_t>(col)];
        for (int j = 0; j < 8; ++j) w[static_cast<std::size_t>(col)][static_cast<std::size_t>(j)] /= d;
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            Coeff f = w[static_cast<std::size_t>(r)][static_cast<std::size_t>(col)];
            if (f == Coeff(0.0, 0.0)) continue;
            for (int j = 0; j < 8; ++j) w[static_cast<std::size_t>(r)][static_cast<std::size_t>(j)] -= f * w[static_cast<std::size_t>(col)][static_cast<std::size_t>(j)];
        }
    }
    Mat4 inv{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) inv[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = w[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 4)];
    return inv;
}

double mat_inf_norm(const Mat4& a) {
    double best = 0.0;
    for (const auto& row : a) {
        double s = 0.0;
        for (const Coeff& c : row) s += std::abs(c);
        best = std::max(best, s);
    }
    return best;
}

// --- quartic via companion QR ------------------------------------------------------

/// p(x) = poly[0] + poly[1] x + ... + poly[4] x^4 with poly[4] = 1.
Coeff quartic_eval(const std::array<double, 5>& poly, Coeff x) {
    Coeff r(poly[4], 0.0);
    for (int i = 3; i >= 0; --i) r = r * x + Coeff(poly[static_cast<std::size_t>(i)], 0.0);
    return r;
}

Coeff quartic_derivative(const std::array<double, 5>& poly, Coeff x) {
    Coeff r = Coeff(4.0 * poly[4], 0.0);
    for (int i = 3; i >= 1; --i) r = r * x + Coeff(static_cast<double>(i) * poly[static_cast<std::size_t>(i)], 0.0);
    return r;
}

std::array<Coeff, 2> eig2(Coeff a, Coeff b, Coeff c, Coeff d) {
    Coeff tr = a + d;
    Coeff disc = std::sqrt(tr * tr - 4.0 * (a * d - b * c));
    return {(tr + disc) * 0.5, (tr - disc) * 0.5};
}

/// Eigenvalues of the companion matrix of a monic quartic, by explicitly
/// shifted QR (Givens rotations) on the Hessenberg form.
std::array<Coeff, 4> companion_eigenvalues(const std::array<double, 5>& poly) {
    constexpr int n = 4;
    std::array<std::array<Coeff, n>, n> h{};
    for (int i = 0; i + 1 < n; ++i) h[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(i)] = Coeff(1.0, 0.0);
    for (int i = 0; i < n; ++i) h[static_cast<std::size_t>(i)][static_cast<std::size_t>(n - 1)] = Coeff(-poly[static_cast<std::size_t>(i)], 0.0);

    auto subdiag_small = [&](int k) {
        return std::abs(h[static_cast<std::size_t>(k)][static_cast<std::size_t>(k - 1)]) <=
               1e-30 + 1e-15 * (std::abs(h[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(k - 1)]) +
                                std::abs(h[static_cast<std::size_t>(k)][static_cast<std::size_t>(k)]));
    };

    std::array<Coeff, 4> out{};
    int hi = n - 1;
    int guard = 0;
    while (hi >= 0) {
        if (hi == 0) {
            out[0] = h[0][0];
            break;
        }
        int lo = hi;
        while (lo > 0 && !subdiag_small(lo)) --lo;
        if (lo == hi) {
            out[static_cast<std::size_t>(hi)] = h[static_cast<std::size_t>(hi)][static_cast<std::size_t>(hi)];
            --hi;
            continue;
        }
        if (lo == hi - 1) {
            auto e = eig2(h[static_cast<std::size_t>(lo)][static_cast<std::size_t>(lo)], h[static_cast<std::size_t>(lo)][static_cast<std::size_t>(hi)],
                          h[static_cast<std::size_t>(hi)][static_cast<std::size_t>(lo)], h[static_cast<std::size_t>(hi)][static_cast<std::size_t>(hi)]);
            out[static_cast<std::size_t>(hi)] = e[0];
            out[static_cast<std::size_t>(hi - 1)] = e[1];
            hi -= 2;
            continue;
        }
        if (++guard > 500)
            throw Error(Err::degenerate_spectrum, "companion QR iteration failed to converge");

        // Wilkinson shift from the trailing 2x2 of the active window.
        auto e = eig2(h[static_cast<std::size_t>(hi - 1)][static_cast<std::size_t>(hi - 1)], h[static_cast<std::size_t>(hi - 1)][static_cast<std::size_t>(hi)],
                      h[static_cast<std::size_t>(hi)][static_cast<std::size_t>(hi - 1)], h[static_cast<std::size_t>(hi)][static_cast<std::size_t>(hi)]);
        Coeff mu = (std::abs(e[0] - h[static_cast<std::size_t>(hi)][static_cast<std::size_t>(hi)]) <
                    std::abs(e[1] - h[static_cast<std::size_t>(hi)][static_cast<std::size_t>(hi)]))
                       ? e[0]
                       : e[1];

        for (int i = 0; i < n; ++i) h[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] -= mu;
        std::array<Coeff, n> cs{}, sn{};
        for (int j = lo; j < hi; ++j) {
            Coeff a = h[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)];
            Coeff b = h[static_cast<std::size_t>(j + 1)][static_cast<std::size_t>(j)];
            double r = std::hypot(std::abs(a), std::abs(b));
            Coeff c = (r == 0.0) ? Coeff(1.0, 0.0) : a / r;
            Coeff s = (r == 0.0) ? Coeff(0.0, 0.0) : b / r;
            cs[static_cast<std::size_t>(j)] = c;
            sn[static_cast<std::size_t>(j)] = s;
            for (int k = j; k < n; ++k) {
                Coeff x = h[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
                Coeff y = h[static_cast<std::size_t>(j + 1)][static_cast<std::size_t>(k)];
                h[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = std::conj(c) * x + std::conj(s) * y;
                h[static_cast<std::size_t>(j + 1)][static_cast<std::size_t>(k)] = -s * x + c * y;
            }
        }
        for (int j = lo; j < hi; ++j) {
            Coeff c = cs[static_cast<std::size_t>(j)];
            Coeff s = sn[static_cast<std::size_t>(j)];
            for (int i = 0; i < n; ++i) {
                Coeff x = h[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                Coeff y = h[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)];
                h[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = c * x + s * y;
                h[static_cast<std::size_t>(i)][static_cast<std::size_t>(j + 1)] = -std::conj(s) * x + std::conj(c) * y;
            }
        }
        for (int i = 0; i < n; ++i) h[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] += mu;
    }
    return out;
}

struct PencilScalars {
    double lamT_min, lamT_max, lamB_min, lamB_max, lamV_min, lamV_max;
};

PencilScalars pencil_scalars(const TwoLayerParams& p, double c2bar) {
    PencilScalars s{};
    double th = p.theta_fric, ep = p.eps_fric, de = p.delta();
    s.lamT_min = std::min(ep, th);
    s.lamT_max = std::max(ep, th);
    double tr = th * (ep + de);
    double disc = std::sqrt(std::max(0.0, (ep + de) * (ep + de) - 4.0 * ep * p.ups_fric));
    s.lamB_min = 0.5 * th * ((ep + de) - disc);
    s.lamB_max = 0.5 * th * ((ep + de) + disc);
    (void)tr;
    s.lamV_min = 2.0 * std::min(p.c1 * ep, c2bar * th);
    s.lamV_max = 2.0 * std::max(p.c1 * ep, c2bar * th);
    return s;
}

}  // namespace

// --- parameters --------------------------------------------------------------------

void TwoLayerParams::validate() const {
    if (!(c1 >= 0.0) || !(c2 >= 0.0))
        throw Error(Err::invalid_params, "restoring coefficients must be non-negative");
    if (!(theta_fric > eps_fric) || !(eps_fric > ups_fric) || !(ups_fric > 0.0))
        throw Error(Err::invalid_params,
                    "friction ordering theta > eps > ups > 0 violated: theta=" + fnum(theta_fric, 6) +
                        " eps=" + fnum(eps_fric, 6) + " ups=" + fnum(ups_fric, 6));
    if (!(omega_orb > 0.0))
        throw Error(Err::invalid_params, "orbital frequency must be positive");
    if (!(c2 > 0.0) || !(ups_fric * std::abs(v0) < c2))
        throw Error(Err::invalid_params,
                    "drift torque admits no equilibrium: ups*|v0| = " + fnum(ups_fric * std::abs(v0), 6) +
                        " must be < c2 = " + fnum(c2, 6));
    if (!(theta_fric * theta_fric < (8.0 / 9.0) * std::min(c1, c2)))
        throw Error(Err::invalid_params,
                    "underdamping condition theta^2 < (8/9) min{c1, c2} violated: theta^2 = " +
                        fnum(theta_fric * theta_fric, 6) + ", bound = " +
                        fnum((8.0 / 9.0) * std::min(c1, c2), 6));
}

double LinearBlock::inf_norm() const noexcept {
    double best = 0.0;
    for (const auto& row : a) {
        double s = 0.0;
        for (double x : row) s += std::abs(x);
        best = std::max(best, s);
    }
    return best;
}

// --- equilibrium ---------------------------------------------------------------------

Equilibrium equilibrium(const TwoLayerParams& params) {
    if (!(params.c2 > 0.0) || !(params.ups_fric * std::abs(params.v0) < params.c2))
        throw Error(Err::no_equilibrium,
                    "core friction torque cannot balance the restoring torque: need ups*|v0| < c2");
    double x = params.ups_fric * params.v0 / params.c2;
    Equilibrium eq;
    eq.eta0 = 0.5 * std::asin(x);      // principal branch: 2 eta0 in (-pi/2, pi/2)
    eq.cos2eta0 = std::sqrt(1.0 - x * x);  // cos(2 eta0) > 0 on this branch
    eq.c2bar = params.c2 * eq.cos2eta0;
    return eq;
}

// --- model fields -------------------------------------------------------------------

TFVectorField build_full_field(const TwoLayerParams& params, const PerturbationInputs& pert,
                               int order_cap) {
    if (order_cap < 1)
        throw Error(Err::invalid_params, "field order cap must be at least 1");
    require_forcing_shapes(pert);
    require_zero_angle_average(pert.tilde);

    TFVectorField x(4, 1);
    bool truncated = false;

    // gamma' = p_gamma
    x.component(0).set(mi(0, 1, 0, 0, 0), Coeff(1.0, 0.0));

    // p_gamma' = -c1 sin 2gamma - theta (p_gamma - p_eta) + forcings
    add_sin2_series(x.component(1), 0, -params.c1, order_cap, 1, &truncated);
    x.component(1).add(mi(0, 1, 0, 0, 0), Coeff(-params.theta_fric, 0.0));
    x.component(1).add(mi(0, 0, 0, 1, 0), Coeff(params.theta_fric, 0.0));

    // eta' = p_eta
    x.component(2).set(mi(0, 0, 0, 1, 0), Coeff(1.0, 0.0));

    // p_eta' = -c2 sin 2eta + eps (p_gamma - p_eta) - ups (p_eta - v0) + forcings
    add_sin2_series(x.component(3), 2, -params.c2, order_cap, 1, &truncated);
    x.component(3).add(mi(0, 1, 0, 0, 0), Coeff(params.eps_fric, 0.0));
    x.component(3).add(mi(0, 0, 0, 1, 0), Coeff(-params.delta(), 0.0));
    x.component(3).add(mi(0, 0, 0, 0, 0), Coeff(params.ups_fric * params.v0, 0.0));

    // ell' = omega
    x.component(4).set(mi(0, 0, 0, 0, 0), Coeff(params.omega_orb, 0.0));

    for (int h = 0; h < 4; ++h) {
        x.component(h).add_in_place(pert.tilde.component(h));
        x.component(h).add_in_place(pert.hat.component(h));
    }
    x.component(4).add_in_place(pert.tilde.component(4));
    x.component(4).add_in_place(pert.hat.component(4));

    x.set_order_cap(order_cap);
    x.set_truncated(truncated);
    return x;
}

LinearBlock build_linear_block(const TwoLayerParams& params, const Equilibrium& eq) {
    LinearBlock b;
    b.a = {{{0.0, 1.0, 0.0, 0.0},
            {-2.0 * params.c1, -params.theta_fric, 0.0, params.theta_fric},
            {0.0, 0.0, 0.0, 1.0},
            {0.0, params.eps_fric, -2.0 * eq.c2bar, -params.delta()}}};
    return b;
}

LinearizedSystem build_linearized_field(const TwoLayerParams& params, const Equilibrium& eq,
                                        const PerturbationInputs& pert, int order_cap) {
    if (order_cap < 3)
        throw Error(Err::precondition_violated,
                    "linearized field needs order cap >= 3 to carry the restoring remainders");
    if (!(params.eps0 > 0.0) || !(params.s0 > 0.0))
        throw Error(Err::invalid_params, "analyticity radii eps0, s0 must be positive");
    require_forcing_shapes(pert);
    require_zero_angle_average(pert.tilde);

    LinearizedSystem sys;
    sys.eq = eq;
    sys.block = build_linear_block(params, eq);
    sys.freq.lambda.assign(4, Coeff(0.0, 0.0));
    sys.freq.omega = {params.omega_orb};
    sys.u0 = Domain{params.eps0, params.s0};

    TFVectorField p0(4, 1);
    bool truncated = false;

    // Linear block rows.
    p0.component(0).set(mi(0, 1, 0, 0, 0), Coeff(1.0, 0.0));
    p0.component(1).add(mi(1, 0, 0, 0, 0), Coeff(-2.0 * params.c1, 0.0));
    p0.component(1).add(mi(0, 1, 0, 0, 0), Coeff(-params.theta_fric, 0.0));
    p0.component(1).add(mi(0, 0, 0, 1, 0), Coeff(params.theta_fric, 0.0));
    p0.component(2).set(mi(0, 0, 0, 1, 0), Coeff(1.0, 0.0));
    p0.component(3).add(mi(0, 1, 0, 0, 0), Coeff(params.eps_fric, 0.0));
    p0.component(3).add(mi(0, 0, 1, 0, 0), Coeff(-2.0 * eq.c2bar, 0.0));
    p0.component(3).add(mi(0, 0, 0, 1, 0), Coeff(-params.delta(), 0.0));

    // Restoring remainders: -c1 sin 2gamma + 2 c1 gamma (orders >= 3) and
    // -c2bar (sin 2psi - 2 psi) - ups v0 (cos 2psi - 1) (orders >= 2).
    add_sin2_series(p0.component(1), 0, -params.c1, order_cap, 3, &truncated);
    add_sin2_series(p0.component(3), 2, -eq.c2bar, order_cap, 3, &truncated);
    add_cos2_minus_one_series(p0.component(3), 2, -params.ups_fric * params.v0, order_cap,
                              &truncated);

    // Forcings, recentred at eta = eta0 + psi.
    std::vector<Coeff> shift = {Coeff(0.0, 0.0), Coeff(0.0, 0.0), Coeff(eq.eta0, 0.0),
                                Coeff(0.0, 0.0)};
    for (int h = 0; h < 5; ++h) {
        if (!pert.tilde.component(h).empty()) {
            TFComponent c = (eq.eta0 == 0.0) ? pert.tilde.component(h)
                                             : shift_slow(pert.tilde.component(h), shift);
            p0.component(h).add_in_place(c);
        }
        if (!pert.hat.component(h).empty()) {
            TFComponent c = (eq.eta0 == 0.0) ? pert.hat.component(h)
                                             : shift_slow(pert.hat.component(h), shift);
            p0.component(h).add_in_place(c);
        }
    }

    p0.set_order_cap(order_cap);
    p0.set_truncated(truncated);
    sys.p0 = std::move(p0);
    return sys;
}

// --- pencil --------------------------------------------------------------------------

QuadraticPencil reduce_to_pencil(const TwoLayerParams& params, const Equilibrium& eq) {
    params.validate();
    double th = params.theta_fric, ep = params.eps_fric, de = params.delta();
    QuadraticPencil q;
    q.t = {{{ep, 0.0}, {0.0, th}}};
    q.b = {{{th * ep, -th * ep}, {-th * ep, th * de}}};
    q.v = {{{2.0 * params.c1 * ep, 0.0}, {0.0, 2.0 * eq.c2bar * th}}};
    PencilScalars s = pencil_scalars(params, eq.c2bar);
    q.lamT_min = s.lamT_min;
    q.lamT_max = s.lamT_max;
    q.lamB_min = s.lamB_min;
    q.lamB_max = s.lamB_max;
    q.lamV_min = s.lamV_min;
    q.lamV_max = s.lamV_max;
    return q;
}

// --- spectrum ------------------------------------------------------------------------

SpectrumResult solve_spectrum(const LinearBlock& block, const TwoLayerParams& params) {
    params.validate();
    double th = params.theta_fric, ep = params.eps_fric, de = params.delta();
    double c1 = -block.a[1][0] / 2.0;
    double c2bar = -block.a[3][2] / 2.0;
    if (!(c1 > 0.0) || !(c2bar > 0.0))
        throw Error(Err::invalid_params, "linear block must carry positive restoring coefficients");

    // Characteristic quartic (x^2 + th x + 2 c1)(x^2 + de x + 2 c2bar) - th ep x^2.
    const double B = 2.0 * c1, D = 2.0 * c2bar;
    std::array<double, 5> poly = {B * D, th * D + B * de, B + D + th * de - th * ep, th + de, 1.0};

    std::array<Coeff, 4> roots = companion_eigenvalues(poly);
    double poly_scale = 0.0;
    for (double c : poly) poly_scale = std::max(poly_scale, std::abs(c));
    for (Coeff& r : roots) {
        for (int it = 0; it < 3; ++it) {
            Coeff f = quartic_eval(poly, r);
            if (std::abs(f) <= 1e-15 * poly_scale) break;
            Coeff df = quartic_derivative(poly, r);
            if (std::abs(df) == 0.0) break;
            r -= f / df;
        }
    }

    // Conjugate symmetrization: two pairs, each straddling the real axis.
    double mag = 0.0;
    for (const Coeff& r : roots) mag = std::max(mag, std::abs(r));
    std::vector<Coeff> plus, minus;
    for (const Coeff& r : roots) {
        if (r.imag() > 1e-10 * mag)
            plus.push_back(r);
        else if (r.imag() < -1e-10 * mag)
            minus.push_back(r);
    }
    if (plus.size() != 2 || minus.size() != 2)
        throw Error(Err::degenerate_spectrum,
                    "spectrum is not two strictly complex conjugate pairs");
    // Pair each lower root with the nearest conjugated upper root.
    if (std::abs(minus[0] - std::conj(plus[0])) > std::abs(minus[0] - std::conj(plus[1])))
        std::swap(plus[0], plus[1]);
    std::array<Coeff, 2> pair_val = {0.5 * (minus[0] + std::conj(plus[0])),
                                     0.5 * (minus[1] + std::conj(plus[1]))};
    // Below ~1e-6 relative separation the quartic roots are too
    // ill-conditioned for double precision to certify the real parts at
    // their own scale (the Newton correction |p|/|p'| grows like 1/gap).
    if (std::abs(pair_val[0] - pair_val[1]) <= 1e-6 * mag)
        throw Error(Err::degenerate_spectrum, "the two conjugate pairs coincide");

    // Order: (sign Im, |Im|) ascending; pair_val have Im < 0.
    if (std::abs(pair_val[0].imag()) > std::abs(pair_val[1].imag()))
        std::swap(pair_val[0], pair_val[1]);
    SpectrumResult res;
    res.eigenvalues = {pair_val[0], pair_val[1], std::conj(pair_val[0]), std::conj(pair_val[1])};

    // Windows.
    PencilScalars ps = pencil_scalars(params, c2bar);
    res.rayleigh_lo = -ps.lamB_max / (2.0 * ps.lamT_min);
    res.rayleigh_hi = -ps.lamB_min / (2.0 * ps.lamT_max);
    res.coarse_lo = -1.5 * th;
    res.coarse_hi = -params.ups_fric / 3.0;
    double slack = 1e-12 * std::max(1.0, -res.rayleigh_lo);
    double coarse_violation = 0.0;
    res.min_abs_re = std::numeric_limits<double>::infinity();
    for (const Coeff& lam : res.eigenvalues) {
        double re = lam.real();
        if (re < res.rayleigh_lo - slack || re > res.rayleigh_hi + slack)
            throw Error(Err::window_violation,
                        "eigenvalue real part " + fnum(re, 9) + " escaped the certified window [" +
                            fnum(res.rayleigh_lo, 9) + ", " + fnum(res.rayleigh_hi, 9) + "]");
        coarse_violation = std::max(coarse_violation, res.coarse_lo - re);
        coarse_violation = std::max(coarse_violation, re - res.coarse_hi);
        res.min_abs_re = std::min(res.min_abs_re, std::abs(re));
    }
    res.coarse_violation = std::max(0.0, coarse_violation);
    res.coarse_window_ok = res.coarse_violation <= slack;

    // Eigenvectors: y = (th x, th x^2, q(x), x q(x)) with q(x) = x^2 + th x + 2 c1.
    for (int j = 0; j < 4; ++j) {
        Coeff x = res.eigenvalues[static_cast<std::size_t>(j)];
        Coeff q = x * x + th * x + Coeff(2.0 * c1, 0.0);
        std::array<Coeff, 4> y = {th * x, th * x * x, q, x * q};
        int imax = 0;
        for (int i = 1; i < 4; ++i)
            if (std::abs(y[static_cast<std::size_t>(i)]) > std::abs(y[static_cast<std::size_t>(imax)])) imax = i;
        Coeff top = y[static_cast<std::size_t>(imax)];
        if (std::abs(top) == 0.0)
            throw Error(Err::degenerate_spectrum, "eigenvector construction degenerated");
        Coeff scale = std::conj(top) / (std::abs(top) * std::abs(top));
        for (int i = 0; i < 4; ++i) res.b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = y[static_cast<std::size_t>(i)] * scale;
    }

    // Residuals and the diagonalization quality.
    Mat4 lmat{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) lmat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = Coeff(block.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 0.0);
    for (int j = 0; j < 4; ++j) {
        double worst = 0.0;
        for (int i = 0; i < 4; ++i) {
            Coeff s(0.0, 0.0);
            for (int k = 0; k < 4; ++k) s += lmat[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * res.b[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
            s -= res.eigenvalues[static_cast<std::size_t>(j)] * res.b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            worst = std::max(worst, std::abs(s));
        }
        res.residuals[static_cast<std::size_t>(j)] = worst;
    }
    res.b_inv = mat_inverse(res.b);
    res.b_norm_inf = mat_inf_norm(res.b);
    res.b_inv_norm_inf = mat_inf_norm(res.b_inv);
    Mat4 diag = mat_mul(res.b_inv, mat_mul(lmat, res.b));
    double off = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (i != j) off += std::abs(diag[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    res.offdiag_mass = off;
    return res;
}

// --- budget --------------------------------------------------------------------------

BudgetConstants compute_budget(const TwoLayerParams& params, double const_used,
                               double eps_small, const SpectrumResult& spectrum) {
    if (!(const_used > 0.0))
        throw Error(Err::invalid_params, "budget constant must be positive");
    if (!(params.eps0 > 0.0) || !(params.s0 > 0.0))
        throw Error(Err::invalid_params, "analyticity radii eps0, s0 must be positive");
    if (!(params.Cmin > 0.0))
        throw Error(Err::invalid_params, "inertia scale Cmin must be positive");
    BudgetConstants b;
    b.const_used = const_used;
    b.eps_small = eps_small;
    double tidal = params.r_over_a * params.r_over_a / (params.eps0 * params.Cmin);
    b.mu0 = const_used *
            std::max({params.c1, params.c2, params.eps0, params.eps_fric * params.eps0,
                      params.delta() * params.eps0, std::abs(params.v0) * params.ups_fric, tidal});
    b.mu1 = const_used * std::max({b.mu0 * b.mu0 / params.omega_orb, b.mu0 * params.r_over_a,
                                   params.c1 * params.eps0 * params.eps0 * params.eps0,
                                   params.c2 * params.eps0 * params.eps0});
    b.gamma1 = std::min(params.ups_fric / 3.0, params.omega_orb);
    b.eps_star = params.eps0 / (4.0 * spectrum.b_norm_inf);
    double expo = b.gamma1 / b.mu1;
    b.T_horizon = (expo > 700.0) ? std::numeric_limits<double>::infinity()
                                 : (eps_small / (b.eps_star * b.mu1)) * std::exp(expo) / const_used;
    b.flag_mu0 = b.mu0 / params.omega_orb <= eps_small;
    b.flag_mu1 = b.mu1 / b.gamma1 <= eps_small;
    return b;
}

BudgetConstants compute_budget(const TwoLayerParams& params, double const_used,
                               double eps_small) {
    params.validate();
    Equilibrium eq = equilibrium(params);
    SpectrumResult spec = solve_spectrum(build_linear_block(params, eq), params);
    return compute_budget(params, const_used, eps_small, spec);
}

// --- pipeline ------------------------------------------------------------------------

namespace {

TFVectorField linear_block_field(const LinearBlock& block) {
    TFVectorField f(4, 1);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (block.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] != 0.0) {
                MultiIndex idx{};
                idx.v[static_cast<std::size_t>(j)] = 1;
                f.component(i).add(idx, Coeff(block.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 0.0));
            }
    return f;
}

std::vector<std::vector<Coeff>> to_vecvec(const Mat4& m) {
    std::vector<std::vector<Coeff>> r(4, std::vector<Coeff>(4));
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return r;
}

[[noreturn]] void rethrow_with_step(const Error& e, const char* step) {
    throw Error(e.code(), std::string(step) + ": " + e.what());
}

}  // namespace

PipelineReport main_pipeline(const TwoLayerParams& params, const PerturbationInputs& pert,
                             const PipelineOptions& opts) {
    params.validate();
    if (opts.order_cap < 3)
        throw Error(Err::invalid_params, "pipeline needs a field order cap >= 3");

    PipelineReport R;
    R.params = params;
    R.eq = equilibrium(params);
    R.block = build_linear_block(params, R.eq);
    R.spectrum = solve_spectrum(R.block, params);
    R.budget = compute_budget(params, opts.const_used, opts.eps_small, R.spectrum);
    LinearizedSystem lin = build_linearized_field(params, R.eq, pert, opts.order_cap);

    const double omega = params.omega_orb;
    const double mu0 = R.budget.mu0;
    const double mu1 = R.budget.mu1;
    const double c_star = default_C_star();

    // ---- step 1: averaging of the fast angle -------------------------------------
    R.u0 = lin.u0;
    Radii w0{params.eps0 / 4.0, params.s0 / 4.0};
    R.gamma0 = omega;
    TailDecay td0 = tail_decay_rate(R.u0, w0);
    R.tau0 = td0.tau;
    if (!(mu0 < omega))
        throw Error(Err::smallness_violated,
                    "step 1 (averaging): needs mu0 < omega, got mu0 = " + fnum(mu0, 6) +
                        ", omega = " + fnum(omega, 6));
    R.K0 = opts.K0_override > 0
               ? opts.K0_override
               : std::max(1, static_cast<int>(std::ceil(std::log(omega / mu0) / R.tau0)));

    IterationOutcome out1;
    try {
        IterationOptions io;
        io.order_cap = opts.order_cap;
        io.lie_rel_tol = opts.lie_rel_tol;
        io.step_label = "1";
        TFVectorField g0(4, 1);
        out1 = iteration_step(lin.freq, g0, lin.p0, R.u0, w0, Lattice::fourier_average(), R.K0,
                              R.gamma0, io);
    } catch (const Error& e) {
        rethrow_with_step(e, "step 1 (averaging)");
    }
    R.u1 = out1.u_next;
    R.p0_norm = out1.p_norm;
    R.p1_tilde_norm = out1.p_next_norm;
    R.step1_generator = out1.generator;

    R.ledger.add("1", "raw field within budget: [[P0]] <= mu0", mu0, R.p0_norm);
    R.ledger.add("1", "averaged remainder: [[P1~]] <= const mu0^2/omega",
                 opts.const_used * mu0 * mu0 / omega, R.p1_tilde_norm);
    R.ledger.add("1", "averaging close to identity: [[Y1]] <= mu0/omega", mu0 / omega,
                 out1.generator.y_norm);
    R.ledger.append(out1.ledger);

    // ---- step 2: diagonalization of the linear block ------------------------------
    try {
        TFVectorField rest = sub(out1.g_next, linear_block_field(R.block));
        TFVectorField p1 = add(rest, out1.p_next);
        TFVectorField p2 = pullback_linear_slow(p1, to_vecvec(R.spectrum.b),
                                                to_vecvec(R.spectrum.b_inv));
        // Diagonalization dust: b^{-1} L b minus the certified exponents.
        Mat4 lmat{};
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) lmat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = Coeff(R.block.a[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 0.0);
        Mat4 diag = mat_mul(R.spectrum.b_inv, mat_mul(lmat, R.spectrum.b));
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                Coeff dust = diag[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                if (i == j) dust -= R.spectrum.eigenvalues[static_cast<std::size_t>(i)];
                if (dust != Coeff(0.0, 0.0)) {
                    MultiIndex idx{};
                    idx.v[static_cast<std::size_t>(j)] = 1;
                    p2.component(i).add(idx, dust);
                }
            }
        R.p2 = std::move(p2);
    } catch (const Error& e) {
        rethrow_with_step(e, "step 2 (diagonalization)");
    }
    R.u2 = Domain{R.u1.eps / R.spectrum.b_norm_inf, R.u1.s};
    Radii w2{R.u2.eps / 8.0, R.u2.s / 8.0};
    R.p2_norm = weighted_field_norm(R.p2, R.u2, w2);
    R.freq2.lambda = {R.spectrum.eigenvalues[0], R.spectrum.eigenvalues[1],
                      R.spectrum.eigenvalues[2], R.spectrum.eigenvalues[3]};
    R.freq2.omega = {omega};

    double lnorm = R.block.inf_norm();
    R.ledger.add("2", "diagonalization residual: offdiag mass <= 1e-10 ||L||", 1e-10 * lnorm,
                 R.spectrum.offdiag_mass);
    R.ledger.add("2", "eigenvector residual: max_j ||L b_j - lambda_j b_j|| <= 1e-10 ||L||",
                 1e-10 * lnorm,
                 *std::max_element(R.spectrum.residuals.begin(), R.spectrum.residuals.end()));
    R.ledger.add("2", "diagonalized remainder: [[P2]] <= mu1", mu1, R.p2_norm);

    // ---- step 3: exponential normal form ------------------------------------------
    R.gamma1 = R.budget.gamma1;
    TailDecay td2 = tail_decay_rate(R.u2, w2);
    R.sigma_bar = td2.sigma_bar;
    R.K1 = opts.K1_override > 0
               ? opts.K1_override
               : std::max(1, static_cast<int>(std::floor(
                                 R.gamma1 / (2.0 * c_star * mu1 * R.sigma_bar))));
    try {
        if (opts.scan_nonresonance) {
            R.nonres = check_nonresonant(R.freq2, R.gamma1, Lattice::zero(), 2 * R.K1);
            R.ledger.rows.push_back(LedgerRow{
                "3", "nonresonance floor: gamma1 <= smallest divisor up to order 2 K1",
                R.nonres.worst_value, R.gamma1, R.gamma1 <= R.nonres.worst_value});
        }
        NormalFormOptions no;
        no.order_cap = opts.order_cap;
        no.lie_rel_tol = opts.lie_rel_tol;
        R.nf = normalize(R.freq2, R.p2, R.u2, w2, Lattice::zero(), R.K1, R.gamma1, c_star, no);
    } catch (const Error& e) {
        rethrow_with_step(e, "step 3 (exponential normal form)");
    }
    R.ledger.append(R.nf.ledger);
    R.ledger.add("3", "exponentially small remainder: [[P3]] <= mu1 e^{-gamma1/(8 C* mu1)}",
                 mu1 * std::exp(-R.gamma1 / (8.0 * c_star * mu1)), R.nf.p_star_norm);
    R.ledger.add("3", "normal form close to identity: sum [[Yj]] <= 2 mu1/gamma1",
                 2.0 * mu1 / R.gamma1, R.nf.close_to_id);

    // ---- step 4: conclusions --------------------------------------------------------
    R.u3 = R.nf.u_final;
    R.eps_star = R.u3.eps;
    double max_shift = 0.0;
    double max_re = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < 4; ++j) {
        MultiIndex ej{};
        ej.v[static_cast<std::size_t>(j)] = 1;
        Coeff shift = R.nf.g_star.component(j).at(ej);
        R.lambda_shift[static_cast<std::size_t>(j)] = shift;
        R.lambda_hat[static_cast<std::size_t>(j)] =
            R.freq2.lambda[static_cast<std::size_t>(j)] + shift;
        max_shift = std::max(max_shift, std::abs(shift));
        max_re = std::max(max_re, R.lambda_hat[static_cast<std::size_t>(j)].real());
    }
    R.omega_shift = R.nf.g_star.component(4).at(MultiIndex::zero());

    R.ledger.add("4", "exponent shifts: max_j |lambda~_j| <= mu1/2", mu1 / 2.0, max_shift);
    R.ledger.rows.push_back(LedgerRow{"4", "damping preserved: max_j Re lambda^_j < 0", 0.0,
                                      max_re, max_re < 0.0});
    R.ledger.add("4", "final chart radius agrees with budget eps*",
                 1e-12 * R.budget.eps_star, std::abs(R.eps_star - R.budget.eps_star));
    R.ledger.add("4", "budget flag: mu0/omega <= eps_small", opts.eps_small, mu0 / omega);
    R.ledger.add("4", "budget flag: mu1/gamma1 <= eps_small", opts.eps_small, mu1 / R.gamma1);
    return R;
}

// --- report --------------------------------------------------------------------------

std::string report_to_text(const PipelineReport& r) {
    std::string t;
    auto line = [&t](const std::string& s) {
        t += s;
        t += '\n';
    };
    line("== two-layer spin-orbit normal-form pipeline ==");
    line("parameters: c1=" + fnum(r.params.c1, 9) + " c2=" + fnum(r.params.c2, 9) +
         " theta=" + fnum(r.params.theta_fric, 9) + " eps=" + fnum(r.params.eps_fric, 9) +
         " ups=" + fnum(r.params.ups_fric, 9));
    line("            omega=" + fnum(r.params.omega_orb, 9) + " v0=" + fnum(r.params.v0, 9) +
         " eps0=" + fnum(r.params.eps0, 9) + " s0=" + fnum(r.params.s0, 9) +
         " r/a=" + fnum(r.params.r_over_a, 9));
    line("");
    line("-- equilibrium --");
    line("eta0=" + fnum(r.eq.eta0, 12) + "  cos(2 eta0)=" + fnum(r.eq.cos2eta0, 12) +
         "  c2bar=" + fnum(r.eq.c2bar, 12));
    line("");
    line("-- spectrum of the linear block --");
    for (int j = 0; j < 4; ++j) {
        const Coeff& l = r.spectrum.eigenvalues[static_cast<std::size_t>(j)];
        line("lambda_" + std::to_string(j + 1) + " = " + fnum(l.real(), 12) +
             (l.imag() >= 0 ? " + " : " - ") + fnum(std::abs(l.imag()), 12) +
             " i   (residual " + fnum(r.spectrum.residuals[static_cast<std::size_t>(j)], 3) + ")");
    }
    line("certified real-part window: [" + fnum(r.spectrum.rayleigh_lo, 9) + ", " +
         fnum(r.spectrum.rayleigh_hi, 9) + "]");
    line(std::string("heuristic window (-3 theta/2, -ups/3): ") +
         (r.spectrum.coarse_window_ok
              ? "holds"
              : "violated by " + fnum(r.spectrum.coarse_violation, 6)));
    line("||b||=" + fnum(r.spectrum.b_norm_inf, 9) + "  ||b^-1||=" +
         fnum(r.spectrum.b_inv_norm_inf, 9) + "  offdiag mass=" +
         fnum(r.spectrum.offdiag_mass, 3));
    line("");
    line("-- stability budget --");
    line("mu0=" + fnum(r.budget.mu0, 9) + "  mu1=" + fnum(r.budget.mu1, 9) +
         "  gamma1=" + fnum(r.budget.gamma1, 9));
    line("T=" + fnum(r.budget.T_horizon, 9) + "  eps*=" + fnum(r.budget.eps_star, 9) +
         "  const=" + fnum(r.budget.const_used, 9) + "  eps_small=" +
         fnum(r.budget.eps_small, 9));
    line(std::string("feasibility flags: mu0/omega ") + (r.budget.flag_mu0 ? "ok" : "FAIL") +
         ", mu1/gamma1 " + (r.budget.flag_mu1 ? "ok" : "FAIL"));
    line("");
    line("-- step 1: averaging --");
    line("gamma0=" + fnum(r.gamma0, 9) + "  K0=" + std::to_string(r.K0) + "  tau0=" +
         fnum(r.tau0, 9));
    line("u0=(" + fnum(r.u0.eps, 9) + ", " + fnum(r.u0.s, 9) + ") -> u1=(" +
         fnum(r.u1.eps, 9) + ", " + fnum(r.u1.s, 9) + ")");
    line("[[P0]]=" + fnum(r.p0_norm, 9) + "  [[P1~]]=" + fnum(r.p1_tilde_norm, 9));
    line("");
    line("-- step 2: diagonalization --");
    line("u2=(" + fnum(r.u2.eps, 9) + ", " + fnum(r.u2.s, 9) + ")  [[P2]]=" +
         fnum(r.p2_norm, 9));
    line("");
    line("-- step 3: exponential normal form --");
    line("gamma1=" + fnum(r.gamma1, 9) + "  K1=" + std::to_string(r.K1) + "  sigma_bar=" +
         fnum(r.sigma_bar, 9) + "  K1 sigma_bar=" + fnum(r.K1 * r.sigma_bar, 9));
    line("steps=" + std::to_string(r.nf.steps) +
         (r.nf.short_circuit ? " (short circuit)" : "") + "  [[P3]]=" +
         fnum(r.nf.p_star_norm, 9) + "  decay bound=" + fnum(r.nf.decay_claimed, 9));
    line("");
    line("-- step 4: shifted exponents --");
    for (int j = 0; j < 4; ++j) {
        const Coeff& l = r.lambda_hat[static_cast<std::size_t>(j)];
        line("lambda^_" + std::to_string(j + 1) + " = " + fnum(l.real(), 12) +
             (l.imag() >= 0 ? " + " : " - ") + fnum(std::abs(l.imag()), 12) + " i   (shift " +
             fnum(std::abs(r.lambda_shift[static_cast<std::size_t>(j)]), 6) + ")");
    }
    line("angle frequency shift: " + fnum(std::abs(r.omega_shift), 6));
    line("eps*=" + fnum(r.eps_star, 9) + "  final domain=(" + fnum(r.u3.eps, 9) + ", " +
         fnum(r.u3.s, 9) + ")");
    line("");
    line("-- certified inequalities --");
    t += r.ledger.to_text();
    line(r.ledger.all_pass() ? "ALL ROWS PASS" : "SOME ROWS FAILED");
    return t;
}

}  // namespace tfnf
