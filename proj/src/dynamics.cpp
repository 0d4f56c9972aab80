#include "tfnf/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <utility>

#include "tfnf/errors.hpp"
#include "tfnf/normalform.hpp"
#include "tfnf/rng.hpp"
#include "tfnf/textio.hpp"

namespace tfnf {

namespace {

// --- Dormand-Prince 5(4) tableau ---------------------------------------------------

constexpr double kC2 = 1.0 / 5.0, kC3 = 3.0 / 10.0, kC4 = 4.0 / 5.0, kC5 = 8.0 / 9.0;
constexpr double kA21 = 1.0 / 5.0;
constexpr double kA31 = 3.0 / 40.0, kA32 = 9.0 / 40.0;
constexpr double kA41 = 44.0 / 45.0, kA42 = -56.0 / 15.0, kA43 = 32.0 / 9.0;
constexpr double kA51 = 19372.0 / 6561.0, kA52 = -25360.0 / 2187.0, kA53 = 64448.0 / 6561.0,
                 kA54 = -212.0 / 729.0;
constexpr double kA61 = 9017.0 / 3168.0, kA62 = -355.0 / 33.0, kA63 = 46732.0 / 5247.0,
                 kA64 = 49.0 / 176.0, kA65 = -5103.0 / 18656.0;
constexpr double kB1 = 35.0 / 384.0, kB3 = 500.0 / 1113.0, kB4 = 125.0 / 192.0,
                 kB5 = -2187.0 / 6784.0, kB6 = 11.0 / 84.0;
// Difference between the 5th and the embedded 4th order weights.
constexpr double kE1 = 71.0 / 57600.0, kE3 = -71.0 / 16695.0, kE4 = 71.0 / 1920.0,
                 kE5 = -17253.0 / 339200.0, kE6 = 22.0 / 525.0, kE7 = -1.0 / 40.0;

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

/// RMS of the componentwise error over the mixed tolerance scale.
double error_ratio(const std::vector<double>& err, const std::vector<double>& y0,
                   const std::vector<double>& y1, double atol, double rtol) {
    double s = 0.0;
    const std::size_t n = err.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double sc = atol + rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
        const double r = err[i] / sc;
        s += r * r;
    }
    return std::sqrt(s / static_cast<double>(n));
}

/// Startup step-size heuristic matched to a 5th order method.
double initial_step_size(const RhsFn& rhs, const std::vector<double>& y0,
                         const std::vector<double>& f0, double t0, double dir, double span,
                         double atol, double rtol) {
    const std::size_t n = y0.size();
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double sc = atol + rtol * std::abs(y0[i]);
        d0 = std::max(d0, std::abs(y0[i]) / sc);
        d1 = std::max(d1, std::abs(f0[i]) / sc);
    }
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 * span : 0.01 * (d0 / d1);
    h0 = std::min(h0, span);
    if (!(h0 > 0.0)) h0 = 1e-6 * span;

    std::vector<double> y1(n), f1(n);
    for (std::size_t i = 0; i < n; ++i) y1[i] = y0[i] + dir * h0 * f0[i];
    rhs(t0 + dir * h0, y1, f1);
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double sc = atol + rtol * std::abs(y0[i]);
        d2 = std::max(d2, std::abs(f1[i] - f0[i]) / sc);
    }
    d2 /= h0;
    const double dmax = std::max(d1, d2);
    const double h1 = (dmax <= 1e-15) ? std::max(1e-6 * span, h0 * 1e-3)
                                      : std::pow(0.01 / dmax, 1.0 / 5.0);
    return std::min({100.0 * h0, h1, span});
}

}  // namespace

Trajectory integrate(const RhsFn& rhs, const std::vector<double>& x0, double t0, double t1,
                     const IntegratorOptions& opts) {
    if (x0.empty()) throw Error(Err::precondition_violated, "integrate: empty initial state");
    if (!(opts.abs_tol > 0.0) || !(opts.rel_tol >= 0.0))
        throw Error(Err::precondition_violated, "integrate: tolerances must be positive");

    const double dir = (t1 >= t0) ? 1.0 : -1.0;
    const double span = std::abs(t1 - t0);
    const std::size_t n = x0.size();

    Trajectory traj;
    traj.abs_tol = opts.abs_tol;
    traj.rel_tol = opts.rel_tol;

    if (opts.inside && !opts.inside(t0, x0))
        throw Error(Err::domain_exit,
                    "initial state outside the admissible domain at t = " + fnum(t0));

    traj.times.push_back(t0);
    traj.states.push_back(x0);
    if (span == 0.0) return traj;

    // Grid times, kept only if strictly inside and ordered along the travel
    // direction.
    std::vector<double> grid;
    for (double g : opts.grid)
        if ((g - t0) * dir > 0.0 && (t1 - g) * dir > 0.0) grid.push_back(g);
    std::sort(grid.begin(), grid.end(),
              [dir](double a, double b) { return a * dir < b * dir; });
    std::size_t gi = 0;

    std::vector<double> y = x0;
    std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n);
    std::vector<double> ytmp(n), y5(n), errv(n);
    rhs(t0, y, k1);

    const double hmax = (opts.max_step > 0.0) ? std::min(opts.max_step, span) : span;
    double h = (opts.initial_step > 0.0)
                   ? std::min(opts.initial_step, hmax)
                   : std::min(initial_step_size(rhs, y, k1, t0, dir, span, opts.abs_tol,
                                                opts.rel_tol),
                              hmax);
    double t = t0;
    double facold = 1e-4;

    const double hfloor = span * 1e-17;

    while ((t1 - t) * dir > 0.0) {
        if (traj.accepted + traj.rejected >= opts.max_steps)
            throw Error(Err::step_underflow, "integration step budget exhausted at t = " + fnum(t));

        const double remaining = (t1 - t) * dir;
        double hstep = std::min(h, remaining);
        bool hit_grid = false, hit_end = false;
        if (gi < grid.size()) {
            const double dg = (grid[gi] - t) * dir;
            if (dg <= hstep * (1.0 + 1e-12)) {
                hstep = dg;
                hit_grid = true;
            }
        }
        if (!hit_grid && hstep >= remaining * (1.0 - 1e-12)) {
            hstep = remaining;
            hit_end = true;
        }
        if (hstep <= hfloor || t + dir * hstep == t)
            throw Error(Err::step_underflow, "integration step size underflow at t = " + fnum(t));

        const double hh = dir * hstep;
        for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + hh * kA21 * k1[i];
        rhs(t + kC2 * hh, ytmp, k2);
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] + hh * (kA31 * k1[i] + kA32 * k2[i]);
        rhs(t + kC3 * hh, ytmp, k3);
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] + hh * (kA41 * k1[i] + kA42 * k2[i] + kA43 * k3[i]);
        rhs(t + kC4 * hh, ytmp, k4);
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] + hh * (kA51 * k1[i] + kA52 * k2[i] + kA53 * k3[i] + kA54 * k4[i]);
        rhs(t + kC5 * hh, ytmp, k5);
        for (std::size_t i = 0; i < n; ++i)
            ytmp[i] = y[i] +
                      hh * (kA61 * k1[i] + kA62 * k2[i] + kA63 * k3[i] + kA64 * k4[i] +
                            kA65 * k5[i]);
        rhs(t + hh, ytmp, k6);
        for (std::size_t i = 0; i < n; ++i)
            y5[i] = y[i] +
                    hh * (kB1 * k1[i] + kB3 * k3[i] + kB4 * k4[i] + kB5 * k5[i] + kB6 * k6[i]);
        rhs(t + hh, y5, k7);  // first-same-as-last stage
        for (std::size_t i = 0; i < n; ++i)
            errv[i] = hh * (kE1 * k1[i] + kE3 * k3[i] + kE4 * k4[i] + kE5 * k5[i] +
                            kE6 * k6[i] + kE7 * k7[i]);

        const double err = error_ratio(errv, y, y5, opts.abs_tol, opts.rel_tol);
        const double tnew = hit_end ? t1 : (hit_grid ? grid[gi] : t + hh);
        const bool admissible = !opts.inside || opts.inside(tnew, y5);

        if (err <= 1.0 && admissible) {
            t = tnew;
            y.swap(y5);
            k1.swap(k7);
            ++traj.accepted;
            if (hit_grid) ++gi;
            if (opts.observer) opts.observer(t, y);
            if (!opts.record_grid_only || hit_grid || hit_end) {
                traj.times.push_back(t);
                traj.states.push_back(y);
            }
            // PI controller (safety 0.9, growth <= 10, shrink >= 1/5).
            const double fac11 = std::pow(std::max(err, 1e-30), 0.17);
            double fac = fac11 / (std::pow(facold, 0.04) * 0.9);
            fac = std::clamp(fac, 0.1, 5.0);
            facold = std::max(err, 1e-4);
            const double hnew = std::min(hstep / fac, hmax);
            if (!hit_grid && !hit_end)
                h = hnew;
            else
                h = std::max(h, hnew);
        } else {
            ++traj.rejected;
            if (!admissible && err <= 1.0) {
                // Error-admissible but outside the domain: shrink toward the
                // boundary; a vanishing step means the flow genuinely leaves.
                if (hstep <= 16.0 * hfloor)
                    throw Error(Err::domain_exit,
                                "trajectory leaves the admissible domain near t = " + fnum(t));
                h = hstep / 2.0;
            } else {
                const double fac11 = std::pow(std::max(err, 1e-30), 0.17);
                const double fac = std::clamp(fac11 / 0.9, 1.2, 10.0);
                h = hstep / fac;
            }
        }
    }
    return traj;
}

// --- field evaluation ---------------------------------------------------------------

std::vector<Coeff> evaluate_field(const TFVectorField& x, const std::vector<Coeff>& zeta,
                                  const std::vector<Coeff>& phi, const Domain& u) {
    if (static_cast<int>(zeta.size()) != x.m() || static_cast<int>(phi.size()) != x.n())
        throw Error(Err::precondition_violated, "evaluate_field: point dimension mismatch");
    const double slack = 1.0 + 1e-9;
    for (const Coeff& z : zeta)
        if (std::abs(z) > u.eps * slack)
            throw Error(Err::out_of_domain, "evaluation point leaves the slow polydisc: |zeta| = " +
                                                fnum(std::abs(z)) + " > eps = " + fnum(u.eps));
    for (const Coeff& p : phi)
        if (std::abs(p.imag()) > u.s * slack)
            throw Error(Err::out_of_domain,
                        "evaluation point leaves the angle strip: |Im phi| = " +
                            fnum(std::abs(p.imag())) + " > s = " + fnum(u.s));
    std::vector<Coeff> out(static_cast<std::size_t>(x.components()));
    for (int h = 0; h < x.components(); ++h) out[static_cast<std::size_t>(h)] = evaluate(x.component(h), zeta, phi);
    return out;
}

RhsFn field_rhs(const TFVectorField& x, const Domain& u) {
    const int m = x.m(), n = x.n();
    return [x, u, m, n](double, const std::vector<double>& s, std::vector<double>& ds) {
        std::vector<Coeff> zeta(static_cast<std::size_t>(m)), phi(static_cast<std::size_t>(n));
        for (int i = 0; i < m; ++i)
            zeta[static_cast<std::size_t>(i)] = Coeff(s[2 * static_cast<std::size_t>(i)],
                                                      s[2 * static_cast<std::size_t>(i) + 1]);
        for (int j = 0; j < n; ++j) {
            const std::size_t base = 2 * static_cast<std::size_t>(m + j);
            phi[static_cast<std::size_t>(j)] = Coeff(s[base], s[base + 1]);
        }
        const std::vector<Coeff> v = evaluate_field(x, zeta, phi, u);
        ds.resize(2 * static_cast<std::size_t>(m + n));
        for (std::size_t h = 0; h < v.size(); ++h) {
            ds[2 * h] = v[h].real();
            ds[2 * h + 1] = v[h].imag();
        }
    };
}

RhsFn field_rhs_real(const TFVectorField& x, const Domain& u) {
    const int m = x.m(), n = x.n();
    return [x, u, m, n](double, const std::vector<double>& s, std::vector<double>& ds) {
        std::vector<Coeff> zeta(static_cast<std::size_t>(m)), phi(static_cast<std::size_t>(n));
        for (int i = 0; i < m; ++i) zeta[static_cast<std::size_t>(i)] = Coeff(s[static_cast<std::size_t>(i)], 0.0);
        for (int j = 0; j < n; ++j)
            phi[static_cast<std::size_t>(j)] = Coeff(s[static_cast<std::size_t>(m + j)], 0.0);
        const std::vector<Coeff> v = evaluate_field(x, zeta, phi, u);
        ds.resize(static_cast<std::size_t>(m + n));
        for (std::size_t h = 0; h < v.size(); ++h) ds[h] = v[h].real();
    };
}

// --- conjugation check ---------------------------------------------------------------

namespace {

std::vector<double> flatten(const std::vector<Coeff>& z) {
    std::vector<double> out(2 * z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[2 * i] = z[i].real();
        out[2 * i + 1] = z[i].imag();
    }
    return out;
}

std::vector<Coeff> unflatten(const std::vector<double>& s) {
    std::vector<Coeff> out(s.size() / 2);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = Coeff(s[2 * i], s[2 * i + 1]);
    return out;
}

}  // namespace

ConjugationReport verify_conjugation(const TFVectorField& y, const TFVectorField& x,
                                     const Domain& u, const Radii& w,
                                     const ConjugationOptions& opts) {
    if (y.m() != x.m() || y.n() != x.n())
        throw Error(Err::precondition_violated, "verify_conjugation: field dimension mismatch");
    if (opts.samples < 1 || opts.checkpoints < 1 || !(opts.t_end > 0.0))
        throw Error(Err::precondition_violated, "verify_conjugation: bad sampling options");

    const int m = x.m(), n = x.n();
    const Domain u_minus = shrink(u, w);
    const Domain u_plus = grow(u, w);

    LieSeriesOptions lopts;
    lopts.rel_tol = opts.lie_rel_tol;
    const LieSeriesResult z = lie_series_apply(y, x, u, w, lopts);

    const RhsFn rhs_y = field_rhs(y, u_plus);
    const RhsFn rhs_x = field_rhs(x, u);
    const RhsFn rhs_z = field_rhs(z.field, u_minus);

    IntegratorOptions flow_opts;
    flow_opts.abs_tol = std::min(opts.abs_tol, opts.newton_tol * 1e-2);
    flow_opts.rel_tol = std::min(opts.rel_tol, opts.newton_tol * 1e-2);
    flow_opts.record_grid_only = true;
    const auto flow_of_y = [&](const std::vector<double>& p) {
        return integrate(rhs_y, p, 0.0, 1.0, flow_opts).states.back();
    };

    std::vector<double> grid(static_cast<std::size_t>(opts.checkpoints));
    for (int j = 1; j <= opts.checkpoints; ++j)
        grid[static_cast<std::size_t>(j - 1)] = opts.t_end * static_cast<double>(j) /
                                                static_cast<double>(opts.checkpoints);
    grid.pop_back();  // t_end itself is the integration endpoint

    IntegratorOptions run_opts;
    run_opts.abs_tol = opts.abs_tol;
    run_opts.rel_tol = opts.rel_tol;
    run_opts.record_grid_only = true;
    run_opts.grid = grid;

    SplitMix64 rng(opts.seed);
    ConjugationReport rep;
    rep.tol = opts.tol;
    rep.tail_allowance = z.tail_bound;
    rep.q = z.q;
    rep.samples = opts.samples;

    for (int sample = 0; sample < opts.samples; ++sample) {
        std::vector<Coeff> zeta0(static_cast<std::size_t>(m));
        std::vector<Coeff> phi0(static_cast<std::size_t>(n));
        const double radius = opts.sample_radius * u_minus.eps;
        for (int i = 0; i < m; ++i) {
            const double r = radius * std::sqrt(rng.uniform01());
            const double a = rng.uniform(-3.141592653589793, 3.141592653589793);
            zeta0[static_cast<std::size_t>(i)] = Coeff(r * std::cos(a), r * std::sin(a));
        }
        for (int j = 0; j < n; ++j)
            phi0[static_cast<std::size_t>(j)] =
                Coeff(rng.uniform(-3.141592653589793, 3.141592653589793), 0.0);

        std::vector<double> y0 = flatten(zeta0);
        const std::vector<double> angles = flatten(phi0);
        y0.insert(y0.end(), angles.begin(), angles.end());

        // Route A: flow of the transformed field.
        const Trajectory traj_a = integrate(rhs_z, y0, 0.0, opts.t_end, run_opts);

        // Route B: flow of the original field from the mapped point, pulled
        // back through the time-1 flow of Y.
        const std::vector<double> x_start = flow_of_y(y0);
        const Trajectory traj_b = integrate(rhs_x, x_start, 0.0, opts.t_end, run_opts);

        if (traj_a.times.size() != traj_b.times.size())
            throw Error(Err::precondition_violated, "verify_conjugation: checkpoint mismatch");

        for (std::size_t row = 1; row < traj_b.times.size(); ++row) {
            const std::vector<double>& target = traj_b.states[row];

            // Quasi-Newton pullback: solve flow_of_y(p) = target.  The flow
            // is near-identity, so the Jacobian is replaced by the identity;
            // the iteration is seeded with the first-order inverse
            // target - Y(target).
            std::vector<Coeff> tz = unflatten(target);
            const std::vector<Coeff> yval =
                evaluate_field(y, std::vector<Coeff>(tz.begin(), tz.begin() + m),
                               std::vector<Coeff>(tz.begin() + m, tz.end()), u_plus);
            std::vector<double> p = target;
            const std::vector<double> yflat = flatten(yval);
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= yflat[i];

            const double scale = 1.0 + inf_norm(target);
            bool converged = false;
            for (int it = 0; it < opts.newton_max_iter; ++it) {
                const std::vector<double> image = flow_of_y(p);
                double resid = 0.0;
                for (std::size_t i = 0; i < p.size(); ++i)
                    resid = std::max(resid, std::abs(image[i] - target[i]));
                if (resid <= opts.newton_tol * scale) {
                    converged = true;
                    break;
                }
                for (std::size_t i = 0; i < p.size(); ++i) p[i] -= image[i] - target[i];
            }
            if (!converged)
                throw Error(Err::divergent_series,
                            "flow pullback iteration did not converge within " +
                                std::to_string(opts.newton_max_iter) + " steps");

            const std::vector<double>& route_a = traj_a.states[row];
            double diff = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i)
                diff = std::max(diff, std::abs(route_a[i] - p[i]));
            rep.max_discrepancy = std::max(rep.max_discrepancy, diff);
        }
    }
    rep.pass = rep.max_discrepancy <= rep.tol + rep.tail_allowance;
    return rep;
}

// --- damped linear reference ----------------------------------------------------------

namespace {

/// Direct 4x4 complex solve with partial pivoting.
std::array<Coeff, 4> solve4(const std::array<std::array<Coeff, 4>, 4>& a,
                            const std::array<Coeff, 4>& rhs) {
    std::array<std::array<Coeff, 5>, 4> aug{};
    double scale = 0.0;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            aug[i][j] = a[i][j];
            scale = std::max(scale, std::abs(a[i][j]));
        }
        aug[i][4] = rhs[i];
    }
    if (scale == 0.0)
        throw Error(Err::singular_eigenbasis, "eigenvector basis is identically zero");
    for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(aug[r][col]) > std::abs(aug[piv][col])) piv = r;
        if (std::abs(aug[piv][col]) <= 1e-12 * scale)
            throw Error(Err::singular_eigenbasis,
                        "eigenvector basis is numerically rank-deficient (pivot " +
                            fnum(std::abs(aug[piv][col])) + " against scale " + fnum(scale) + ")");
        std::swap(aug[piv], aug[col]);
        const Coeff inv = Coeff(1.0, 0.0) / aug[col][col];
        for (int j = col; j < 5; ++j) aug[col][j] *= inv;
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const Coeff f = aug[r][col];
            if (f == Coeff(0.0, 0.0)) continue;
            for (int j = col; j < 5; ++j) aug[r][j] -= f * aug[col][j];
        }
    }
    return {aug[0][4], aug[1][4], aug[2][4], aug[3][4]};
}

}  // namespace

std::array<Coeff, 4> DampedReference::value(double t) const {
    std::array<Coeff, 4> e{};
    for (int j = 0; j < 4; ++j) e[j] = std::exp(exponents[j] * t);
    std::array<Coeff, 4> out{};
    for (int i = 0; i < 4; ++i) {
        Coeff s(0.0, 0.0);
        for (int j = 0; j < 4; ++j) s += bc_[i][j] * e[j];
        out[i] = s;
    }
    return out;
}

std::array<Coeff, 4> DampedReference::derivative(double t) const {
    std::array<Coeff, 4> e{};
    for (int j = 0; j < 4; ++j) e[j] = exponents[j] * std::exp(exponents[j] * t);
    std::array<Coeff, 4> out{};
    for (int i = 0; i < 4; ++i) {
        Coeff s(0.0, 0.0);
        for (int j = 0; j < 4; ++j) s += bc_[i][j] * e[j];
        out[i] = s;
    }
    return out;
}

double DampedReference::gamma(double t) const { return value(t)[0].real(); }
double DampedReference::psi(double t) const { return value(t)[2].real(); }

DampedReference damped_reference(const SpectrumResult& spectrum,
                                 const std::array<Coeff, 4>& exponents,
                                 const std::array<double, 4>& x0_slow) {
    for (int j = 0; j < 4; ++j)
        if (!(exponents[j].real() < 0.0))
            throw Error(Err::precondition_violated,
                        "damped reference requires strictly negative real parts; exponent " +
                            std::to_string(j + 1) + " has Re = " + fnum(exponents[j].real()));

    std::array<Coeff, 4> rhs{};
    for (int i = 0; i < 4; ++i) rhs[i] = Coeff(x0_slow[i], 0.0);

    DampedReference ref;
    ref.exponents = exponents;
    ref.basis = spectrum.b;
    ref.coords = solve4(spectrum.b, rhs);
    ref.x0 = x0_slow;
    double mass = 0.0;
    for (int i = 0; i < 4; ++i) {
        double row = 0.0;
        for (int j = 0; j < 4; ++j) {
            ref.bc_[i][j] = spectrum.b[i][j] * ref.coords[j];
            row += std::abs(ref.bc_[i][j]);
        }
        mass = std::max(mass, row);
    }

    const std::array<Coeff, 4> v0 = ref.value(0.0);
    double resid = 0.0;
    for (int i = 0; i < 4; ++i) resid = std::max(resid, std::abs(v0[i] - rhs[i]));
    if (resid > 1e-12 * std::max(1e-300, mass))
        throw Error(Err::singular_eigenbasis,
                    "initial-state reconstruction through the eigenbasis failed: residual " +
                        fnum(resid) + " at mass " + fnum(mass));
    return ref;
}

DampedReference damped_reference(const SpectrumResult& spectrum,
                                 const std::array<double, 4>& x0_slow) {
    return damped_reference(spectrum, spectrum.eigenvalues, x0_slow);
}

// --- shadowing experiment --------------------------------------------------------------

namespace {

/// Drops field terms whose sup over the polydisc of `u` is below `floor`,
/// returning the dropped mass; keeps the integration cost of a dust-laden
/// remainder proportional to its meaningful content.
TFVectorField prune_field(const TFVectorField& x, const Domain& u, double floor, double* dropped) {
    TFVectorField out(x.m(), x.n());
    out.set_order_cap(x.order_cap());
    out.set_truncated(x.truncated());
    double mass = 0.0;
    for (int h = 0; h < x.components(); ++h) {
        TFComponent keep(x.m(), x.n());
        for (const auto& [idx, coeff] : x.component(h).terms()) {
            double value = std::abs(coeff);
            for (int v = 0; v < x.m(); ++v)
                for (int rep = 0; rep < std::abs(static_cast<int>(idx.v[static_cast<std::size_t>(v)])); ++rep)
                    value *= u.eps;
            for (int v = x.m(); v < x.m() + x.n(); ++v)
                value *= std::exp(std::abs(static_cast<int>(idx.v[static_cast<std::size_t>(v)])) * u.s);
            if (value >= floor)
                keep.set(idx, coeff);
            else
                mass += value;
        }
        out.set_component(h, std::move(keep));
    }
    if (dropped) *dropped = mass;
    return out;
}

struct LegResult {
    Trajectory chart;      ///< physical coordinates at the recorded times
    Trajectory deviation;  ///< deviation magnitudes at the recorded times
    double max_dev_gamma = 0.0;
    double max_dev_psi = 0.0;
    double max_dev_all = 0.0;
    std::size_t accepted = 0, rejected = 0;
};

/// Reverses a backward leg and stitches the forward leg after it (the
/// shared t = 0 row is kept once).
void stitch(const Trajectory& bwd, const Trajectory& fwd, bool backward, Trajectory* out) {
    out->times.clear();
    out->states.clear();
    if (backward) {
        for (std::size_t i = bwd.times.size(); i-- > 0;) {
            out->times.push_back(bwd.times[i]);
            out->states.push_back(bwd.states[i]);
        }
    } else {
        out->times.push_back(fwd.times.front());
        out->states.push_back(fwd.states.front());
    }
    for (std::size_t i = 1; i < fwd.times.size(); ++i) {
        out->times.push_back(fwd.times[i]);
        out->states.push_back(fwd.states[i]);
    }
}

}  // namespace

ShadowingReport shadowing_experiment(const PipelineReport& pipe, const PerturbationInputs& pert,
                                     const std::array<double, 4>& x0_slow,
                                     const ShadowingOptions& opts) {
    const BudgetConstants& budget = pipe.budget;
    if (!budget.flag_mu0)
        throw Error(Err::precondition_violated,
                    "budget flag violated: mu0/omega <= eps_small fails (mu0/omega = " +
                        fnum(budget.mu0 / pipe.params.omega_orb) + ", eps_small = " +
                        fnum(budget.eps_small) + ")");
    if (!budget.flag_mu1)
        throw Error(Err::precondition_violated,
                    "budget flag violated: mu1/gamma1 <= eps_small fails (mu1/gamma1 = " +
                        fnum(budget.mu1 / budget.gamma1) + ", eps_small = " +
                        fnum(budget.eps_small) + ")");

    const double eps3 = pipe.u3.eps;
    std::array<Coeff, 4> x0c{};
    for (int i = 0; i < 4; ++i) x0c[i] = Coeff(x0_slow[i], 0.0);
    const std::array<Coeff, 4> czeta = solve4(pipe.spectrum.b, x0c);
    double cinf = 0.0;
    for (const Coeff& c : czeta) cinf = std::max(cinf, std::abs(c));
    if (cinf > eps3 * (1.0 + 1e-12))
        throw Error(Err::out_of_domain,
                    "initial state leaves the final chart: |b^{-1} x0|_inf = " + fnum(cinf) +
                        " > eps3 = " + fnum(eps3));

    ShadowingReport rep;
    rep.epsilon = budget.eps_small;
    rep.T_horizon = budget.T_horizon;
    rep.horizon_cap =
        (opts.horizon_cap > 0.0) ? opts.horizon_cap : 1e4 / pipe.params.omega_orb;
    rep.horizon_used = std::min(rep.T_horizon, rep.horizon_cap);
    rep.offset_allowance =
        budget.mu0 / pipe.params.omega_orb + budget.mu1 / budget.gamma1;
    rep.x0 = x0_slow;
    rep.zeta3_0 = czeta;
    rep.reference = damped_reference(pipe.spectrum, pipe.lambda_hat, x0_slow);
    const DampedReference& ref = rep.reference;

    const double horizon = rep.horizon_used;
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw Error(Err::precondition_violated,
                    "shadowing horizon is not a positive finite time: " + fnum(horizon));

    double max_abs_re = 0.0;
    for (const Coeff& lam : pipe.lambda_hat)
        max_abs_re = std::max(max_abs_re, std::abs(lam.real()));

    // Certified sup bound: slow components of the final remainder are at
    // most (eps2/8) [[P3]], and the deviation integrates it over the
    // horizon (the exponential factor covers the backward direction).
    const double sup_p3 = (pipe.u2.eps / 8.0) * pipe.nf.p_star_norm;
    rep.deviation_bound_zeta3 = sup_p3 * horizon * std::exp(max_abs_re * horizon);

    const double omega = pipe.params.omega_orb;
    const Coeff omega_shift = pipe.omega_shift;

    // ---- final chart: deviation from the pure exponentials --------------------------

    double dropped = 0.0;
    const double prune_floor = 1e-9 * std::max(sup_p3, 1e-290);
    const TFVectorField p3 = prune_field(pipe.nf.p_star, pipe.u3, prune_floor, &dropped);

    // The model's angle row is identically zero in every chart (the fast
    // angle advances at the exact constant rate), so the angle never joins
    // the integrated state: it is recovered in closed form.  That keeps the
    // state vector at deviation scale throughout -- mixing a state of size
    // omega*t into an absolute tolerance sized for the deviations would
    // drown the error estimate in the angle's roundoff noise.
    if (!p3.component(4).empty() || !pipe.nf.p_star.component(4).empty())
        throw Error(Err::precondition_violated,
                    "shadowing assumes a constant-rate angle, but the final remainder has a "
                    "nonzero angle component");
    const double omega_hat3 = omega + omega_shift.real();

    const std::array<Coeff, 4>& lam_hat = pipe.lambda_hat;
    const std::array<Coeff, 4>& c3 = czeta;
    const Domain u3 = pipe.u3;

    const auto rhs3 = [&p3, &lam_hat, &c3, u3, omega_hat3](
                          double t, const std::vector<double>& s, std::vector<double>& ds) {
        std::vector<Coeff> zeta(4);
        for (int j = 0; j < 4; ++j) {
            const Coeff d(s[2 * static_cast<std::size_t>(j)],
                          s[2 * static_cast<std::size_t>(j) + 1]);
            zeta[static_cast<std::size_t>(j)] = c3[j] * std::exp(lam_hat[j] * t) + d;
        }
        const std::vector<Coeff> phi = {Coeff(omega_hat3 * t, 0.0)};
        const std::vector<Coeff> pv = evaluate_field(p3, zeta, phi, u3);
        ds.resize(8);
        for (int j = 0; j < 4; ++j) {
            const Coeff d(s[2 * static_cast<std::size_t>(j)],
                          s[2 * static_cast<std::size_t>(j) + 1]);
            const Coeff dd = lam_hat[j] * d + pv[static_cast<std::size_t>(j)];
            ds[2 * static_cast<std::size_t>(j)] = dd.real();
            ds[2 * static_cast<std::size_t>(j) + 1] = dd.imag();
        }
    };
    const GuardFn guard3 = [&lam_hat, &c3, eps3](double t, const std::vector<double>& s) {
        for (int j = 0; j < 4; ++j) {
            const Coeff d(s[2 * static_cast<std::size_t>(j)],
                          s[2 * static_cast<std::size_t>(j) + 1]);
            if (std::abs(c3[j] * std::exp(lam_hat[j] * t) + d) > eps3 * (1.0 + 1e-9)) return false;
        }
        return true;
    };

    const auto run_leg3 = [&](double t_final, LegResult* leg) {
        IntegratorOptions io;
        io.abs_tol = std::max(1e-3 * std::max(rep.deviation_bound_zeta3, 0.0),
                              1e-30 * eps3);
        io.rel_tol = opts.rel_tol;
        io.max_steps = opts.max_steps;
        io.inside = guard3;
        io.record_grid_only = true;
        const int nout = std::max(1, opts.n_outputs);
        for (int i = 1; i < nout; ++i)
            io.grid.push_back(t_final * static_cast<double>(i) / static_cast<double>(nout));
        double running = 0.0;
        io.observer = [&running](double, const std::vector<double>& s) {
            for (int j = 0; j < 4; ++j)
                running = std::max(running, std::hypot(s[2 * static_cast<std::size_t>(j)],
                                                       s[2 * static_cast<std::size_t>(j) + 1]));
        };
        const std::vector<double> d0(8, 0.0);
        const Trajectory raw = integrate(rhs3, d0, 0.0, t_final, io);
        leg->accepted = raw.accepted;
        leg->rejected = raw.rejected;
        leg->max_dev_all = running;
        leg->chart.abs_tol = leg->deviation.abs_tol = io.abs_tol;
        leg->chart.rel_tol = leg->deviation.rel_tol = io.rel_tol;
        for (std::size_t r = 0; r < raw.times.size(); ++r) {
            const double t = raw.times[r];
            const std::vector<double>& s = raw.states[r];
            std::vector<double> row(9), dev(4);
            for (int j = 0; j < 4; ++j) {
                const Coeff d(s[2 * static_cast<std::size_t>(j)],
                              s[2 * static_cast<std::size_t>(j) + 1]);
                const Coeff z = c3[j] * std::exp(lam_hat[j] * t) + d;
                row[2 * static_cast<std::size_t>(j)] = z.real();
                row[2 * static_cast<std::size_t>(j) + 1] = z.imag();
                dev[static_cast<std::size_t>(j)] = std::abs(d);
                leg->max_dev_all = std::max(leg->max_dev_all, std::abs(d));
            }
            row[8] = omega_hat3 * t;
            leg->chart.times.push_back(t);
            leg->chart.states.push_back(std::move(row));
            leg->deviation.times.push_back(t);
            leg->deviation.states.push_back(std::move(dev));
        }
    };

    LegResult fwd3, bwd3;
    run_leg3(horizon, &fwd3);
    if (opts.backward) run_leg3(-horizon, &bwd3);
    rep.max_deviation_zeta3 = std::max(fwd3.max_dev_all, bwd3.max_dev_all);
    stitch(bwd3.chart, fwd3.chart, opts.backward, &rep.zeta3_chart);
    stitch(bwd3.deviation, fwd3.deviation, opts.backward, &rep.zeta3_deviation);
    rep.zeta3_chart.abs_tol = rep.zeta3_deviation.abs_tol = fwd3.chart.abs_tol;
    rep.zeta3_chart.rel_tol = rep.zeta3_deviation.rel_tol = fwd3.chart.rel_tol;
    rep.zeta3_chart.accepted = rep.zeta3_deviation.accepted = fwd3.accepted + bwd3.accepted;
    rep.zeta3_chart.rejected = rep.zeta3_deviation.rejected = fwd3.rejected + bwd3.rejected;

    // ---- original chart: deviation from the damped reference ------------------------

    const LinearizedSystem lin =
        build_linearized_field(pipe.params, pipe.eq, pert, opts.order_cap);
    const Domain u0 = lin.u0;
    const TFVectorField& p0 = lin.p0;
    if (!p0.component(4).empty())
        throw Error(Err::precondition_violated,
                    "shadowing assumes a constant-rate angle, but the recentred field has a "
                    "nonzero angle component");

    const auto rhs0 = [&p0, &ref, u0, omega](double t, const std::vector<double>& s,
                                             std::vector<double>& ds) {
        const std::array<Coeff, 4> xhat = ref.value(t);
        const std::array<Coeff, 4> xdot = ref.derivative(t);
        std::vector<Coeff> x(4);
        for (int j = 0; j < 4; ++j)
            x[static_cast<std::size_t>(j)] =
                Coeff(xhat[j].real() + s[static_cast<std::size_t>(j)], 0.0);
        const std::vector<Coeff> phi = {Coeff(omega * t, 0.0)};
        const std::vector<Coeff> pv = evaluate_field(p0, x, phi, u0);
        ds.resize(4);
        for (int j = 0; j < 4; ++j)
            ds[static_cast<std::size_t>(j)] =
                pv[static_cast<std::size_t>(j)].real() - xdot[j].real();
    };
    const GuardFn guard0 = [&ref, u0](double t, const std::vector<double>& s) {
        const std::array<Coeff, 4> xhat = ref.value(t);
        for (int j = 0; j < 4; ++j)
            if (std::abs(xhat[j].real() + s[static_cast<std::size_t>(j)]) >
                u0.eps * (1.0 + 1e-9))
                return false;
        return true;
    };

    const auto run_leg0 = [&](double t_final, LegResult* leg) {
        IntegratorOptions io;
        io.abs_tol = opts.abs_tol_scale * eps3;
        io.rel_tol = opts.rel_tol;
        io.max_steps = opts.max_steps;
        io.inside = guard0;
        io.record_grid_only = true;
        const int nout = std::max(1, opts.n_outputs);
        for (int i = 1; i < nout; ++i)
            io.grid.push_back(t_final * static_cast<double>(i) / static_cast<double>(nout));
        double run_g = 0.0, run_p = 0.0;
        io.observer = [&run_g, &run_p](double, const std::vector<double>& s) {
            run_g = std::max(run_g, std::abs(s[0]));
            run_p = std::max(run_p, std::abs(s[2]));
        };
        // The reconstruction residual at t = 0 (at most 1e-12 relative, by
        // construction of the reference) seeds the deviation so the run
        // starts exactly on the true initial state.
        std::vector<double> d0(4, 0.0);
        const std::array<Coeff, 4> v0 = ref.value(0.0);
        for (int j = 0; j < 4; ++j) d0[static_cast<std::size_t>(j)] = x0_slow[j] - v0[j].real();
        const Trajectory raw = integrate(rhs0, d0, 0.0, t_final, io);
        leg->accepted = raw.accepted;
        leg->rejected = raw.rejected;
        leg->max_dev_gamma = run_g;
        leg->max_dev_psi = run_p;
        leg->chart.abs_tol = leg->deviation.abs_tol = io.abs_tol;
        leg->chart.rel_tol = leg->deviation.rel_tol = io.rel_tol;
        for (std::size_t r = 0; r < raw.times.size(); ++r) {
            const double t = raw.times[r];
            const std::vector<double>& s = raw.states[r];
            const std::array<Coeff, 4> xhat = ref.value(t);
            std::vector<double> row(5), dev(4);
            for (int j = 0; j < 4; ++j) {
                row[static_cast<std::size_t>(j)] = xhat[j].real() + s[static_cast<std::size_t>(j)];
                dev[static_cast<std::size_t>(j)] = std::abs(s[static_cast<std::size_t>(j)]);
            }
            row[4] = omega * t;
            leg->max_dev_gamma = std::max(leg->max_dev_gamma, dev[0]);
            leg->max_dev_psi = std::max(leg->max_dev_psi, dev[2]);
            leg->chart.times.push_back(t);
            leg->chart.states.push_back(std::move(row));
            leg->deviation.times.push_back(t);
            leg->deviation.states.push_back(std::move(dev));
        }
    };

    LegResult fwd0, bwd0;
    run_leg0(horizon, &fwd0);
    if (opts.backward) run_leg0(-horizon, &bwd0);
    rep.max_deviation_gamma = std::max(fwd0.max_dev_gamma, bwd0.max_dev_gamma);
    rep.max_deviation_psi = std::max(fwd0.max_dev_psi, bwd0.max_dev_psi);
    stitch(bwd0.chart, fwd0.chart, opts.backward, &rep.original_chart);
    stitch(bwd0.deviation, fwd0.deviation, opts.backward, &rep.original_deviation);
    rep.original_chart.abs_tol = rep.original_deviation.abs_tol = fwd0.chart.abs_tol;
    rep.original_chart.rel_tol = rep.original_deviation.rel_tol = fwd0.chart.rel_tol;
    rep.original_chart.accepted = rep.original_deviation.accepted = fwd0.accepted + bwd0.accepted;
    rep.original_chart.rejected = rep.original_deviation.rejected = fwd0.rejected + bwd0.rejected;

    rep.pass = rep.max_deviation_gamma < rep.epsilon && rep.max_deviation_psi < rep.epsilon &&
               rep.max_deviation_zeta3 < rep.epsilon;
    return rep;
}

std::string shadowing_to_text(const ShadowingReport& rep) {
    std::string out;
    out += "shadowing experiment\n";
    out += "====================\n";
    out += "accuracy target epsilon      : " + fnum(rep.epsilon) + "\n";
    out += "stability horizon T          : " + fnum(rep.T_horizon) + "\n";
    out += "horizon cap                  : " + fnum(rep.horizon_cap) + "\n";
    out += "horizon used                 : " + fnum(rep.horizon_used) + "\n";
    out += "initial slow state           : (" + fnum(rep.x0[0]) + ", " + fnum(rep.x0[1]) + ", " +
           fnum(rep.x0[2]) + ", " + fnum(rep.x0[3]) + ")\n";
    out += "final-chart coordinates      : ";
    for (int j = 0; j < 4; ++j) out += (j ? ", " : "") + fnum(rep.zeta3_0[j]);
    out += "\n";
    out += "max |gamma - gamma_hat|      : " + fnum(rep.max_deviation_gamma) + "\n";
    out += "max |psi - psi_hat|          : " + fnum(rep.max_deviation_psi) + "\n";
    out += "max final-chart deviation    : " + fnum(rep.max_deviation_zeta3) + "\n";
    out += "certified final-chart bound  : " + fnum(rep.deviation_bound_zeta3) + "\n";
    out += "chart-change offset allowance: " + fnum(rep.offset_allowance) + "\n";
    out += "recorded times (original)    : " + std::to_string(rep.original_chart.times.size()) +
           "\n";
    out += "recorded times (final chart) : " + std::to_string(rep.zeta3_chart.times.size()) + "\n";
    out += std::string("verdict                      : ") + (rep.pass ? "PASS" : "FAIL") +
           " (all deviations below epsilon over |t| <= horizon)\n";
    return out;
}

// --- exports ---------------------------------------------------------------------------

std::string trajectory_to_csv(const Trajectory& traj, const std::vector<std::string>& names) {
    if (!names.empty() && names.size() != traj.dim())
        throw Error(Err::precondition_violated, "trajectory_to_csv: column name count mismatch");
    std::string out = "t";
    if (names.empty()) {
        for (std::size_t i = 0; i < traj.dim(); ++i) out += ",x" + std::to_string(i + 1);
    } else {
        for (const std::string& name : names) out += "," + name;
    }
    out += "\n";
    for (std::size_t r = 0; r < traj.times.size(); ++r) {
        out += fnum(traj.times[r]);
        for (double v : traj.states[r]) out += "," + fnum(v);
        out += "\n";
    }
    return out;
}

std::string shadowing_plot_script(const std::string& original_csv, const std::string& zeta3_csv) {
    std::string out;
    out += "# gnuplot script for the shadowing experiment exports (plain text output)\n";
    out += "set datafile separator ','\n";
    out += "set key autotitle columnhead\n";
    out += "set terminal dumb size 140,40\n";
    out += "set xlabel 't'\n";
    out += "set title 'original chart: librations against the damped reference'\n";
    out += "plot '" + original_csv + "' using 1:2 with lines title 'gamma', \\\n";
    out += "     '" + original_csv + "' using 1:4 with lines title 'psi'\n";
    out += "set title 'original chart: deviation magnitudes'\n";
    out += "set logscale y\n";
    out += "plot '" + original_csv + "' using 1:7 with lines title '|gamma dev|', \\\n";
    out += "     '" + original_csv + "' using 1:9 with lines title '|psi dev|'\n";
    out += "unset logscale y\n";
    out += "set title 'final chart: slow coordinate moduli'\n";
    out += "plot '" + zeta3_csv + "' using 1:(sqrt($2*$2+$3*$3)) with lines title '|zeta_1|', \\\n";
    out += "     '" + zeta3_csv + "' using 1:(sqrt($6*$6+$7*$7)) with lines title '|zeta_3|'\n";
    return out;
}

}  // namespace tfnf
