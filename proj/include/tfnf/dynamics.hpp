#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tfnf/domain.hpp"
#include "tfnf/tfseries.hpp"
#include "tfnf/twolayer.hpp"

namespace tfnf {

// --- adaptive integration ---------------------------------------------------------

/// Right-hand side of a real first-order system: dx = f(t, x).
using RhsFn = std::function<void(double t, const std::vector<double>& x, std::vector<double>& dx)>;

/// Domain membership test; returning false rejects the step (the solver
/// halves the step size and, if that underflows, reports a domain exit).
using GuardFn = std::function<bool(double t, const std::vector<double>& x)>;

/// Called once per accepted step with the step endpoint.
using ObserverFn = std::function<void(double t, const std::vector<double>& x)>;

struct IntegratorOptions {
    double abs_tol = 1e-10;
    double rel_tol = 1e-10;
    double initial_step = 0.0;  ///< 0: automatic startup heuristic
    double max_step = 0.0;      ///< 0: the full interval length
    std::size_t max_steps = 50'000'000;
    GuardFn inside;             ///< empty: the whole space is admissible
    ObserverFn observer;
    /// Times the solver must hit exactly, strictly between t0 and t1 and
    /// ordered in the direction of travel.
    std::vector<double> grid;
    /// Record states only at t0, grid times and t1 (otherwise at every
    /// accepted step).
    bool record_grid_only = false;
};

/// A sampled solution curve: `times` strictly monotone in the direction of
/// travel, one state row per time.
struct Trajectory {
    std::vector<double> times;
    std::vector<std::vector<double>> states;
    double abs_tol = 0.0;
    double rel_tol = 0.0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;

    std::size_t dim() const { return states.empty() ? 0 : states.front().size(); }
};

/// Dormand-Prince 5(4) embedded Runge-Kutta pair with PI step-size control.
/// Every accepted step has an embedded local-error estimate at most
/// atol + rtol * |x| componentwise (RMS-scaled).  Throws Err::domain_exit
/// when the guard cannot be satisfied with any positive step and
/// Err::step_underflow when the step size degenerates or the step budget
/// is exhausted.
Trajectory integrate(const RhsFn& rhs, const std::vector<double>& x0, double t0, double t1,
                     const IntegratorOptions& opts = {});

// --- field evaluation -------------------------------------------------------------

/// Evaluates every component of `x` at (zeta, phi).  The point must lie in
/// the closed polydisc of `u`: |zeta_i| <= eps and |Im phi_i| <= s
/// (Err::out_of_domain otherwise).
std::vector<Coeff> evaluate_field(const TFVectorField& x, const std::vector<Coeff>& zeta,
                                  const std::vector<Coeff>& phi, const Domain& u);

/// Right-hand side on the complexification: the state interleaves real and
/// imaginary parts of the m slow variables followed by the n angles, so the
/// real dimension is 2(m+n).
RhsFn field_rhs(const TFVectorField& x, const Domain& u);

/// Right-hand side on the real slice (m + n real coordinates); imaginary
/// parts of the field values are discarded, which is exact for fields with
/// real coefficient data.
RhsFn field_rhs_real(const TFVectorField& x, const Domain& u);

// --- conjugation check ------------------------------------------------------------

struct ConjugationOptions {
    int samples = 5;              ///< random initial points
    double tol = 1e-8;            ///< pass threshold before the Lie-tail allowance
    double t_end = 1.0;           ///< compared over t in [0, t_end]
    int checkpoints = 4;          ///< comparison times t_end * j / checkpoints
    double sample_radius = 0.4;   ///< slow draw radius as a fraction of (u - w).eps
    double abs_tol = 1e-12;       ///< integrator tolerances for both routes
    double rel_tol = 1e-12;
    double lie_rel_tol = 1e-12;   ///< truncation target of the transformed field
    double newton_tol = 1e-12;    ///< pullback solve tolerance
    int newton_max_iter = 50;
    std::uint64_t seed = 0x7155e5u;
};

struct ConjugationReport {
    double max_discrepancy = 0.0;  ///< worst |route A - route B| over samples/times
    double tail_allowance = 0.0;   ///< majorant of the dropped Lie tail
    double tol = 0.0;              ///< threshold the check ran against
    double q = 0.0;                ///< Lie contraction factor e [[Y]]
    int samples = 0;
    bool pass = false;             ///< max_discrepancy <= tol + tail_allowance
};

/// Checks the flow conjugation identity behind every normal-form step: the
/// time-1 flow of Y carries solutions of dy = (e^{L_Y} X)(y) to solutions
/// of dx = X(x).  Route A integrates the transformed field directly; route
/// B integrates X from the mapped initial point and pulls each sample back
/// through the flow of Y with a fixed-point/Newton solve.  Conventions
/// follow the Lie machinery: Y analytic on u + w, X on u, transformed
/// field on u - w.  Throws Err::divergent_series when the Lie series does
/// not contract (q >= 1) or the pullback solve fails to converge.
ConjugationReport verify_conjugation(const TFVectorField& y, const TFVectorField& x,
                                     const Domain& u, const Radii& w,
                                     const ConjugationOptions& opts = {});

// --- damped linear reference ------------------------------------------------------

/// Closed-form solution x(t) = b diag(e^{lambda_j t}) c of the damped
/// linear system, with c chosen so that x(0) equals the prescribed initial
/// slow state.  Rows 0 and 2 are the libration angles gamma and psi.
struct DampedReference {
    std::array<Coeff, 4> exponents{};            ///< strictly damped: Re < 0
    std::array<std::array<Coeff, 4>, 4> basis{}; ///< eigenvector columns b
    std::array<Coeff, 4> coords{};               ///< c = b^{-1} x0
    std::array<double, 4> x0{};

    std::array<Coeff, 4> value(double t) const;
    std::array<Coeff, 4> derivative(double t) const;
    double gamma(double t) const;  ///< Re value(t)[0]
    double psi(double t) const;    ///< Re value(t)[2]

private:
    friend DampedReference damped_reference(const SpectrumResult&, const std::array<Coeff, 4>&,
                                            const std::array<double, 4>&);
    std::array<std::array<Coeff, 4>, 4> bc_{};  ///< b diag(c), cached
};

/// Builds the reference from an eigenbasis and (possibly shifted)
/// exponents.  The coordinates solve basis * c = x0 by direct elimination;
/// a numerically rank-deficient basis raises Err::singular_eigenbasis and
/// exponents with a nonnegative real part raise Err::precondition_violated.
/// The reconstruction at t = 0 is verified to 1e-12 relative.
DampedReference damped_reference(const SpectrumResult& spectrum,
                                 const std::array<Coeff, 4>& exponents,
                                 const std::array<double, 4>& x0_slow);

/// Same with the unshifted spectrum exponents.
DampedReference damped_reference(const SpectrumResult& spectrum,
                                 const std::array<double, 4>& x0_slow);

// --- shadowing experiment ---------------------------------------------------------

struct ShadowingOptions {
    /// Hard horizon cap; 0 picks 1e4 fast-angle radians (1e4 / omega).
    double horizon_cap = 0.0;
    int order_cap = 9;            ///< series order cap when rebuilding the model field
    int n_outputs = 200;          ///< recorded times per direction of travel
    /// Absolute integrator tolerance as a fraction of the chart radius.
    double abs_tol_scale = 1e-12;
    double rel_tol = 1e-6;
    std::size_t max_steps = 50'000'000;
    bool backward = true;         ///< also cover [-horizon, 0]
};

/// Outcome of the two-chart shadowing run.  Deviations are measured on
/// every accepted integrator step against the damped reference built from
/// the shifted exponents; `pass` requires all of them below `epsilon` over
/// the whole covered time range.
struct ShadowingReport {
    double epsilon = 0.0;               ///< accuracy target (budget eps_small)
    double T_horizon = 0.0;             ///< formula-level stability horizon
    double horizon_cap = 0.0;           ///< cap actually applied
    double horizon_used = 0.0;          ///< min(T_horizon, horizon_cap)
    double max_deviation_gamma = 0.0;   ///< original chart, |gamma - gamma_hat|
    double max_deviation_psi = 0.0;     ///< original chart, |psi - psi_hat|
    double max_deviation_zeta3 = 0.0;   ///< final chart, max_j |zeta_j - c_j e^{lambda_hat_j t}|
    double deviation_bound_zeta3 = 0.0; ///< certified sup|P|-times-horizon bound
    double offset_allowance = 0.0;      ///< mu0/omega + mu1/gamma1 chart-change offsets
    bool pass = false;

    std::array<double, 4> x0{};         ///< initial slow state, original chart
    std::array<Coeff, 4> zeta3_0{};     ///< its coordinates in the final chart
    DampedReference reference;

    /// Columns: gamma, p_gamma, psi, p_psi, ell.
    Trajectory original_chart;
    /// Columns: |gamma - gamma_hat|, ..., |p_psi - p_psi_hat|.
    Trajectory original_deviation;
    /// Columns: Re/Im zeta_1..4, phi.
    Trajectory zeta3_chart;
    /// Columns: |zeta_j - c_j e^{lambda_hat_j t}| for j = 1..4.
    Trajectory zeta3_deviation;
};

/// Integrates the true recentred dynamics and the fully normalized
/// dynamics from the same initial slow state and measures both against the
/// damped reference with the shifted exponents.  Both runs integrate the
/// deviation from the reference directly, so the reported maxima resolve
/// far below the chart radius.  Preconditions: both budget flags hold
/// (Err::precondition_violated naming the failing flag) and the initial
/// state lies in the final chart, |b^{-1} x0| <= eps3 (Err::out_of_domain).
ShadowingReport shadowing_experiment(const PipelineReport& pipe, const PerturbationInputs& pert,
                                     const std::array<double, 4>& x0_slow,
                                     const ShadowingOptions& opts = {});

/// Deterministic plain-text rendering (no timestamps).
std::string shadowing_to_text(const ShadowingReport& rep);

// --- exports ----------------------------------------------------------------------

/// CSV with header "t, <names...>" and one row per recorded time,
/// coefficients rendered with full precision.
std::string trajectory_to_csv(const Trajectory& traj, const std::vector<std::string>& names);

/// Plain-text gnuplot script plotting the exported shadowing CSV files.
std::string shadowing_plot_script(const std::string& original_csv, const std::string& zeta3_csv);

}  // namespace tfnf
