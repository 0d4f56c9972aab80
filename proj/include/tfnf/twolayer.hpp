#pragma once

#include <array>
#include <string>
#include <vector>

#include "tfnf/domain.hpp"
#include "tfnf/errors.hpp"
#include "tfnf/normalform.hpp"
#include "tfnf/tfseries.hpp"

namespace tfnf {

// ============================================================================
// Two-layer spin-orbit model.
//
// A rigid shell and an inner core, each close to a spin-orbit resonance,
// coupled to each other by viscous friction and to the orbit by an external
// torque.  Slow variables (gamma, p_gamma, psi, p_psi), one fast angle ell
// advancing with the orbital frequency.  The module builds the vector field,
// certifies the spectrum of its linear block through a 2x2 quadratic matrix
// pencil, computes the stability budget (mu0, mu1, gamma1, T), and runs the
// full averaging -> diagonalization -> exponential normal-form pipeline.
// ============================================================================

/// Model parameters.  Frictions are ordered theta > eps > ups > 0; the
/// external drift v0 must satisfy ups*|v0|/c2 < 1 for an equilibrium to
/// exist, and theta^2 < (8/9) min{c1, c2} keeps the linear block spectrum
/// strictly complex ("underdamped" regime).
struct TwoLayerParams {
    double c1 = 1.0;          ///< shell restoring coefficient (1/time^2)
    double c2 = 1.0;          ///< core restoring coefficient (1/time^2)
    double theta_fric = 0.0;  ///< shell-orbit friction theta (1/time)
    double eps_fric = 0.0;    ///< shell-core friction eps (1/time)
    double ups_fric = 0.0;    ///< core drift friction ups (1/time)
    double omega_orb = 0.0;   ///< orbital mean motion omega (1/time)
    double v0 = 0.0;          ///< drift velocity of the core forcing
    int k_res = 2;            ///< resonance index (documentation only)
    double eps0 = 0.0;        ///< analyticity radius of the slow block
    double s0 = 0.0;          ///< analyticity strip half-width of the angle
    double r_over_a = 0.0;    ///< external body distance ratio r/a
    double Cmin = 1.0;        ///< min of the two moments of inertia (scale)
    double a_k = 1.0;         ///< eccentricity-function value (input knob)

    double delta() const noexcept { return eps_fric + ups_fric; }

    /// Throws Err::invalid_params when the friction ordering, the
    /// equilibrium condition, or the underdamping condition fails.
    void validate() const;
};

/// Core equilibrium angle eta0 with sin(2 eta0) = ups*v0/c2, on the branch
/// with cos(2 eta0) > 0, and the effective restoring coefficient
/// c2bar = c2 cos(2 eta0) of the recentred core.
struct Equilibrium {
    double eta0 = 0.0;
    double cos2eta0 = 1.0;
    double c2bar = 0.0;
};

/// The 4x4 linear block L of the recentred slow dynamics
///   (gamma, p_gamma, psi, p_psi)' = L (gamma, p_gamma, psi, p_psi) + h.o.t.
struct LinearBlock {
    std::array<std::array<double, 4>, 4> a{};

    double trace() const noexcept { return a[0][0] + a[1][1] + a[2][2] + a[3][3]; }
    /// Induced l-infinity norm (max absolute row sum).
    double inf_norm() const noexcept;
};

/// Symmetric 2x2 matrix pencil T x'' + B x' + V x = 0 equivalent to the
/// linear block after scaling the two rows by (eps, theta), together with
/// the extremal eigenvalues of each matrix.
struct QuadraticPencil {
    std::array<std::array<double, 2>, 2> t{};
    std::array<std::array<double, 2>, 2> b{};
    std::array<std::array<double, 2>, 2> v{};

    double lamT_min = 0.0, lamT_max = 0.0;
    double lamB_min = 0.0, lamB_max = 0.0;
    double lamV_min = 0.0, lamV_max = 0.0;

    /// Rayleigh-quotient window for the real parts of the block spectrum:
    /// [-lamB_max/(2 lamT_min), -lamB_min/(2 lamT_max)].
    double rayleigh_lo() const noexcept { return -lamB_max / (2.0 * lamT_min); }
    double rayleigh_hi() const noexcept { return -lamB_min / (2.0 * lamT_max); }

    /// Positivity invariant forcing complex eigenvalues:
    /// 4 lamT_min lamV_min - lamB_max^2 > 0.
    double positivity() const noexcept {
        return 4.0 * lamT_min * lamV_min - lamB_max * lamB_max;
    }
};

/// Certified spectrum of the linear block: two conjugate pairs with
/// negative real parts, an eigenvector basis normalized to unit l-infinity
/// columns (largest-modulus entry real positive), and its inverse.
struct SpectrumResult {
    std::array<Coeff, 4> eigenvalues{};
    std::array<std::array<Coeff, 4>, 4> b{};      ///< columns are eigenvectors
    std::array<std::array<Coeff, 4>, 4> b_inv{};
    std::array<double, 4> residuals{};            ///< ||L b_j - lambda_j b_j||_inf

    double rayleigh_lo = 0.0;      ///< enforced window, lower end
    double rayleigh_hi = 0.0;      ///< enforced window, upper end
    double coarse_lo = 0.0;        ///< diagnostic window -3 theta/2
    double coarse_hi = 0.0;        ///< diagnostic window -ups/3
    bool coarse_window_ok = false; ///< all Re lambda inside the coarse window
    double coarse_violation = 0.0; ///< worst excess outside it (0 when ok)

    double b_norm_inf = 0.0;        ///< induced l-infinity norm of b
    double b_inv_norm_inf = 0.0;    ///< induced l-infinity norm of b^{-1}
    double offdiag_mass = 0.0;      ///< sum |(b^{-1} L b)_{ij}|, i != j

    double min_abs_re = 0.0;        ///< min_j |Re lambda_j|
};

/// Stability budget of the model: perturbation sizes mu0 (raw field) and
/// mu1 (after averaging and diagonalization), the spectral-gap floor
/// gamma1 = min{ups/3, omega}, and the exponential stability horizon T.
struct BudgetConstants {
    double mu0 = 0.0;
    double mu1 = 0.0;
    double gamma1 = 0.0;
    double T_horizon = 0.0;
    double const_used = 1.0;
    double eps_small = 0.0;      ///< accuracy target the flags refer to
    double eps_star = 0.0;       ///< slow radius of the final chart
    bool flag_mu0 = false;       ///< mu0/omega <= eps_small
    bool flag_mu1 = false;       ///< mu1/gamma1 <= eps_small

    bool feasible() const noexcept { return flag_mu0 && flag_mu1; }
};

/// External forcing inputs: `tilde` must have zero ell-average in every
/// component (purely oscillating torques); `hat` is unrestricted.  Both are
/// fields on 4 slow variables and 1 angle; empty fields mean no forcing.
struct PerturbationInputs {
    TFVectorField tilde{4, 1};
    TFVectorField hat{4, 1};
};

/// The recentred model written as X0 = N0 + P0 with N0 = (0, omega) and
/// P0 = (L zeta, 0) + higher-order restoring remainders + forcings.
struct LinearizedSystem {
    Frequencies freq;       ///< lambda = (0,0,0,0), omega = (omega_orb)
    TFVectorField p0;       ///< full perturbation P0 (slow rows + zero angle row)
    LinearBlock block;
    Equilibrium eq;
    Domain u0;              ///< (eps0, s0)
};

// --- model construction ---------------------------------------------------------

/// Core equilibrium angle.  Throws Err::no_equilibrium when ups|v0| >= c2
/// (or c2 <= 0), i.e. when the friction torque cannot be balanced.
Equilibrium equilibrium(const TwoLayerParams& params);

/// Full (not recentred) vector field of the model on (gamma, p_gamma, eta,
/// p_eta; ell): pendulum torques -c1 sin 2gamma, -c2 sin 2eta, friction
/// couplings, drift forcing, plus the two forcing inputs.  The sine series
/// are expanded through `order_cap`.  The angle component is identically
/// omega.  Throws Err::perturbation_average_nonzero when `tilde` has a
/// nonzero ell-average.
TFVectorField build_full_field(const TwoLayerParams& params, const PerturbationInputs& pert,
                               int order_cap);

/// Linear block of the recentred dynamics (gamma, p_gamma, psi, p_psi).
LinearBlock build_linear_block(const TwoLayerParams& params, const Equilibrium& eq);

/// Recentres the model at (0, 0, eta0, 0), splits off N0 = (0, omega), and
/// assembles P0 = (L zeta, 0) + restoring remainders + shifted forcings.
/// The remainders start at order >= 2 (quadratic from the drift torque when
/// v0 != 0, cubic otherwise), so `order_cap` must be >= 3.
LinearizedSystem build_linearized_field(const TwoLayerParams& params, const Equilibrium& eq,
                                        const PerturbationInputs& pert, int order_cap);

// --- spectrum -------------------------------------------------------------------

/// Symmetric quadratic pencil of the linear block (rows scaled by eps and
/// theta) together with closed-form extremal eigenvalues.
QuadraticPencil reduce_to_pencil(const TwoLayerParams& params, const Equilibrium& eq);

/// Eigenvalues and eigenvectors of the linear block via the quartic
///   (x^2 + theta x + 2 c1)(x^2 + delta x + 2 c2bar) - theta eps x^2 = 0
/// solved by a companion-matrix QR eigensolve plus one Newton polish per
/// root.  Conjugate pairs are symmetrized exactly; the columns of b have
/// unit l-infinity norm with the largest-modulus entry real positive, and
/// the pairs are ordered by (sign Im, |Im|).
///
/// Each real part is verified against the Rayleigh-quotient window
/// [-lamB_max/(2 lamT_min), -lamB_min/(2 lamT_max)] with 1e-12 slack
/// (Err::window_violation beyond it -- that window is provable, so an exit
/// signals an implementation bug).  The narrower heuristic window
/// (-3 theta/2, -ups/3) is reported diagnostically; it can genuinely fail
/// for admissible parameters and therefore never throws.
/// Throws Err::degenerate_spectrum when the two pairs collide or a pair
/// touches the real axis.
SpectrumResult solve_spectrum(const LinearBlock& block, const TwoLayerParams& params);

// --- budget ---------------------------------------------------------------------

/// Stability budget:
///   mu0 = const * max{c1, c2, eps0, eps*eps0, delta*eps0, |v0| ups,
///                     (r/a)^2/(eps0 Cmin)}
///   mu1 = const * max{mu0^2/omega, mu0 r/a, c1 eps0^3, c2 eps0^2}
///   gamma1 = min{ups/3, omega}
///   T = const^{-1} (eps_small/(eps_star mu1)) e^{gamma1/mu1}
/// with eps_star = eps0/(4 ||b||) the slow radius of the final chart.  The
/// flags record whether mu0/omega <= eps_small and mu1/gamma1 <= eps_small.
BudgetConstants compute_budget(const TwoLayerParams& params, double const_used,
                               double eps_small);

/// Same, reusing an already-computed spectrum (pipeline internal).
BudgetConstants compute_budget(const TwoLayerParams& params, double const_used,
                               double eps_small, const SpectrumResult& spectrum);

// --- pipeline -------------------------------------------------------------------

struct PipelineOptions {
    int order_cap = 9;          ///< series order cap for the model fields
    int K0_override = 0;        ///< 0: K0 = ceil(log(omega/mu0)/tau0)
    int K1_override = 0;        ///< 0: K1 = floor(gamma1/(2 C* mu1 sigma_bar))
    double const_used = 24.0;   ///< "const" of the budget formulas
    double eps_small = 0.01;    ///< accuracy target for the budget flags
    double lie_rel_tol = 1e-12;
    bool scan_nonresonance = true;  ///< brute-force divisor scan before step 3
};

/// Everything the pipeline produced, with one ledger row per certified
/// inequality.  Step numbering in the ledger: "1" averaging, "2"
/// diagonalization, "3" exponential normal form, "4" conclusions; rows
/// copied from the inner engines keep their own sub-labels.
struct PipelineReport {
    TwoLayerParams params;
    Equilibrium eq;
    LinearBlock block;
    SpectrumResult spectrum;
    BudgetConstants budget;

    // step 1: averaging of the fast angle
    Domain u0, u1;
    int K0 = 0;
    double gamma0 = 0.0;
    double tau0 = 0.0;
    double p0_norm = 0.0;        ///< [[P0]] at (u0, u0/4)
    double p1_tilde_norm = 0.0;  ///< [[P1~]] at (u1, u0/4)
    GeneratorStep step1_generator;

    // step 2: diagonalization of the linear block
    Domain u2;
    double p2_norm = 0.0;        ///< [[P2]] at (u2, u2/8)
    Frequencies freq2;           ///< diagonal exponents + omega
    TFVectorField p2;

    // step 3: exponential normal form
    int K1 = 0;
    double gamma1 = 0.0;
    double sigma_bar = 0.0;
    NonresonanceCertificate nonres;
    NormalFormOutcome nf;

    // step 4: conclusions
    Domain u3;
    std::array<Coeff, 4> lambda_hat{};
    std::array<Coeff, 4> lambda_shift{};
    Coeff omega_shift{};
    double eps_star = 0.0;

    Ledger ledger;

    bool all_pass() const noexcept { return ledger.all_pass(); }
};

/// Runs the full chain: recentre, average the fast angle (step 1),
/// diagonalize the linear block (step 2), reduce the remainder to an
/// exponentially small one (step 3), and read off the shifted exponents
/// lambda_hat (step 4).  Any engine error is rethrown with the step number
/// prepended to the message.
PipelineReport main_pipeline(const TwoLayerParams& params, const PerturbationInputs& pert,
                             const PipelineOptions& opts = {});

/// Deterministic plain-text report, one section per pipeline step.
std::string report_to_text(const PipelineReport& report);

}  // namespace tfnf
