#pragma once

#include <string>
#include <vector>

#include "tfnf/tfseries.hpp"

namespace tfnf {

/// Generalized frequencies of the unperturbed field
///   N(zeta, phi) = (lambda_1 zeta_1, ..., lambda_m zeta_m, omega_1, ..., omega_n):
/// complex exponents on the slow block, real angle frequencies.
struct Frequencies {
    std::vector<Coeff> lambda;
    std::vector<double> omega;

    int m() const noexcept { return static_cast<int>(lambda.size()); }
    int n() const noexcept { return static_cast<int>(omega.size()); }

    /// (lambda, i omega) . (alpha, k); `base` may carry negative Taylor
    /// entries (it is a translated index).
    Coeff pairing(const MultiIndex& base) const;

    /// Divisor of the homological equation for component h at field index
    /// `idx`: -(lambda, i omega) . (idx - p_h), where p_h is the unit
    /// exponent of variable h for slow components and 0 for angle ones.
    Coeff divisor(const MultiIndex& idx, int h) const;

    /// N as a sparse field (linear slow part, constant angle part).
    TFVectorField vector_field() const;

    /// Scale used for resonance tolerances: sum of all |lambda|, |omega|.
    double magnitude() const noexcept;
};

/// Witness that |(lambda, i omega) . base| >= gamma for every scanned base
/// index outside the lattice with |base|_1 <= K.  The scan covers exactly
/// the divisor arguments that can occur: translated indices whose slow
/// entries are >= -1 with at most one negative slot.
struct NonresonanceCertificate {
    double gamma = 0.0;
    int K = 0;
    Lattice lattice = Lattice::zero();
    double worst_value = 0.0;   ///< smallest |pairing| among scanned indices
    MultiIndex worst_index{};   ///< where the minimum is attained
};

/// Exhaustively scans divisors up to order K; throws Err::resonance_found
/// (with the violating index in the message) if any falls below gamma.
NonresonanceCertificate check_nonresonant(const Frequencies& freq, double gamma,
                                          const Lattice& lattice, int K);

/// True iff every lattice member of order <= order_cap annihilates the
/// frequency pairing (tolerance 1e-12 relative to the frequency scale).
bool check_lambda_resonant(const Frequencies& freq, const Lattice& lattice, int order_cap);

/// Solves [Y, N] = Z for the unique Y with Pi_Lambda Y = 0 supported on the
/// truncated support of Z, dividing term-by-term by the divisor.
///
/// Preconditions enforced: Pi_Lambda Z = 0, and (when K >= 0) Z has no term
/// of order > K.  K = -1 means no order cutoff (all sparse series are
/// finitely supported).  Throws Err::small_divisor when a needed divisor
/// has |d| < gamma (a certificate mismatch).
TFVectorField solve_homological(const Frequencies& freq, const TFVectorField& z,
                                const Lattice& lattice, int K, double gamma);

// --- Lie series ------------------------------------------------------------------

struct LieSeriesOptions {
    /// First retained power: 0 gives e^{L_Y} W, m >= 1 gives the m-tail
    /// sum_{k>=m} L_Y^k W / k!.
    int start_order = 0;
    /// Number of powers of L_Y summed (counted from 0); -1 chooses the
    /// smallest M with q^M/(1-q) < rel_tol.
    int max_terms = -1;
    double rel_tol = 1e-12;
    int order_cap = kNoCap;
};

struct LieSeriesResult {
    TFVectorField field;     ///< truncated series, analytic on u - w
    double tail_bound = 0;   ///< q^M/(1-q) * [[W]]^w_u majorant of the dropped tail
    double q = 0;            ///< contraction factor e * [[Y]]^w_{u+w}
    int terms_used = 0;      ///< highest power of L_Y actually summed, plus one
    bool exhausted = false;  ///< true when the bracket chain vanished exactly
};

/// Applies the Lie series of Y to W under the convention Y analytic on
/// u + w, W on u, result on u - w; q = e*[[Y]]^w_{u+w} must be < 1
/// (Err::divergent_series otherwise).
LieSeriesResult lie_series_apply(const TFVectorField& y, const TFVectorField& w_field,
                                 const Domain& u, const Radii& w,
                                 const LieSeriesOptions& opts = {});

// --- ledger -----------------------------------------------------------------------

/// One certified inequality: `pass` iff measured <= claimed.  Lower-bound
/// conditions (e.g. constant floors) are stored with the floor as
/// `measured` and the actual quantity as `claimed`, so the pass rule is
/// uniform across all rows.
struct LedgerRow {
    std::string step;
    std::string label;
    double claimed = 0.0;
    double measured = 0.0;
    bool pass = false;
};

struct Ledger {
    std::vector<LedgerRow> rows;

    void add(const std::string& step, const std::string& label, double claimed, double measured);
    void append(const Ledger& other);
    bool all_pass() const noexcept;
    /// Tabular export: "step  label  claimed  measured  pass" per row.
    std::string to_text() const;
};

// --- one normalization step ----------------------------------------------------------

/// The generator produced by one iteration step, with the data needed to
/// replay or verify it.
struct GeneratorStep {
    TFVectorField y;
    double q = 0.0;       ///< e * [[Y]]^w_u (contraction factor of the step)
    double y_norm = 0.0;  ///< [[Y]]^w_u
    Domain domain_before; ///< u
    Domain domain_after;  ///< u - 2w
    Radii weights;        ///< w
    double gamma = 0.0;
    int K = 0;
};

struct IterationOptions {
    int order_cap = kNoCap;
    double lie_rel_tol = 1e-12;
    int lie_max_terms = -1;
    std::string step_label = "1";
};

struct IterationOutcome {
    TFVectorField g_next;   ///< G + Pi_Lambda P^{<2K}
    TFVectorField p_next;   ///< new perturbation, analytic on u - 2w
    GeneratorStep generator;
    Domain u_next;          ///< u - 2w
    double p_norm = 0.0;          ///< [[P]]^w_u
    double q0 = 0.0;              ///< e gamma^{-1} [[P]]^w_u
    double p_next_norm = 0.0;     ///< measured [[P_+]]^w_{u-2w} plus Lie tail allowances
    double p_next_claimed = 0.0;  ///< theorem bound on [[P_+]]^w_{u-2w}
    double lie_tail_total = 0.0;  ///< summed analytic tails of the truncated Lie series
    double bracket_g_norm = 0.0;  ///< [[ [Y,G] ]]^w_{u-w} (zero when G = 0)
    Ledger ledger;
};

/// One step of the normal-form iteration: splits P at the ultraviolet
/// cutoff 2K, absorbs the resonant part into G, removes the nonresonant
/// part of order < 2K with the generator solving [Y, N] = -P-tilde, and
/// pushes everything through e^{L_Y}.  The returned ledger certifies the
/// generator bound, the homological residual, the remainder bound and the
/// close-to-identity estimate.
IterationOutcome iteration_step(const Frequencies& freq, const TFVectorField& g,
                                const TFVectorField& p, const Domain& u, const Radii& w,
                                const Lattice& lattice, int K, double gamma,
                                const IterationOptions& opts = {});

// --- iterated normal form ---------------------------------------------------------------

/// Smallest constant making every per-step requirement of the iterated
/// normal form (floors 8, 4*sqrt(3), 48 on C = C_* log(12)/e) hold.
double default_C_star();

struct NormalFormOptions {
    int order_cap = kNoCap;
    double lie_rel_tol = 1e-12;
    int lie_max_terms = -1;
};

struct NormalFormOutcome {
    Frequencies freq;
    TFVectorField g_star;
    TFVectorField p_star;
    std::vector<GeneratorStep> generators;
    Ledger ledger;
    Domain u_final;            ///< u - 4w
    double p0_norm = 0.0;      ///< [[P]]^w_u
    double p_star_norm = 0.0;  ///< measured [[P*]]^w_{u-4w} incl. tail allowances
    double decay_claimed = 0.0;     ///< e^{-K sigma_bar/4} [[P]]^w_u
    double close_to_id = 0.0;       ///< measured sum of generator norms
    double close_to_id_claimed = 0.0;  ///< 2 gamma^{-1} [[P]]^w_u
    int steps = 0;
    bool short_circuit = false;  ///< single sweep because P was already tiny
};

/// Iterated normal form: p* = floor(K sigma_bar / log 12) + 1 iteration
/// steps with shrinking step width, halving the perturbation norm each
/// time, ending with [[P*]] <= e^{-K sigma_bar/4} [[P]] on u - 4w.
/// Preconditions: w < u/4, K sigma_bar >= log 12 (Err::ksigma_too_small),
/// C_star K sigma_bar gamma^{-1} [[P]]^w_u < 1 (Err::smallness_violated).
NormalFormOutcome normalize(const Frequencies& freq, const TFVectorField& p, const Domain& u,
                            const Radii& w, const Lattice& lattice, int K, double gamma,
                            double c_star, const NormalFormOptions& opts = {});

}  // namespace tfnf
