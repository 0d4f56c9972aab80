#pragma once

#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tfnf/domain.hpp"
#include "tfnf/multiindex.hpp"

namespace tfnf {

using Coeff = std::complex<double>;

/// Sentinel: no truncation order is enforced.
inline constexpr int kNoCap = -1;

/// One scalar Taylor-Fourier series
///   Z(zeta, phi) = sum_{alpha,k} z_{alpha,k} zeta^alpha e^{i k.phi}
/// over `m` slow variables and `n` angles, stored sparsely with a
/// deterministic (lexicographic) term order.
class TFComponent {
public:
    TFComponent() = default;
    TFComponent(int m, int n);

    int m() const noexcept { return m_; }
    int n() const noexcept { return n_; }
    int vars() const noexcept { return m_ + n_; }

    const std::map<MultiIndex, Coeff>& terms() const noexcept { return terms_; }
    std::size_t size() const noexcept { return terms_.size(); }
    bool empty() const noexcept { return terms_.empty(); }

    /// Coefficient lookup; absent terms read as zero.
    Coeff at(const MultiIndex& idx) const;

    /// Overwrites the coefficient of `idx` (exact zeros are erased).
    void set(const MultiIndex& idx, Coeff c);

    /// Accumulates into the coefficient of `idx` (exact zeros are erased).
    void add(const MultiIndex& idx, Coeff c);

    /// Largest total order present, or -1 for the zero series.
    int max_order() const noexcept;

    void clear() noexcept { terms_.clear(); }

    void scale_in_place(Coeff c);
    void add_in_place(const TFComponent& other, Coeff factor = Coeff(1.0, 0.0));

    /// Checks compatible variable counts; throws on mismatch.
    void require_shape(int m, int n, const char* what) const;

private:
    int m_ = 0;
    int n_ = 0;
    std::map<MultiIndex, Coeff> terms_;
};

/// Index sublattice of Z^{m+n} declaring which resonant terms are retained
/// by the normal form.  Membership is evaluated on base indices
/// (alpha, k) - p_h, which may carry a negative Taylor entry after the
/// per-component translation done by the projector.
class Lattice {
public:
    enum class Kind {
        zero,             ///< { 0 }
        fourier_average,  ///< { (alpha, 0) } : all purely slow indices
        full,             ///< everything (projector keeps the whole field)
        explicit_list,    ///< finite user-supplied index set
    };

    static Lattice zero() { return Lattice(Kind::zero); }
    static Lattice fourier_average() { return Lattice(Kind::fourier_average); }
    static Lattice full() { return Lattice(Kind::full); }
    static Lattice explicit_list(std::vector<MultiIndex> indices, int m, int n);

    Kind kind() const noexcept { return kind_; }

    /// Base-lattice membership of (alpha, k) in Z^m x Z^n (negative Taylor
    /// entries are legal arguments: they arise from translated indices).
    bool contains(const MultiIndex& idx, int m, int n) const;

    /// All member indices with non-negative Taylor part and total order
    /// <= max_order (the representatives that occur untranslated).
    std::vector<MultiIndex> enumerate(int m, int n, int max_order) const;

    /// The stored members of an explicit list (empty for the other kinds).
    const std::vector<MultiIndex>& members() const noexcept { return list_; }

    std::string describe() const;

private:
    explicit Lattice(Kind k) : kind_(k) {}

    Kind kind_;
    std::vector<MultiIndex> list_;  ///< sorted, for explicit_list
};

/// A vector field with Taylor-Fourier components: m slow equations followed
/// by n angle equations, all sharing the same variable layout.  Carries an
/// optional truncation order; operations that could raise the order beyond
/// the cap drop the excess and set the `truncated` flag.
class TFVectorField {
public:
    TFVectorField() = default;
    TFVectorField(int m, int n);

    int m() const noexcept { return m_; }
    int n() const noexcept { return n_; }
    int components() const noexcept { return m_ + n_; }

    const TFComponent& component(int h) const;
    TFComponent& component(int h);
    void set_component(int h, TFComponent c);

    int order_cap() const noexcept { return order_cap_; }
    void set_order_cap(int cap) noexcept { order_cap_ = cap; }
    bool truncated() const noexcept { return truncated_; }
    void set_truncated(bool t) noexcept { truncated_ = t; }

    /// Largest total order over all components (-1 when identically zero).
    int max_order() const noexcept;

    std::size_t term_count() const noexcept;
    bool empty() const noexcept { return term_count() == 0; }

    void scale_in_place(Coeff c);
    void add_in_place(const TFVectorField& other, Coeff factor = Coeff(1.0, 0.0));

    void require_shape(int m, int n, const char* what) const;

private:
    int m_ = 0;
    int n_ = 0;
    std::vector<TFComponent> comp_;
    int order_cap_ = kNoCap;
    bool truncated_ = false;
};

/// Effective cap of an operation combining two fields: the tighter one.
int combine_caps(int a, int b) noexcept;

// --- norms -----------------------------------------------------------------

/// Majorant norm of one component on domain `u`:
///   sum |z_{alpha,k}| eps^{|alpha|_1} e^{|k|_1 s},
/// accumulated with compensated summation.
double component_norm(const TFComponent& z, const Domain& u);

/// Weighted majorant norm of a field: sum_h weights[h]^{-1} * ||X_h||_u.
double weighted_field_norm(const TFVectorField& x, const DomainWeights& uw);

/// Convenience overload with block weights (rho for slow, sigma for angles).
double weighted_field_norm(const TFVectorField& x, const Domain& u, const Radii& w);

/// Monte-Carlo estimate (from below) of the weighted sup norm
///   sup_{(zeta,phi) in U} max_h |X_h(zeta, phi)| / weights[h],
/// sampling the distinguished boundary |zeta_i| = eps, |Im phi_j| = s.
double sup_field_norm(const TFVectorField& x, const DomainWeights& uw, int samples,
                      std::uint64_t seed);

// --- calculus ----------------------------------------------------------------

/// p-th partial derivative with respect to variable `var` (0-based; slow
/// variables first, then angles).  Slow: falling-factorial coefficients and
/// an exponent shift; angle: multiplication by (i k_var)^p.
TFComponent partial_derivative(const TFComponent& z, int var, int p = 1);

/// Product of two scalar series (Cauchy convolution).  Terms whose total
/// order exceeds `order_cap` are dropped and `*truncated` (if non-null) is
/// set when that happens.
TFComponent multiply(const TFComponent& a, const TFComponent& b, int order_cap = kNoCap,
                     bool* truncated = nullptr);

/// Lie bracket [Y, X] = (DX) Y - (DY) X of two vector fields on the same
/// variable layout.  The result inherits the tighter order cap.
TFVectorField lie_bracket(const TFVectorField& y, const TFVectorField& x);

// --- projections ---------------------------------------------------------------

/// Truncation projector: keeps terms of total order <= K.
TFVectorField project_order(const TFVectorField& x, int K);

/// Resonant projector: component h keeps exactly the terms whose index lies
/// in the lattice translated by the unit exponent of variable h (slow
/// components) or by zero (angle components).
TFVectorField project_lattice(const TFVectorField& x, const Lattice& lattice);

/// Complement of project_lattice (terms outside the translated lattice).
TFVectorField project_lattice_complement(const TFVectorField& x, const Lattice& lattice);

struct UVSplit {
    TFVectorField low;   ///< total order <  2K
    TFVectorField tail;  ///< total order >= 2K
};

/// Splits at the ultraviolet cutoff 2K.
UVSplit ultraviolet_split(const TFVectorField& x, int K);

// --- evaluation & substitution ---------------------------------------------

/// Evaluates the series at a point (slow variables and angles may both be
/// complex; e^{i k.phi} with complex phi covers the analyticity strip).
Coeff evaluate(const TFComponent& z, const std::vector<Coeff>& zeta,
               const std::vector<Coeff>& phi);

/// Simultaneous shift zeta_i -> zeta_i + delta_i of all slow variables.
TFComponent shift_slow(const TFComponent& z, const std::vector<Coeff>& delta);

/// Linear substitution zeta -> B zeta of the slow block (angles untouched).
/// Exact (degree preserving): no truncation occurs.
TFComponent substitute_slow_linear(const TFComponent& z,
                                   const std::vector<std::vector<Coeff>>& bmat);

/// Pushes the field through the linear change of slow coordinates
/// zeta = B zeta', i.e. returns B^{-1} X_slow(B zeta', phi) on the slow
/// rows and X_angle(B zeta', phi) on the angle rows.
TFVectorField pullback_linear_slow(const TFVectorField& x,
                                   const std::vector<std::vector<Coeff>>& bmat,
                                   const std::vector<std::vector<Coeff>>& bmat_inv);

// --- index enumeration --------------------------------------------------------

/// All admissible indices (alpha in N^m, k in Z^n) of total order
/// <= max_order, in ascending lexicographic order.
std::vector<MultiIndex> enumerate_indices(int m, int n, int max_order);

// --- field arithmetic -----------------------------------------------------------

TFVectorField add(const TFVectorField& a, const TFVectorField& b);
TFVectorField sub(const TFVectorField& a, const TFVectorField& b);
TFVectorField scale(const TFVectorField& a, Coeff c);

}  // namespace tfnf
