#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tfnf {

/// One checked inequality of a property suite: passes iff the measured
/// quantity does not exceed the bound (each suite documents the exact pass
/// rule it encodes in these two numbers).
struct SuiteCase {
    std::string label;
    double measured = 0.0;
    double bound = 0.0;
    bool pass = false;
};

/// Outcome of a seeded property suite: one or two rows per random instance,
/// with per-row margins, rendered deterministically (no timestamps).
struct SuiteResult {
    std::string suite;
    std::uint64_t seed = 0;
    int cases = 0;       ///< requested instance count
    int violations = 0;  ///< number of failing rows
    std::vector<SuiteCase> rows;

    bool pass() const noexcept { return violations == 0; }
    std::string to_text() const;
};

/// Names of the available property suites:
///   cauchy       derivative majorant bounds under domain shrink
///   bracket      Lie-bracket norm inequality with shifted weights
///   lie-tail     factorial-geometric bounds on iterated brackets
///   uv-decay     exponential decay of the ultraviolet tail under shrink
///   homological  residual and componentwise bound of the divisor solve
///   conjugation  linear-generator transport vs the matrix-exponential
///                oracle, plus two-route flow agreement
///   pencil       quadratic-pencil positivity chain on admissible models
const std::vector<std::string>& verify_suite_names();

/// Runs the named suite over `cases` seeded random instances.  Identical
/// argument tuples produce byte-identical reports.  `samples` and `tol`
/// feed the two-route flow check of the conjugation suite and are ignored
/// by the others.  Throws Err::parse when the suite name is unknown.
SuiteResult verify_suite(const std::string& name, std::uint64_t seed, int cases,
                         int samples = 3, double tol = 1e-8);

}  // namespace tfnf
