// Command-line driver for the two-layer normal-form toolkit.
//
// Every command reads one flat key = value configuration file, writes its
// reports under the configured output directory, and prints a single
// deterministic summary line.  Exit codes: 0 on success, 1 on input errors
// (unreadable files, malformed configs, unknown suites), 2 when the input
// was well-formed but a certified condition is violated.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tfnf/config.hpp"
#include "tfnf/domain.hpp"
#include "tfnf/dynamics.hpp"
#include "tfnf/errors.hpp"
#include "tfnf/normalform.hpp"
#include "tfnf/runconfig.hpp"
#include "tfnf/serialize.hpp"
#include "tfnf/textio.hpp"
#include "tfnf/tfseries.hpp"
#include "tfnf/twolayer.hpp"
#include "tfnf/verify.hpp"

namespace {

using namespace tfnf;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Err::io, "cannot open output file: " + path);
    out << text;
    if (!out) throw Error(Err::io, "cannot write output file: " + path);
}

std::string join(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Err::io, "cannot create output directory: " + dir);
}

// --- spectrum ---------------------------------------------------------------------

std::string spectrum_text(const TwoLayerParams& p, const Equilibrium& eq,
                          const QuadraticPencil& pencil, const SpectrumResult& spec) {
    std::string out;
    out += "linearized two-layer spectrum\n";
    out += "=============================\n";
    out += "restoring coefficients       : c1 = " + fnum(p.c1) + ", c2 = " + fnum(p.c2) +
           " (effective c2bar = " + fnum(eq.c2bar) + ")\n";
    out += "frictions (theta, eps, ups)  : " + fnum(p.theta_fric) + ", " + fnum(p.eps_fric) +
           ", " + fnum(p.ups_fric) + "\n";
    out += "core equilibrium eta0        : " + fnum(eq.eta0) + "\n";
    out += "eigenvalues and residuals:\n";
    for (int j = 0; j < 4; ++j) {
        out += "  lambda_" + std::to_string(j + 1) + " = " + fnum(spec.eigenvalues[static_cast<std::size_t>(j)]) +
               "   (residual " + fnum(spec.residuals[static_cast<std::size_t>(j)]) + ")\n";
    }
    out += "pencil margin 4 lamT lamV - lamB^2 : " + fnum(pencil.positivity()) + "\n";
    out += "enforced real-part window    : [" + fnum(spec.rayleigh_lo) + ", " +
           fnum(spec.rayleigh_hi) + "]\n";
    out += "coarse real-part window      : [" + fnum(spec.coarse_lo) + ", " + fnum(spec.coarse_hi) +
           "]  " + (spec.coarse_window_ok ? "PASS" : "FAIL (worst excess " + fnum(spec.coarse_violation) + ")") +
           "\n";
    out += "eigenbasis norms             : |b| = " + fnum(spec.b_norm_inf) +
           ", |b^-1| = " + fnum(spec.b_inv_norm_inf) + "\n";
    out += "off-diagonal mass            : " + fnum(spec.offdiag_mass) + "\n";
    out += "min |Re lambda|              : " + fnum(spec.min_abs_re) + "\n";
    return out;
}

int cmd_spectrum(const RunConfig& rc) {
    rc.params.validate();
    const Equilibrium eq = equilibrium(rc.params);
    const LinearBlock block = build_linear_block(rc.params, eq);
    const QuadraticPencil pencil = reduce_to_pencil(rc.params, eq);
    const SpectrumResult spec = solve_spectrum(block, rc.params);

    const std::string path = join(rc.out_dir, "spectrum.txt");
    write_text(path, spectrum_text(rc.params, eq, pencil, spec));
    std::cout << "spectrum: wrote " << path << "; min |Re lambda| = " << fnum(spec.min_abs_re)
              << "\n";
    if (!spec.coarse_window_ok) {
        std::cerr << "violated condition (window_violation): an eigenvalue real part leaves ["
                  << fnum(spec.coarse_lo) << ", " << fnum(spec.coarse_hi) << "] by "
                  << fnum(spec.coarse_violation) << "\n";
        return 2;
    }
    return 0;
}

// --- normalize / pipeline ---------------------------------------------------------

int ledger_exit(const Ledger& ledger) {
    if (ledger.all_pass()) return 0;
    std::string failing;
    for (const auto& row : ledger.rows) {
        if (row.pass) continue;
        if (!failing.empty()) failing += "; ";
        failing += row.step + " " + row.label;
    }
    std::cerr << "violated condition (ledger): " << failing << "\n";
    return 2;
}

int cmd_normalize(const RunConfig& rc) {
    const PerturbationInputs pert = rc.load_perturbation();
    const PipelineReport rep = main_pipeline(rc.params, pert, rc.pipeline);
    const std::string path = join(rc.out_dir, "ledger.txt");
    write_text(path, rep.ledger.to_text());
    std::cout << "normalize: wrote " << path << "; " << rep.ledger.rows.size()
              << " ledger rows, " << (rep.all_pass() ? "all pass" : "with failures") << "\n";
    return ledger_exit(rep.ledger);
}

int cmd_pipeline(const RunConfig& rc) {
    const PerturbationInputs pert = rc.load_perturbation();
    const PipelineReport rep = main_pipeline(rc.params, pert, rc.pipeline);
    const std::string path = join(rc.out_dir, "pipeline.txt");
    write_text(path, report_to_text(rep));
    std::cout << "pipeline: wrote " << path << "; eps_star = " << fnum(rep.eps_star) << ", "
              << (rep.all_pass() ? "all ledger rows pass" : "ledger has failures") << "\n";
    return ledger_exit(rep.ledger);
}

// --- shadow -----------------------------------------------------------------------

Trajectory merge_rows(const Trajectory& a, const Trajectory& b) {
    if (a.times.size() != b.times.size())
        throw Error(Err::precondition_violated, "chart and deviation grids differ in length");
    Trajectory merged;
    merged.times = a.times;
    merged.states.reserve(a.states.size());
    for (std::size_t r = 0; r < a.states.size(); ++r) {
        std::vector<double> row = a.states[r];
        row.insert(row.end(), b.states[r].begin(), b.states[r].end());
        merged.states.push_back(std::move(row));
    }
    merged.abs_tol = a.abs_tol;
    merged.rel_tol = a.rel_tol;
    merged.accepted = a.accepted;
    merged.rejected = a.rejected;
    return merged;
}

std::string reference_text(const DampedReference& ref) {
    std::string out;
    out += "damped linear reference x(t) = b diag(e^{lambda_j t}) c\n";
    out += "=======================================================\n";
    out += "exponents lambda_hat:\n";
    for (int j = 0; j < 4; ++j)
        out += "  " + fnum(ref.exponents[static_cast<std::size_t>(j)]) + "\n";
    out += "eigenbasis columns b_j:\n";
    for (int i = 0; i < 4; ++i) {
        out += " ";
        for (int j = 0; j < 4; ++j)
            out += "  " + fnum(ref.basis[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        out += "\n";
    }
    out += "coordinates c:\n";
    for (int j = 0; j < 4; ++j)
        out += "  " + fnum(ref.coords[static_cast<std::size_t>(j)]) + "\n";
    out += "initial slow state x(0):\n";
    for (int j = 0; j < 4; ++j)
        out += "  " + fnum(ref.x0[static_cast<std::size_t>(j)]) + "\n";
    return out;
}

int cmd_shadow(const RunConfig& rc) {
    const PerturbationInputs pert = rc.load_perturbation();
    const PipelineReport pipe = main_pipeline(rc.params, pert, rc.pipeline);
    // The experiment certifies trajectories of the *certified* normal form;
    // with failing ledger rows the chart itself is uncertified, so the
    // violated inequalities are reported instead of a vacuous experiment.
    if (!pipe.all_pass()) return ledger_exit(pipe.ledger);

    // Initial state with equal coordinates q along all final-chart axes.
    const double q = rc.x0_fraction * pipe.eps_star;
    std::array<double, 4> x0{};
    for (int i = 0; i < 4; ++i) {
        Coeff acc(0.0, 0.0);
        for (int j = 0; j < 4; ++j)
            acc += pipe.spectrum.b[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                   Coeff(q, 0.0);
        x0[static_cast<std::size_t>(i)] = acc.real();
    }

    ShadowingOptions sopts;
    sopts.horizon_cap = rc.horizon_cap;
    sopts.order_cap = rc.pipeline.order_cap;
    sopts.n_outputs = rc.n_outputs;
    sopts.abs_tol_scale = rc.abs_tol_scale;
    sopts.rel_tol = rc.rel_tol;
    const ShadowingReport rep = shadowing_experiment(pipe, pert, x0, sopts);

    const std::string original_name = "original_chart.csv";
    const std::string final_name = "final_chart.csv";
    const Trajectory original = merge_rows(rep.original_chart, rep.original_deviation);
    const Trajectory final_chart = merge_rows(rep.zeta3_chart, rep.zeta3_deviation);
    write_text(join(rc.out_dir, original_name),
               trajectory_to_csv(original, {"gamma", "p_gamma", "psi", "p_psi", "ell",
                                            "dev_gamma", "dev_p_gamma", "dev_psi", "dev_p_psi"}));
    write_text(join(rc.out_dir, final_name),
               trajectory_to_csv(final_chart,
                                 {"re_zeta1", "im_zeta1", "re_zeta2", "im_zeta2", "re_zeta3",
                                  "im_zeta3", "re_zeta4", "im_zeta4", "phi", "dev_zeta1",
                                  "dev_zeta2", "dev_zeta3", "dev_zeta4"}));
    write_text(join(rc.out_dir, "reference.txt"), reference_text(rep.reference));
    write_text(join(rc.out_dir, "shadow_report.txt"), shadowing_to_text(rep));
    write_text(join(rc.out_dir, "plot.gp"), shadowing_plot_script(original_name, final_name));

    std::cout << "shadow: wrote " << rc.out_dir << "/{" << original_name << ", " << final_name
              << ", reference.txt, shadow_report.txt, plot.gp}; max final-chart deviation = "
              << fnum(rep.max_deviation_zeta3) << " vs epsilon = " << fnum(rep.epsilon) << "\n";

    if (!rep.pass) {
        std::string failing;
        if (!(rep.max_deviation_gamma < rep.epsilon))
            failing += "gamma deviation " + fnum(rep.max_deviation_gamma);
        if (!(rep.max_deviation_psi < rep.epsilon))
            failing += std::string(failing.empty() ? "" : "; ") + "psi deviation " +
                       fnum(rep.max_deviation_psi);
        if (!(rep.max_deviation_zeta3 < rep.epsilon))
            failing += std::string(failing.empty() ? "" : "; ") + "final-chart deviation " +
                       fnum(rep.max_deviation_zeta3);
        std::cerr << "violated condition (shadowing): " << failing
                  << " not below epsilon = " << fnum(rep.epsilon) << "\n";
        return 2;
    }
    return 0;
}

// --- verify -----------------------------------------------------------------------

int cmd_verify(const RunConfig& rc, const std::string& suite) {
    const SuiteResult res = verify_suite(suite, rc.seed, rc.cases, rc.samples, rc.tol);
    const std::string path = join(rc.out_dir, "verify_" + suite + ".txt");
    write_text(path, res.to_text());
    std::cout << "verify " << suite << ": " << res.cases << " cases, " << res.violations
              << " violations (seed " << res.seed << ")\n";
    if (!res.pass()) {
        std::cerr << "violated condition (property suite): " << res.violations
                  << " failing rows in suite '" << suite << "'\n";
        return 2;
    }
    return 0;
}

// --- simulate / export-field ------------------------------------------------------

int cmd_simulate(const RunConfig& rc) {
    rc.params.validate();
    const PerturbationInputs pert = rc.load_perturbation();
    const Equilibrium eq = equilibrium(rc.params);
    const TFVectorField full = build_full_field(rc.params, pert, rc.pipeline.order_cap);

    double t_end = rc.sim_t_end;
    if (t_end <= 0.0) {
        if (rc.params.omega_orb <= 0.0)
            throw Error(Err::invalid_params,
                        "the default simulation horizon needs a positive orbital frequency; "
                        "set sim_t_end explicitly");
        t_end = 10.0 * 2.0 * 3.14159265358979323846 / rc.params.omega_orb;
    }

    const Domain u_sim{rc.sim_radius, std::max(rc.params.s0, 1.0)};
    const std::vector<double> x0 = {rc.sim_x0_gamma, rc.sim_x0_pgamma, eq.eta0 + rc.sim_x0_eta,
                                    rc.sim_x0_peta, rc.sim_x0_ell};
    IntegratorOptions iopts;
    iopts.abs_tol = rc.sim_tol;
    iopts.rel_tol = rc.sim_tol;
    iopts.record_grid_only = true;
    for (int k = 1; k < rc.sim_outputs; ++k)
        iopts.grid.push_back(t_end * static_cast<double>(k) / static_cast<double>(rc.sim_outputs));

    const Trajectory traj = integrate(field_rhs_real(full, u_sim), x0, 0.0, t_end, iopts);
    const std::string path = join(rc.out_dir, "simulate.csv");
    write_text(path, trajectory_to_csv(traj, {"gamma", "p_gamma", "eta", "p_eta", "ell"}));
    std::cout << "simulate: wrote " << path << "; " << traj.times.size() << " rows over [0, "
              << fnum(t_end) << "], " << traj.accepted << " accepted steps\n";
    return 0;
}

int cmd_export_field(const RunConfig& rc) {
    rc.params.validate();
    const PerturbationInputs pert = rc.load_perturbation();
    const TFVectorField full = build_full_field(rc.params, pert, rc.pipeline.order_cap);
    const std::string path = join(rc.out_dir, "field.txt");
    save_field(path, full);
    std::cout << "export-field: wrote " << path << "; order cap " << rc.pipeline.order_cap
              << ", " << full.m() << " slow variables, " << full.n() << " angle\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Normal-form toolkit for the damped two-layer spin-orbit model"};
    app.require_subcommand(1);
    app.fallthrough();  // allow the global flags after a subcommand name

    std::string config_path;
    long long seed_flag = -1;
    std::string out_flag;
    double cap_flag = -1.0;
    app.add_option("--config", config_path, "key = value run configuration file");
    app.add_option("--seed", seed_flag, "override the configured random seed");
    app.add_option("--out", out_flag, "override the configured output directory");
    app.add_option("--cap-horizon", cap_flag, "override the shadowing horizon cap");

    app.add_subcommand("spectrum", "eigenvalues, residuals and window checks of the linear block");
    app.add_subcommand("normalize", "run the normalization chain and write the claimed/measured ledger");
    app.add_subcommand("pipeline", "run the normalization chain and write the full report");
    app.add_subcommand("shadow", "two-chart shadowing experiment with CSV exports and a plot script");
    CLI::App* verify = app.add_subcommand("verify", "run a seeded property suite");
    std::string suite;
    {
        std::string help = "suite name (";
        bool first = true;
        for (const auto& name : tfnf::verify_suite_names()) {
            if (!first) help += ", ";
            help += name;
            first = false;
        }
        help += ")";
        verify->add_option("suite", suite, help)->required();
    }
    app.add_subcommand("simulate", "integrate the full model field and export the samples");
    app.add_subcommand("export-field", "write the assembled model field in the text format");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        tfnf::RunConfig rc = config_path.empty()
                                 ? tfnf::run_config_from(tfnf::Config::parse_text("", "<defaults>"))
                                 : tfnf::load_run_config(config_path);
        if (seed_flag >= 0) rc.seed = static_cast<std::uint64_t>(seed_flag);
        if (!out_flag.empty()) rc.out_dir = out_flag;
        if (cap_flag >= 0.0) rc.horizon_cap = cap_flag;
        ensure_out_dir(rc.out_dir);

        if (app.got_subcommand("spectrum")) return cmd_spectrum(rc);
        if (app.got_subcommand("normalize")) return cmd_normalize(rc);
        if (app.got_subcommand("pipeline")) return cmd_pipeline(rc);
        if (app.got_subcommand("shadow")) return cmd_shadow(rc);
        if (app.got_subcommand("verify")) return cmd_verify(rc, suite);
        if (app.got_subcommand("simulate")) return cmd_simulate(rc);
        if (app.got_subcommand("export-field")) return cmd_export_field(rc);
        std::cerr << "input error (parse): no command selected\n";
        return 1;
    } catch (const tfnf::Error& e) {
        if (e.is_input_error()) {
            std::cerr << "input error (" << tfnf::err_name(e.code()) << "): " << e.what() << "\n";
            return 1;
        }
        std::cerr << "violated condition (" << tfnf::err_name(e.code()) << "): " << e.what()
                  << "\n";
        return 2;
    }
}
