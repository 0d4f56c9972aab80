#include "tfnf/runconfig.hpp"

#include <fstream>
#include <set>
#include <string>

#include "tfnf/errors.hpp"
#include "tfnf/serialize.hpp"
#include "tfnf/tfseries.hpp"

namespace tfnf {
namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // model parameters
        "c1", "c2", "theta_fric", "eps_fric", "ups_fric", "omega_orb", "v0", "k_res",
        "eps0", "s0", "r_over_a", "Cmin", "a_k",
        // forcing
        "tilde_file", "hat_file", "pert_scale",
        // normalization policy
        "order_cap", "K0", "K1", "const_used", "eps_small", "lie_rel_tol",
        "scan_nonresonance",
        // experiment settings
        "seed", "samples", "cases", "tol", "horizon_cap", "n_outputs", "x0_fraction",
        "abs_tol_scale", "rel_tol",
        // full-model run
        "sim_t_end", "sim_radius", "sim_tol", "sim_x0_gamma", "sim_x0_pgamma",
        "sim_x0_eta", "sim_x0_peta", "sim_x0_ell", "sim_outputs",
        // output
        "out_dir",
    };
    return keys;
}

void require_positive(const char* key, double value) {
    if (!(value > 0.0))
        throw Error(Err::parse, std::string("config key '") + key + "' must be positive");
}

void require_nonnegative(const char* key, double value) {
    if (!(value >= 0.0))
        throw Error(Err::parse, std::string("config key '") + key + "' must not be negative");
}

void require_positive_int(const char* key, int value) {
    if (value <= 0)
        throw Error(Err::parse, std::string("config key '") + key + "' must be a positive integer");
}

void check_file_readable(const std::string& key, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Err::io, "config key '" + key + "' names an unreadable file: " + path);
}

}  // namespace

PerturbationInputs RunConfig::load_perturbation() const {
    PerturbationInputs pert;
    if (!tilde_file.empty()) pert.tilde = load_field(tilde_file);
    if (!hat_file.empty()) pert.hat = load_field(hat_file);
    for (const auto* pair : {&pert.tilde, &pert.hat}) {
        if (pair->m() != 4 || pair->n() != 1)
            throw Error(Err::parse,
                        "forcing fields must live on 4 slow variables and 1 angle, got (" +
                            std::to_string(pair->m()) + ", " + std::to_string(pair->n()) + ")");
    }
    pert.tilde = scale(pert.tilde, Coeff(pert_scale, 0.0));
    pert.hat = scale(pert.hat, Coeff(pert_scale, 0.0));
    return pert;
}

RunConfig run_config_from(const Config& cfg) {
    for (const auto& key : cfg.keys()) {
        if (known_keys().count(key) == 0)
            throw Error(Err::parse, "unknown config key '" + key + "'");
    }

    RunConfig rc;

    rc.params.c1 = cfg.get_double("c1", rc.params.c1);
    rc.params.c2 = cfg.get_double("c2", rc.params.c2);
    rc.params.theta_fric = cfg.get_double("theta_fric", rc.params.theta_fric);
    rc.params.eps_fric = cfg.get_double("eps_fric", rc.params.eps_fric);
    rc.params.ups_fric = cfg.get_double("ups_fric", rc.params.ups_fric);
    rc.params.omega_orb = cfg.get_double("omega_orb", rc.params.omega_orb);
    rc.params.v0 = cfg.get_double("v0", rc.params.v0);
    rc.params.k_res = cfg.get_int("k_res", rc.params.k_res);
    rc.params.eps0 = cfg.get_double("eps0", rc.params.eps0);
    rc.params.s0 = cfg.get_double("s0", rc.params.s0);
    rc.params.r_over_a = cfg.get_double("r_over_a", rc.params.r_over_a);
    rc.params.Cmin = cfg.get_double("Cmin", rc.params.Cmin);
    rc.params.a_k = cfg.get_double("a_k", rc.params.a_k);

    rc.tilde_file = cfg.get_string("tilde_file", rc.tilde_file);
    rc.hat_file = cfg.get_string("hat_file", rc.hat_file);
    rc.pert_scale = cfg.get_double("pert_scale", rc.pert_scale);
    require_nonnegative("pert_scale", rc.pert_scale);
    if (!rc.tilde_file.empty()) check_file_readable("tilde_file", rc.tilde_file);
    if (!rc.hat_file.empty()) check_file_readable("hat_file", rc.hat_file);

    rc.pipeline.order_cap = cfg.get_int("order_cap", rc.pipeline.order_cap);
    require_positive_int("order_cap", rc.pipeline.order_cap);
    rc.pipeline.K0_override = cfg.get_int("K0", rc.pipeline.K0_override);
    rc.pipeline.K1_override = cfg.get_int("K1", rc.pipeline.K1_override);
    if (rc.pipeline.K0_override < 0 || rc.pipeline.K1_override < 0)
        throw Error(Err::parse, "config keys 'K0' and 'K1' must not be negative");
    rc.pipeline.const_used = cfg.get_double("const_used", rc.pipeline.const_used);
    require_positive("const_used", rc.pipeline.const_used);
    rc.pipeline.eps_small = cfg.get_double("eps_small", rc.pipeline.eps_small);
    require_positive("eps_small", rc.pipeline.eps_small);
    rc.pipeline.lie_rel_tol = cfg.get_double("lie_rel_tol", rc.pipeline.lie_rel_tol);
    require_positive("lie_rel_tol", rc.pipeline.lie_rel_tol);
    rc.pipeline.scan_nonresonance =
        cfg.get_int("scan_nonresonance", rc.pipeline.scan_nonresonance ? 1 : 0) != 0;

    const int seed = cfg.get_int("seed", -1);
    if (cfg.has("seed")) {
        if (seed < 0) throw Error(Err::parse, "config key 'seed' must not be negative");
        rc.seed = static_cast<std::uint64_t>(seed);
    }
    rc.samples = cfg.get_int("samples", rc.samples);
    require_positive_int("samples", rc.samples);
    rc.cases = cfg.get_int("cases", rc.cases);
    require_positive_int("cases", rc.cases);
    rc.tol = cfg.get_double("tol", rc.tol);
    require_positive("tol", rc.tol);

    rc.horizon_cap = cfg.get_double("horizon_cap", rc.horizon_cap);
    require_nonnegative("horizon_cap", rc.horizon_cap);
    rc.n_outputs = cfg.get_int("n_outputs", rc.n_outputs);
    require_positive_int("n_outputs", rc.n_outputs);
    rc.x0_fraction = cfg.get_double("x0_fraction", rc.x0_fraction);
    require_positive("x0_fraction", rc.x0_fraction);
    rc.abs_tol_scale = cfg.get_double("abs_tol_scale", rc.abs_tol_scale);
    require_positive("abs_tol_scale", rc.abs_tol_scale);
    rc.rel_tol = cfg.get_double("rel_tol", rc.rel_tol);
    require_positive("rel_tol", rc.rel_tol);

    rc.sim_t_end = cfg.get_double("sim_t_end", rc.sim_t_end);
    require_nonnegative("sim_t_end", rc.sim_t_end);
    rc.sim_radius = cfg.get_double("sim_radius", rc.sim_radius);
    require_positive("sim_radius", rc.sim_radius);
    rc.sim_tol = cfg.get_double("sim_tol", rc.sim_tol);
    require_positive("sim_tol", rc.sim_tol);
    rc.sim_x0_gamma = cfg.get_double("sim_x0_gamma", rc.sim_x0_gamma);
    rc.sim_x0_pgamma = cfg.get_double("sim_x0_pgamma", rc.sim_x0_pgamma);
    rc.sim_x0_eta = cfg.get_double("sim_x0_eta", rc.sim_x0_eta);
    rc.sim_x0_peta = cfg.get_double("sim_x0_peta", rc.sim_x0_peta);
    rc.sim_x0_ell = cfg.get_double("sim_x0_ell", rc.sim_x0_ell);
    rc.sim_outputs = cfg.get_int("sim_outputs", rc.sim_outputs);
    require_positive_int("sim_outputs", rc.sim_outputs);

    rc.out_dir = cfg.get_string("out_dir", rc.out_dir);
    if (rc.out_dir.empty()) throw Error(Err::parse, "config key 'out_dir' must not be empty");

    return rc;
}

RunConfig load_run_config(const std::string& path) {
    return run_config_from(Config::parse_file(path));
}

}  // namespace tfnf
