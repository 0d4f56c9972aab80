#pragma once

#include <cstdint>
#include <string>

#include "tfnf/config.hpp"
#include "tfnf/twolayer.hpp"

namespace tfnf {

/// A full run description for the command-line driver: model parameters,
/// optional forcing files, normalization policy, experiment settings, and
/// the output directory.  Loaded from a flat key = value file; every key is
/// optional, unknown keys are rejected, tolerances and counts must be
/// positive, and referenced forcing files must exist at load time.
struct RunConfig {
    TwoLayerParams params;

    std::string tilde_file;    ///< oscillating forcing (zero average); "" = none
    std::string hat_file;      ///< slow forcing; "" = none
    double pert_scale = 1.0;   ///< multiplies both forcing fields

    PipelineOptions pipeline;

    std::uint64_t seed = 20260819;  ///< property-suite and sampling seed
    int samples = 5;                ///< conjugation flow-check sample count
    int cases = 100;                ///< property-suite instance count
    double tol = 1e-8;              ///< conjugation two-route agreement tolerance

    double horizon_cap = 0.0;     ///< 0: default shadowing horizon cap
    int n_outputs = 200;          ///< shadowing output rows per leg
    double x0_fraction = 0.25;    ///< initial diagonal state, as a fraction of eps3
    double abs_tol_scale = 1e-12; ///< shadowing integrator absolute tolerance scale
    double rel_tol = 1e-6;        ///< shadowing integrator relative tolerance

    double sim_t_end = 0.0;     ///< 0: ten orbital periods
    double sim_radius = 1.0;    ///< slow-domain radius for the full-model run
    double sim_tol = 1e-10;     ///< integrator tolerance for the full-model run
    double sim_x0_gamma = 0.0;  ///< initial offsets from the equilibrium
    double sim_x0_pgamma = 0.0;
    double sim_x0_eta = 0.0;
    double sim_x0_peta = 0.0;
    double sim_x0_ell = 0.0;
    int sim_outputs = 100;

    std::string out_dir = "out";

    /// Loads the forcing fields (zero fields when no file is named), checks
    /// that both live on 4 slow variables and 1 angle, and applies
    /// pert_scale.  Throws Err::io on unreadable files, Err::parse on shape
    /// mismatches.
    PerturbationInputs load_perturbation() const;
};

/// Builds a RunConfig from parsed key = value pairs.  Throws Err::parse on
/// unknown keys, non-numeric values, or out-of-range settings, and Err::io
/// when a named forcing file does not exist.
RunConfig run_config_from(const Config& cfg);

/// Reads and converts a config file in one step.
RunConfig load_run_config(const std::string& path);

}  // namespace tfnf
