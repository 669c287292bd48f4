//! Named experiments, configuration files and reports.

pub mod config;
pub mod report;
mod scenarios;

use std::time::Instant;

use self::config::{build_config, overlay, parse_config, ConfigMap, ExperimentConfig};
use self::report::{write_outputs, ExperimentReport, RunStatus};
use self::scenarios::Run;
use crate::error::{config, Error, Result};

type RunFn = fn(&ExperimentConfig, &mut Run) -> Result<()>;

/// One registry entry.
pub struct Experiment {
    pub name: &'static str,
    pub description: &'static str,
    /// Bundled configuration, overlaid by the user file.
    pub defaults: &'static str,
    /// Scenario parameters (`<name>.<param>` keys) with defaults.
    pub params: &'static [(&'static str, f64)],
    run: RunFn,
}

const BENCHMARK: &str = "state.kind = gaussian_tanh_phase
state.width = 2
state.a = 0.7
state.b = 0.45
state.sigma_s = 1
";

const REGISTRY: &[Experiment] = &[
    Experiment {
        name: "mode_e_invariant",
        description: "Paths traced through the reference solution keep psi_a * J_a / psi_a0 at one",
        defaults: "grid.n = 1024
time.t_end = 0.5
propagation.n_labels = 512
propagation.window_min = -6
propagation.window_max = 6
output.stride = 100
",
        params: &[],
        run: scenarios::mode_e_invariant,
    },
    Experiment {
        name: "mode_l_reconstruction",
        description: "Self-contained two-phase propagation against the reference solution",
        defaults: "grid.n = 4096
propagation.history = true
output.stride = 10
",
        params: &[],
        run: scenarios::mode_l_reconstruction,
    },
    Experiment {
        name: "identity_3_7",
        description: "Density-weighted mean of the phase velocities equals the current velocity",
        defaults: "grid.min = -10
grid.max = 10
grid.n = 2001
",
        params: &[("plane_wave_k", 1.5)],
        run: scenarios::identity_3_7,
    },
    Experiment {
        name: "gauge_invariance",
        description: "Global phase rotations leave the density and the scenario outcomes unchanged",
        defaults: "grid.min = -10
grid.max = 10
grid.n = 2001
",
        params: &[("angles", 10.0), ("one_phase_tol", 1e-6)],
        run: scenarios::gauge_invariance,
    },
    Experiment {
        name: "superposition_4_3",
        description: "Velocities of a sum from the velocities and densities of its parts",
        defaults: "state.kind = superposition
state.terms = 2
state.term0.kind = plane_wave
state.term0.k = 1
state.term1.kind = plane_wave
state.term1.k = 2
grid.min = -8
grid.max = 8
grid.n = 1601
",
        params: &[],
        run: scenarios::superposition_4_3,
    },
    Experiment {
        name: "one_phase",
        description: "Whether both phases share one velocity field",
        defaults: "state.kind = plane_wave
state.k = 1
grid.min = -10
grid.max = 10
grid.n = 2001
",
        params: &[("tol", 1e-8)],
        run: scenarios::one_phase,
    },
    Experiment {
        name: "product_state_gap",
        description: "Phase velocities of a product state do not split by particle",
        defaults: "partner.kind = plane_wave
partner.k = 1
grid.min = -6
grid.max = 6
grid.n = 241
",
        params: &[],
        run: scenarios::product_state_gap,
    },
    Experiment {
        name: "dbb_hybrid",
        description: "Hybrid model: phase-two velocity is the phase gradient, psi2 recovered from its density",
        defaults: "model.variant = dbb_hybrid
grid.min = -10
grid.max = 10
grid.n = 2001
",
        params: &[],
        run: scenarios::dbb_hybrid,
    },
    Experiment {
        name: "linear_combo",
        description: "Linear-combination densities: inversion roundtrip and conservation",
        defaults: "model.variant = linear_combo
model.alpha = 2
model.beta = 1
grid.n = 1001
time.dt = 1e-3
",
        params: &[("residual_t_end", 0.05)],
        run: scenarios::linear_combo,
    },
    Experiment {
        name: "spin_augmented_2d",
        description: "Spin currents are divergence free and vanish with zero spin vectors",
        defaults: "state.kind = gaussian
state.width = 1
state.k = 1
model.variant = spin_augmented
model.w1 = 0.5
model.w2 = -0.3
grid.min = -6
grid.max = 6
grid.n = 241
grid.y_min = -6
grid.y_max = 6
grid.y_n = 241
",
        params: &[("y_width", 1.0)],
        run: scenarios::spin_augmented_2d,
    },
    Experiment {
        name: "eisenhart_v0_reduction",
        description: "Lifted propagation without a potential reduces to the one-dimensional scheme",
        defaults: "state.kind = gaussian
state.width = 2
grid.min = -10
grid.max = 10
grid.n = 2001
propagation.n_labels = 256
propagation.window_min = -6
propagation.window_max = 6
",
        params: &[],
        run: scenarios::eisenhart_v0_reduction,
    },
    Experiment {
        name: "eisenhart_constant_v",
        description: "A constant potential shifts q4 linearly and multiplies psi by a global phase",
        defaults: "state.kind = gaussian
state.width = 2
potential.kind = constant
potential.value = 0.5
grid.min = -10
grid.max = 10
grid.n = 2001
time.t_end = 0.1
propagation.n_labels = 256
propagation.window_min = -6
propagation.window_max = 6
",
        params: &[],
        run: scenarios::eisenhart_constant_v,
    },
    Experiment {
        name: "eisenhart_harmonic",
        description: "Lifted propagation of a coherent state in a harmonic well",
        defaults: "state.kind = coherent_state
state.omega = 1
state.x0 = 1
potential.kind = harmonic
potential.omega = 1
grid.min = -10
grid.max = 10
grid.n = 2001
time.t_end = 0.1
propagation.n_labels = 256
propagation.window_min = -0.8
propagation.window_max = 2.8
",
        params: &[],
        run: scenarios::eisenhart_harmonic,
    },
    Experiment {
        name: "convergence_sweep",
        description: "Error reduction under label refinement and under grid and step refinement",
        defaults: "grid.n = 4096
",
        params: &[("residual_t_end", 0.05), ("residual_n", 1001.0)],
        run: scenarios::convergence_sweep,
    },
];

pub fn list_experiments() -> &'static [Experiment] {
    REGISTRY
}

pub fn find_experiment(name: &str) -> Result<&'static Experiment> {
    REGISTRY.iter().find(|e| e.name == name).map_or_else(
        || {
            let names: Vec<_> = REGISTRY.iter().map(|e| e.name).collect();
            config(format!("unknown experiment `{name}` (known: {})", names.join(", ")))
        },
        Ok,
    )
}

/// Effective configuration: the experiment's defaults overlaid by the user
/// text, then by `overrides`. The experiment comes from `experiment` or, if
/// that is `None`, from the user text.
pub fn load_config(experiment: Option<&str>, user_text: &str, overrides: &ConfigMap) -> Result<ExperimentConfig> {
    let mut user = parse_config(user_text)?;
    for (k, v) in overrides {
        user.insert(k.clone(), v.clone());
    }
    let name = match (experiment, user.get("experiment")) {
        (Some(a), Some(b)) if a != b => return config(format!("experiment `{a}` conflicts with `experiment = {b}` in the config")),
        (Some(a), _) => a.to_string(),
        (None, Some(b)) => b.clone(),
        (None, None) => return config("no experiment named"),
    };
    let exp = find_experiment(&name)?;
    let mut base = parse_config(BENCHMARK)?;
    base = overlay(&base, &parse_config(exp.defaults)?);
    base.insert("experiment".into(), name);
    build_config(&overlay(&base, &user), exp.params)
}

/// Runs an experiment and writes its outputs to `cfg.out_dir`. Configuration
/// and I/O failures are returned as errors; numerical failures become an
/// `ERROR` status in the written report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let exp = find_experiment(&cfg.experiment)?;
    let started = Instant::now();
    let mut run = Run::default();
    let outcome = (exp.run)(cfg, &mut run);
    let status = match outcome {
        Err(e @ (Error::Config(_) | Error::Io(_))) => return Err(e),
        Err(e) => RunStatus::Error {
            kind: error_kind(&e).into(),
            message: e.to_string(),
        },
        Ok(()) if run.checks.iter().all(|c| c.pass) => RunStatus::Pass,
        Ok(()) => RunStatus::Fail,
    };
    let mut echo = cfg.echo.clone();
    echo.remove("out_dir");
    let mut report = ExperimentReport {
        experiment: exp.name.into(),
        description: exp.description.into(),
        config: echo,
        status,
        metrics: run.metrics,
        checks: run.checks,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        files: Vec::new(),
    };
    write_outputs(&cfg.out_dir, &mut report, &run.data, cfg.format)?;
    Ok(report)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::OutOfDomain { .. } => "out_of_domain",
        Error::SingularDensity { .. } => "singular_density",
        Error::CrossingDetected { .. } => "crossing_detected",
        Error::BranchAmbiguity { .. } => "branch_ambiguity",
        Error::ConstraintViolation { .. } => "constraint_violation",
        Error::Io(_) => "io",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_default_config_builds() {
        for e in list_experiments() {
            let c = load_config(Some(e.name), "", &ConfigMap::new()).unwrap_or_else(|err| panic!("{}: {err}", e.name));
            assert_eq!(c.experiment, e.name);
        }
    }

    #[test]
    fn user_keys_override_and_conflicts_fail() {
        let c = load_config(None, "experiment = one_phase\nstate.k = 3\none_phase.tol = 1e-3", &ConfigMap::new()).unwrap();
        assert_eq!(c.param("tol"), 1e-3);
        assert!(load_config(Some("identity_3_7"), "experiment = one_phase", &ConfigMap::new()).is_err());
        assert!(load_config(Some("nope"), "", &ConfigMap::new()).is_err());
    }
}
