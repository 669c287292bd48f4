//! Scenario bodies. Each reads its typed configuration, records metrics and
//! checks, and queues data files.

use num_complex::Complex64;

use super::config::ExperimentConfig;
use super::report::{velocity_csv, Check, Relation};
use crate::eisenhart::{eisenhart_velocities, propagate_eisenhart, s_period, write_eisenhart_csv, EisenhartPropagation};
use crate::error::{config, Error, Phase, Result};
use crate::eulerian::{
    analytic_solution, conservation_residual, evolve_linear_sampled, relative_l2, resample, trace_in_fields,
    traced_invariant_error, FieldSeries,
};
use crate::fd;
use crate::fields::{density, gauge_rotate, gaussian_envelope, make_state, polar_decompose, RealPairField, StateSpec};
use crate::flow::{
    mean_identity_residual_of, mean_identity_residual_with, nan_max, one_phase_criterion_with, product_state_velocities_with,
    spin_current, superposition_velocity_with, velocities_dbb_hybrid_with, velocities_linear_combo_with, velocities_spin_augmented_with,
    velocities_standard_with, combo_inverse, FlowModel, FlowVariant,
};
use crate::grid::{SpatialGrid, UnitSystem};
use crate::lagrangian::{propagate, write_trajectory_csv, Diagnostics, Propagation, PropagationOptions, TrajectoryBundle};
use crate::potential::Potential;

/// Collected results of one scenario run.
#[derive(Default)]
pub struct Run {
    pub metrics: Vec<(String, f64)>,
    pub checks: Vec<Check>,
    pub data: Vec<(String, Vec<u8>)>,
}

impl Run {
    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.push((name.into(), value));
    }

    fn check(&mut self, name: &str, value: f64, relation: Relation, limit: f64) {
        self.checks.push(Check::new(name, value, relation, limit));
    }

    fn flag(&mut self, name: &str, ok: bool) {
        self.checks.push(Check::flag(name, ok));
    }

    fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.data.push((name.into(), bytes));
    }
}

fn initial(cfg: &ExperimentConfig) -> Result<RealPairField> {
    make_state(&cfg.state, &cfg.grid, cfg.units)
}

fn require_free(cfg: &ExperimentConfig) -> Result<()> {
    if !cfg.potential.is_zero() {
        return config(format!("{} runs without an external potential", cfg.experiment));
    }
    Ok(())
}

fn require_1d(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.grid.dim() != 1 {
        return config(format!("{} needs a 1D grid", cfg.experiment));
    }
    Ok(())
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    let n = (t_end / dt).round();
    if n < 1.0 || (n * dt - t_end).abs() > 1e-9 * t_end {
        return config(format!("time.t_end = {t_end} is not a multiple of time.dt = {dt}"));
    }
    Ok(n as usize)
}

/// Crank–Nicolson reference at `t_end`.
fn oracle_final(f0: &RealPairField, potential: &Potential, dt: f64, t_end: f64) -> Result<RealPairField> {
    let n = step_count(t_end, dt)?;
    Ok(evolve_linear_sampled(f0, potential, dt, t_end, n)?.last().clone())
}

fn field_csv(f: &RealPairField) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    FieldSeries::new(vec![f.clone()], Potential::Zero, 1.0)?.write_csv(&mut out)?;
    Ok(out)
}

fn strided(b: &TrajectoryBundle, stride: usize) -> TrajectoryBundle {
    let mut c = b.clone();
    let n = c.history.len();
    c.history = c
        .history
        .into_iter()
        .enumerate()
        .filter(|(k, _)| k % stride == 0 || k + 1 == n)
        .map(|(_, s)| s)
        .collect();
    c
}

fn record_diagnostics(run: &mut Run, diag: &Diagnostics, t_end: f64) {
    let reached = diag.steps.last().map_or(0.0, |s| s.t);
    run.metric("final_time", reached);
    run.metric("accepted_steps", diag.steps.len() as f64);
    run.metric("rejected_steps", diag.rejected as f64);
    run.metric("max_drift", diag.max_drift());
    let gap = diag.steps.iter().map(|s| s.jacobian_gap).filter(|v| !v.is_nan()).fold(0.0, f64::max);
    run.metric("max_jacobian_gap", gap);
    run.flag("completed", diag.halt.is_none() && reached >= t_end * (1.0 - 1e-12));
    run.file("diagnostics.json", (diag.to_json() + "\n").into_bytes());
}

fn lagrangian_files(run: &mut Run, p: &Propagation, stride: usize) -> Result<()> {
    let mut out = Vec::new();
    let b: Vec<TrajectoryBundle> = p.bundles.iter().map(|b| strided(b, stride)).collect();
    write_trajectory_csv(&mut out, &[&b[0], &b[1]])?;
    run.file("trajectories.csv", out);
    run.file("field.csv", field_csv(&p.field)?);
    Ok(())
}

fn eisenhart_files(run: &mut Run, p: &EisenhartPropagation) -> Result<()> {
    let mut out = Vec::new();
    write_eisenhart_csv(&mut out, &p.bundles)?;
    run.file("trajectories.csv", out);
    run.file("field.csv", field_csv(&p.field)?);
    Ok(())
}

fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn mode_e_invariant(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    let f0 = initial(cfg)?;
    let n = step_count(cfg.t_end, cfg.dt)?;
    let series = evolve_linear_sampled(&f0, &cfg.potential, cfg.dt, cfg.t_end, 1)?;
    debug_assert_eq!(series.fields.len(), n + 1);
    let (lo, hi) = cfg.propagation.window;
    let labels = uniform(lo, hi, cfg.propagation.n_labels);
    let mut bundles = Vec::with_capacity(2);
    let mut worst: f64 = 0.0;
    for phase in [Phase::One, Phase::Two] {
        let b = trace_in_fields(&series, &cfg.model, &labels, phase)?;
        let e = traced_invariant_error(&series, &b)?;
        run.metric(&format!("invariant_error_phase{}", phase.number()), e);
        worst = worst.max(e);
        bundles.push(strided(&b, cfg.output_stride));
    }
    run.check("invariant_error", worst, Relation::Below, 1e-3);
    let mut out = Vec::new();
    write_trajectory_csv(&mut out, &[&bundles[0], &bundles[1]])?;
    run.file("trajectories.csv", out);
    Ok(())
}

/// Self-contained propagation and its L2 error against the oracle on the
/// assembled grid.
fn propagate_vs_oracle(f0: &RealPairField, cfg: &ExperimentConfig, opts: &PropagationOptions) -> Result<(Propagation, f64)> {
    let p = propagate(f0, opts)?;
    let t = p.field.time;
    let oracle = if t == 0.0 { f0.clone() } else { oracle_final(f0, &cfg.potential, cfg.dt, cfg.t_end.min(t))? };
    let r = resample(&oracle, &p.field.grid)?;
    let l2 = relative_l2(&p.field, &r);
    Ok((p, l2))
}

pub fn mode_l_reconstruction(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    require_free(cfg)?;
    let f0 = initial(cfg)?;
    let (p, l2) = propagate_vs_oracle(&f0, cfg, &cfg.propagation)?;
    run.check("l2_error", l2, Relation::Below, 1e-2);
    record_diagnostics(run, &p.diagnostics, cfg.t_end);
    run.check("drift", p.diagnostics.max_drift(), Relation::Below, 10.0 * cfg.propagation.tolerance);
    lagrangian_files(run, &p, cfg.output_stride)
}

pub fn identity_3_7(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let f = initial(cfg)?;
    let o = cfg.model.options;
    let analytic = nan_max(&mean_identity_residual_with(&f, &o));
    let gridded_field = f.clone().gridded();
    let gridded = nan_max(&mean_identity_residual_with(&gridded_field, &o));
    run.check("residual_analytic", analytic, Relation::Below, 1e-10);
    let wave = make_state(&StateSpec::PlaneWave { k: cfg.param("plane_wave_k") }, &cfg.grid, cfg.units)?;
    run.check("residual_plane_wave", nan_max(&mean_identity_residual_with(&wave, &o)), Relation::Below, 1e-10);
    run.check("residual_gridded", gridded, Relation::Below, 1e-6);
    let mut vel = velocities_standard_with(&gridded_field, &o);
    vel.v[1].iter_mut().flatten().for_each(|v| *v *= 2.0);
    let control = nan_max(&mean_identity_residual_of(&gridded_field, &vel, &o));
    run.check("negative_control", control, Relation::Above, 1e-6);
    Ok(())
}

/// Status of the identity check on a gridded field.
fn identity_holds(f: &RealPairField, model: &FlowModel) -> bool {
    nan_max(&mean_identity_residual_with(f, &model.options)) < 1e-6
}

pub fn gauge_invariance(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let f = initial(cfg)?.gridded();
    let n = cfg.param("angles").round().max(1.0) as usize;
    let tol = cfg.param("one_phase_tol");
    let rho = density(&f);
    let base_one = one_phase_criterion_with(&f, tol, &cfg.model.options).holds;
    let base_id = identity_holds(&f, &cfg.model);
    let period = s_period(&cfg.units);
    let mut worst: f64 = 0.0;
    let (mut one_same, mut id_same) = (true, true);
    for j in 0..n {
        let s = (j as f64 + 0.5) * period / n as f64;
        let g = gauge_rotate(&f, s);
        let d = density(&g).iter().zip(&rho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
        one_same &= one_phase_criterion_with(&g, tol, &cfg.model.options).holds == base_one;
        id_same &= identity_holds(&g, &cfg.model) == base_id;
    }
    run.metric("angles", n as f64);
    run.metric("one_phase_holds", if base_one { 1.0 } else { 0.0 });
    run.metric("identity_holds", if base_id { 1.0 } else { 0.0 });
    run.check("max_density_change", worst, Relation::Below, 1e-14);
    run.flag("one_phase_status_unchanged", one_same);
    run.flag("identity_status_unchanged", id_same);
    Ok(())
}

fn superposition_parts(cfg: &ExperimentConfig) -> Result<(RealPairField, RealPairField)> {
    let StateSpec::Superposition { terms } = &cfg.state else {
        return config("superposition_4_3 needs state.kind = superposition with two terms");
    };
    if terms.len() != 2 {
        return config("superposition_4_3 needs exactly two terms");
    }
    let part = |k: usize| {
        let spec = StateSpec::Superposition {
            terms: vec![terms[k].clone()],
        };
        make_state(&spec, &cfg.grid, cfg.units)
    };
    Ok((part(0)?, part(1)?))
}

fn nearest_index(grid: &SpatialGrid, x: f64) -> usize {
    let ax = grid.axis(0);
    (((x - ax.min) / ax.spacing()).round().max(0.0) as usize).min(ax.n - 1)
}

pub fn superposition_4_3(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    let (f, g) = superposition_parts(cfg)?;
    let o = cfg.model.options;
    let rule = superposition_velocity_with(&f, &g, &o)?;
    let direct = velocities_standard_with(&f.add(&g)?, &o);
    run.check("max_deviation_analytic", rule.max_deviation(&direct), Relation::Below, 1e-10);
    let (fg, gg) = (f.clone().gridded(), g.clone().gridded());
    let rule_g = superposition_velocity_with(&fg, &gg, &o)?;
    let direct_g = velocities_standard_with(&fg.add(&gg)?, &o);
    run.check("max_deviation_gridded", rule_g.max_deviation(&direct_g), Relation::Below, 1e-6);
    let i = nearest_index(&cfg.grid, 0.0);
    run.metric("origin_x", cfg.grid.coords(i)[0]);
    run.metric("v1_at_origin", rule.v[0][0][i]);
    run.metric("v2_at_origin", rule.v[1][0][i]);
    run.check("origin_deviation", (rule.v[0][0][i] - direct.v[0][0][i]).abs(), Relation::Below, 1e-10);
    run.file("velocities.csv", velocity_csv(&cfg.grid, &rule)?);
    Ok(())
}

pub fn one_phase(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let f = initial(cfg)?;
    let r = one_phase_criterion_with(&f, cfg.param("tol"), &cfg.model.options);
    run.metric("max_gap", r.max_gap);
    if let Some((_, x)) = &r.witness {
        run.metric("witness_x", x[0]);
    }
    run.flag("one_phase", r.holds);
    run.file("velocities.csv", velocity_csv(&cfg.grid, &velocities_standard_with(&f, &cfg.model.options))?);
    Ok(())
}

pub fn product_state_gap(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    let Some(partner) = &cfg.partner else {
        return config("product_state_gap needs a partner state (partner.kind)");
    };
    let psi = initial(cfg)?;
    let phi = make_state(partner, &cfg.grid, cfg.units)?;
    let p = product_state_velocities_with(&psi, &phi, &cfg.model.options)?;
    run.check("max_gap", nan_max(&p.gap), Relation::Above, 1e-2);
    run.metric("max_gap_second", nan_max(&p.gap_second));
    run.check("factorization_residual", p.factorization_residual(&psi, &phi), Relation::Below, 1e-12);
    Ok(())
}

pub fn dbb_hybrid(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    let f = initial(cfg)?;
    let o = cfg.model.options;
    let m = cfg.units.mass;
    let grad_s_gap = |f: &RealPairField| -> Result<f64> {
        let h = velocities_dbb_hybrid_with(f, &o)?;
        let polar = polar_decompose(f);
        let (_, ds) = polar.gradients(o.stencil);
        Ok((0..f.len())
            .filter(|&i| h.velocities.defined[1][i] && !polar.undefined[i])
            .map(|i| (h.velocities.v[1][0][i] - ds[0][i] / m).abs())
            .fold(0.0, f64::max))
    };
    run.check("v2_vs_grad_s_analytic", grad_s_gap(&f)?, Relation::Below, 1e-8);
    let fg = f.clone().gridded();
    run.metric("v2_vs_grad_s_gridded", grad_s_gap(&fg)?);
    let h = velocities_dbb_hybrid_with(&fg, &o)?;
    let roundtrip = h.root.iter().zip(&fg.psi2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    run.check("sign_roundtrip", roundtrip, Relation::Below, 1e-10);
    run.metric("sign_flips", h.sign.windows(2).filter(|w| w[0] != w[1]).count() as f64);
    run.file("velocities.csv", velocity_csv(&cfg.grid, &h.velocities)?);
    Ok(())
}

/// Max conservation residual of `model` on an oracle series at `(n, dt)`.
fn residual_at(cfg: &ExperimentConfig, model: &FlowModel, n: usize, dt: f64, t_end: f64) -> Result<f64> {
    let ax = cfg.grid.axis(0);
    let grid = SpatialGrid::line(ax.min, ax.max, n, ax.periodic)?;
    let f0 = make_state(&cfg.state, &grid, cfg.units)?;
    let series = evolve_linear_sampled(&f0, &cfg.potential, dt, t_end, 1)?;
    Ok(conservation_residual(&series, model)?.max())
}

fn residual_ratio(cfg: &ExperimentConfig, run: &mut Run, model: &FlowModel, n: usize) -> Result<()> {
    let t_end = cfg.param("residual_t_end");
    step_count(t_end, cfg.dt)?;
    let coarse = residual_at(cfg, model, n, cfg.dt, t_end)?;
    let fine = residual_at(cfg, model, 2 * n - 1, cfg.dt / 2.0, t_end)?;
    run.metric("residual_coarse", coarse);
    run.metric("residual_fine", fine);
    run.check("residual_ratio", coarse / fine, Relation::AtLeast, 3.5);
    Ok(())
}

pub fn linear_combo(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    let FlowVariant::LinearCombo { alpha, beta } = cfg.model.variant else {
        return config("linear_combo needs model.variant = linear_combo");
    };
    let f = initial(cfg)?.gridded();
    let c = velocities_linear_combo_with(&f, alpha, beta, &cfg.model.options)?;
    run.metric("gamma", c.gamma);
    run.metric("delta", c.delta);
    let (p1, p2) = combo_inverse(&c.densities[0], &c.densities[1], alpha, beta);
    let scale = f.psi1.iter().chain(&f.psi2).fold(0.0f64, |m, v| m.max(v.abs()));
    let rt = p1
        .iter()
        .zip(&f.psi1)
        .chain(p2.iter().zip(&f.psi2))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale;
    run.check("roundtrip_error", rt, Relation::Below, 1e-14);
    residual_ratio(cfg, run, &cfg.model, cfg.grid.axis(0).n)?;
    run.file("velocities.csv", velocity_csv(&cfg.grid, &c.velocities)?);
    Ok(())
}

pub fn spin_augmented_2d(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    if cfg.grid.dim() != 2 {
        return config("spin_augmented_2d needs a 2D grid (grid.y_n)");
    }
    let FlowVariant::SpinAugmented { w1, w2 } = cfg.model.variant else {
        return config("spin_augmented_2d needs model.variant = spin_augmented");
    };
    let wy = cfg.param("y_width");
    let units = cfg.units;
    let spec = cfg.state.clone();
    let f = RealPairField::from_fn(cfg.grid.clone(), units, 0.0, |c| {
        let (v, d) = spec.eval(c[0], &units);
        let e = gaussian_envelope(c[1], wy);
        let de = -c[1] / (2.0 * wy * wy) * e;
        (v * e, vec![d * e, v * Complex64::new(de, 0.0)])
    })?
    .gridded();
    let o = cfg.model.options;
    let shape = [cfg.grid.axis(0).n, cfg.grid.axis(1).n];
    let mut div: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (a, w) in [w1, w2].into_iter().enumerate() {
        let [cx, cy] = spin_current(&f, w, a, o.stencil)?;
        let (ax, ay) = (cfg.grid.axis(0), cfg.grid.axis(1));
        let dx = fd::derivative_2d(&cx, shape, 0, ax.spacing(), ax.periodic, o.stencil);
        let dy = fd::derivative_2d(&cy, shape, 1, ay.spacing(), ay.periodic, o.stencil);
        div = div.max(dx.iter().zip(&dy).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max));
        scale = scale.max(cx.iter().chain(&cy).fold(0.0, |m, v| m.max(v.abs())));
    }
    run.metric("current_scale", scale);
    run.check("current_divergence", div, Relation::Below, 1e-8);
    let zero = velocities_spin_augmented_with(&f, [0.0; 3], [0.0; 3], &o)?;
    let standard = velocities_standard_with(&f, &o);
    run.check("zero_spin_deviation", zero.max_deviation(&standard), Relation::Equal, 0.0);
    let vel = velocities_spin_augmented_with(&f, w1, w2, &o)?;
    run.metric("max_added_velocity", vel.max_deviation(&standard));
    run.file("velocities.csv", velocity_csv(&cfg.grid, &vel)?);
    Ok(())
}

fn eisenhart_run(cfg: &ExperimentConfig, f0: &RealPairField, potential: &Potential, run: &mut Run) -> Result<EisenhartPropagation> {
    let p = propagate_eisenhart(f0, potential, &cfg.eisenhart_options())?;
    run.metric("spread", p.spread);
    record_diagnostics(run, &p.diagnostics, cfg.t_end);
    run.check("conservation_drift", p.diagnostics.max_drift(), Relation::Below, 10.0 * cfg.propagation.tolerance);
    Ok(p)
}

fn q4_deviation(p: &EisenhartPropagation) -> f64 {
    p.bundles.iter().map(|b| b.q4_deviation()).fold(0.0, f64::max)
}

pub fn eisenhart_v0_reduction(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    require_free(cfg)?;
    let f0 = initial(cfg)?;
    let p = eisenhart_run(cfg, &f0, &Potential::Zero, run)?;
    run.check("q4_deviation", q4_deviation(&p), Relation::Equal, 0.0);
    // The same label rows propagated one at a time by the free scheme.
    let labels_s = &p.bundles[0].labels_s;
    let mut opts = cfg.propagation.clone();
    opts.max_time = p.field.time;
    let mut sum: Option<RealPairField> = None;
    for &s in labels_s {
        let q = propagate(&gauge_rotate(&f0, s), &opts)?;
        if q.diagnostics.halt.is_some() {
            return Err(Error::Config(format!("reference row at s = {s} halted")));
        }
        let back = gauge_rotate(&resample(&q.field, &p.field.grid)?, -s);
        sum = Some(match sum {
            None => back,
            Some(a) => a.add(&back)?,
        });
    }
    let mut mean = sum.expect("at least one row");
    let ns = labels_s.len() as f64;
    mean.psi1.iter_mut().chain(mean.psi2.iter_mut()).for_each(|v| *v /= ns);
    run.check("l2_vs_free_rows", relative_l2(&p.field, &mean), Relation::Below, 1e-6);
    run.check("spread_limit", p.spread, Relation::Below, 1e-4);
    eisenhart_files(run, &p)
}

pub fn eisenhart_constant_v(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    let Potential::Constant { value } = cfg.potential else {
        return config("eisenhart_constant_v needs potential.kind = constant");
    };
    let f0 = initial(cfg)?;
    let p = eisenhart_run(cfg, &f0, &cfg.potential, run)?;
    let t = p.field.time;
    let shift = value * t / cfg.units.mass;
    let mut q4_err: f64 = 0.0;
    for b in &p.bundles {
        let bounds = b.bounds();
        for j in 0..b.ns() {
            for p4 in &b.q4[bounds[j]..bounds[j + 1]] {
                q4_err = q4_err.max((p4 - (b.labels_s[j] + shift)).abs());
            }
        }
    }
    run.check("q4_error", q4_err, Relation::Below, 1e-12);
    let mut free_cfg = cfg.clone();
    free_cfg.potential = Potential::Zero;
    let free = propagate_eisenhart(&f0, &Potential::Zero, &free_cfg.eisenhart_options())?;
    let phase = Complex64::from_polar(1.0, -value * t / cfg.units.hbar);
    let (a, b) = (p.field.grid.axis(0), free.field.grid.axis(0));
    let common = p.field.grid.restrict(a.min.max(b.min), a.max.min(b.max))?;
    let expect = rotate_to(&free.field, phase, &common)?;
    let got = resample(&p.field, &common)?;
    run.check("l2_vs_phase_shifted_free", relative_l2(&got, &expect), Relation::Below, 1e-6);
    eisenhart_files(run, &p)
}

fn rotate_to(f: &RealPairField, phase: Complex64, grid: &SpatialGrid) -> Result<RealPairField> {
    let r = resample(f, grid)?;
    let (p1, p2): (Vec<f64>, Vec<f64>) = r
        .psi1
        .iter()
        .zip(&r.psi2)
        .map(|(a, b)| {
            let z = Complex64::new(*a, *b) * phase;
            (z.re, z.im)
        })
        .unzip();
    RealPairField::from_samples(grid.clone(), r.units, p1, p2, r.time)
}

pub fn eisenhart_harmonic(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    let f0 = initial(cfg)?;
    let p = eisenhart_run(cfg, &f0, &cfg.potential, run)?;
    let exact = analytic_solution(&cfg.state, &cfg.potential, &p.field.grid, cfg.units, p.field.time)?;
    run.check("l2_vs_analytic", relative_l2(&p.field, &exact), Relation::Below, 2e-2);
    run.check("spread_limit", p.spread, Relation::Below, 1e-4);
    run.metric("u_consistency", u_consistency(&p, &cfg.units));
    eisenhart_files(run, &p)
}

/// `max |φ_a (u_a − V/m)| / max |φ_a|` over the assembled lifted field.
fn u_consistency(p: &EisenhartPropagation, units: &UnitSystem) -> f64 {
    let e = &p.lifted;
    let vel = eisenhart_velocities(e);
    let nx = e.nx();
    let xs = e.grid.axis(0).points();
    let mut worst: f64 = 0.0;
    for a in 0..2 {
        let own = e.component(a);
        let scale = own.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (idx, u) in vel.u[a].iter().enumerate() {
            if vel.defined[a][idx] {
                let v = e.potential.value(xs[idx % nx], e.time, units) / units.mass;
                worst = worst.max((own[idx] * (u - v)).abs() / scale);
            }
        }
    }
    worst
}

pub fn convergence_sweep(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    require_1d(cfg)?;
    require_free(cfg)?;
    let f0 = initial(cfg)?;
    let coarse_opts = cfg.propagation.clone();
    let mut fine_opts = coarse_opts.clone();
    fine_opts.n_labels = 2 * coarse_opts.n_labels;
    fine_opts.dt_init = coarse_opts.dt_init / 2.0;
    fine_opts.dt_min = fine_opts.dt_min.min(fine_opts.dt_init);
    let (pc, l2c) = propagate_vs_oracle(&f0, cfg, &coarse_opts)?;
    let (pf, l2f) = propagate_vs_oracle(&f0, cfg, &fine_opts)?;
    for (name, p) in [("coarse", &pc), ("fine", &pf)] {
        let ok = p.diagnostics.halt.is_none();
        run.flag(&format!("{name}_completed"), ok);
    }
    run.metric("l2_coarse", l2c);
    run.metric("l2_fine", l2f);
    run.check("l2_ratio", l2c / l2f, Relation::AtLeast, 2.0);
    residual_ratio(cfg, run, &cfg.model, cfg.param("residual_n").round() as usize)
}
