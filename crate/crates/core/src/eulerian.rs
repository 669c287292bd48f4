//! Reference evolution of ψ on a fixed grid, closed-form solutions,
//! conservation residuals and path tracing through stored velocity fields.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Error, Phase, Result};
use crate::fd::{self, Stencil};
use crate::fields::{density, make_state, polar_decompose, RealPairField, StateSpec};
use crate::flow::{FlowModel, FlowVariant, ModelEval};
use crate::grid::{SpatialGrid, UnitSystem};
use crate::interp::MonotoneCubic;
use crate::lagrangian::{fmt_num, Snapshot, TrajectoryBundle};
use crate::potential::Potential;

/// Minimum number of grid points per oscillation of the fastest component.
pub const POINTS_PER_OSCILLATION: f64 = 16.0;

/// Envelope level (relative to the max of |ψ|) below which points are left
/// out of residual norms.
pub const ACTIVE_LEVEL: f64 = 1e-6;

/// Fields at uniformly spaced times on one grid.
#[derive(Clone, Debug)]
pub struct FieldSeries {
    pub fields: Vec<RealPairField>,
    pub potential: Potential,
    pub dt: f64,
}

impl FieldSeries {
    pub fn new(fields: Vec<RealPairField>, potential: Potential, dt: f64) -> Result<FieldSeries> {
        if fields.is_empty() {
            return config("a series needs at least one field");
        }
        if !(dt > 0.0) {
            return config("series time step must be positive");
        }
        let g = &fields[0].grid;
        for (k, f) in fields.iter().enumerate() {
            if &f.grid != g || f.units != fields[0].units {
                return config("all series fields must share grid and units");
            }
            let expect = fields[0].time + k as f64 * dt;
            if (f.time - expect).abs() > 1e-9 * dt.max(expect.abs()) {
                return config(format!("series slice {k} has time {} instead of {expect}", f.time));
            }
        }
        Ok(FieldSeries { fields, potential, dt })
    }

    pub fn times(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.time).collect()
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.fields[0].grid
    }

    pub fn units(&self) -> UnitSystem {
        self.fields[0].units
    }

    pub fn last(&self) -> &RealPairField {
        self.fields.last().unwrap()
    }

    /// CSV with columns `t,x,psi1,psi2,rho` (1D series).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "t,x,psi1,psi2,rho")?;
        for f in &self.fields {
            let rho = density(f);
            for i in 0..f.len() {
                let x = f.grid.coords(i)[0];
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    fmt_num(f.time),
                    fmt_num(x),
                    fmt_num(f.psi1[i]),
                    fmt_num(f.psi2[i]),
                    fmt_num(rho[i])
                )?;
            }
        }
        Ok(())
    }
}

/// Fastest local wavenumber `|∇S|/ħ` where ρ exceeds `ACTIVE_LEVEL · max ρ`.
pub fn max_wavenumber(f: &RealPairField) -> f64 {
    let p = polar_decompose(f);
    let (_, ds) = p.gradients(Stencil::Second);
    let rmax = p.rho.iter().cloned().fold(0.0, f64::max);
    let mut kmax: f64 = 0.0;
    for (i, r) in p.rho.iter().enumerate() {
        if *r > ACTIVE_LEVEL * rmax && !p.undefined[i] {
            for d in &ds {
                let k = (d[i] / f.units.hbar).abs();
                // unwrapping across masked gaps can leave isolated jumps
                if k.is_finite() {
                    kmax = kmax.max(k);
                }
            }
        }
    }
    kmax
}

/// Crank–Nicolson evolution with Dirichlet (zero beyond the ends) or periodic
/// boundaries; V is evaluated at the half step.
pub fn evolve_linear(f0: &RealPairField, potential: &Potential, dt: f64, t_end: f64) -> Result<FieldSeries> {
    evolve_linear_sampled(f0, potential, dt, t_end, 1)
}

/// As [`evolve_linear`], keeping every `stride`-th slice.
pub fn evolve_linear_sampled(
    f0: &RealPairField,
    potential: &Potential,
    dt: f64,
    t_end: f64,
    stride: usize,
) -> Result<FieldSeries> {
    if f0.grid.dim() != 1 {
        return config("the reference solver is one-dimensional");
    }
    if !(dt.is_finite() && dt > 0.0) || !(t_end.is_finite() && t_end >= 0.0) || stride == 0 {
        return config("time step and horizon must be positive");
    }
    let steps_f = t_end / dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return config(format!("horizon {t_end} is not a multiple of the time step {dt}"));
    }
    if steps % stride != 0 {
        return config("stride must divide the number of steps");
    }
    let ax = *f0.grid.axis(0);
    let h = ax.spacing();
    let kmax = max_wavenumber(f0);
    if kmax * h > 2.0 * std::f64::consts::PI / POINTS_PER_OSCILLATION {
        return config(format!(
            "grid spacing {h} does not resolve wavenumber {kmax} with {POINTS_PER_OSCILLATION} points per oscillation"
        ));
    }
    let units = f0.units;
    let (hbar, m) = (units.hbar, units.mass);
    let xs = ax.points();
    let n = xs.len();
    let off = -hbar * hbar / (2.0 * m * h * h);
    let i = Complex64::i();
    let mut psi: Vec<Complex64> = (0..n).map(|k| f0.value(k)).collect();
    let mut fields = vec![RealPairField { exact: None, ..f0.clone() }];
    let mut t = f0.time;
    let mut diag_v = vec![0.0; n];
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    let c = i * dt / (2.0 * hbar);
    for step in 1..=steps {
        let tm = t + 0.5 * dt;
        for (k, x) in xs.iter().enumerate() {
            diag_v[k] = -2.0 * off + potential.value(*x, tm, &units);
        }
        // rhs = (1 − c H) ψ
        for k in 0..n {
            let left = if k > 0 {
                psi[k - 1]
            } else if ax.periodic {
                psi[n - 1]
            } else {
                Complex64::new(0.0, 0.0)
            };
            let right = if k + 1 < n {
                psi[k + 1]
            } else if ax.periodic {
                psi[0]
            } else {
                Complex64::new(0.0, 0.0)
            };
            let hpsi = diag_v[k] * psi[k] + off * (left + right);
            rhs[k] = psi[k] - c * hpsi;
        }
        let lower = c * off;
        let diag: Vec<Complex64> = diag_v.iter().map(|d| 1.0 + c * d).collect();
        psi = if ax.periodic {
            solve_cyclic(lower, &diag, lower, &rhs)
        } else {
            solve_tridiagonal(lower, &diag, lower, &rhs)
        };
        t = f0.time + step as f64 * dt;
        if step % stride == 0 {
            let (p1, p2) = psi.iter().map(|z| (z.re, z.im)).unzip();
            fields.push(RealPairField::from_samples(f0.grid.clone(), units, p1, p2, t)?);
        }
    }
    FieldSeries::new(fields, potential.clone(), dt * stride as f64)
}

/// Thomas algorithm for constant off-diagonals.
fn solve_tridiagonal(a: Complex64, b: &[Complex64], c: Complex64, d: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    let mut cp = vec![Complex64::new(0.0, 0.0); n];
    let mut dp = vec![Complex64::new(0.0, 0.0); n];
    cp[0] = c / b[0];
    dp[0] = d[0] / b[0];
    for k in 1..n {
        let den = b[k] - a * cp[k - 1];
        cp[k] = c / den;
        dp[k] = (d[k] - a * dp[k - 1]) / den;
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    x[n - 1] = dp[n - 1];
    for k in (0..n - 1).rev() {
        x[k] = dp[k] - cp[k] * x[k + 1];
    }
    x
}

/// Cyclic tridiagonal solve by Sherman–Morrison.
fn solve_cyclic(a: Complex64, b: &[Complex64], c: Complex64, d: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= a * c / gamma;
    let x = solve_tridiagonal(a, &bb, c, d);
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    u[0] = gamma;
    u[n - 1] = c;
    let z = solve_tridiagonal(a, &bb, c, &u);
    let fact = (x[0] + a * x[n - 1] / gamma) / (1.0 + z[0] + a * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Closed-form ψ and ∂ₓψ at `(x, t)` for the supported (state, potential)
/// pairs; `None` when no closed form is available.
pub fn analytic_value(spec: &StateSpec, potential: &Potential, x: f64, t: f64, units: &UnitSystem) -> Option<(Complex64, Complex64)> {
    if t == 0.0 {
        return Some(spec.eval(x, units));
    }
    let i = Complex64::i();
    let (hbar, m) = (units.hbar, units.mass);
    match potential {
        Potential::Constant { value } => {
            let (v, d) = analytic_value(spec, &Potential::Zero, x, t, units)?;
            let ph = Complex64::from_polar(1.0, -value * t / hbar);
            Some((v * ph, d * ph))
        }
        Potential::Zero => match *spec {
            StateSpec::PlaneWave { k } => {
                let v = Complex64::from_polar(1.0, k * x - hbar * k * k * t / (2.0 * m));
                Some((v, i * k * v))
            }
            StateSpec::Gaussian { center, width, k } => Some(free_gaussian(center, width, k, x, t, units)),
            StateSpec::CoherentState { omega, x0 } => {
                let width = (hbar / (2.0 * m * omega)).sqrt();
                Some(free_gaussian(x0, width, 0.0, x, t, units))
            }
            StateSpec::Superposition { ref terms } => superpose(terms, |s| analytic_value(s, potential, x, t, units)),
            StateSpec::GaussianTanhPhase { .. } => None,
        },
        Potential::Harmonic { omega: w } => match *spec {
            StateSpec::CoherentState { omega, x0 } if omega == *w => {
                let mw = m * omega / hbar;
                let xc = x0 * (omega * t).cos();
                let pc = -m * omega * x0 * (omega * t).sin();
                let arg = -0.5 * mw * (x - xc).powi(2) + i * (pc * x / hbar - pc * xc / (2.0 * hbar) - 0.5 * omega * t);
                let v = (mw / std::f64::consts::PI).powf(0.25) * arg.exp();
                Some((v, (-mw * (x - xc) + i * pc / hbar) * v))
            }
            StateSpec::Superposition { ref terms } => superpose(terms, |s| analytic_value(s, potential, x, t, units)),
            _ => None,
        },
        Potential::Tabulated { .. } => None,
    }
}

fn superpose<F>(terms: &[(crate::fields::Weight, StateSpec)], f: F) -> Option<(Complex64, Complex64)>
where
    F: Fn(&StateSpec) -> Option<(Complex64, Complex64)>,
{
    let mut acc = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (w, s) in terms {
        let (v, d) = f(s)?;
        let w: Complex64 = (*w).into();
        acc = (acc.0 + w * v, acc.1 + w * d);
    }
    Some(acc)
}

/// Freely spreading Gaussian with initial density width σ and wavenumber k.
fn free_gaussian(center: f64, width: f64, k: f64, x: f64, t: f64, units: &UnitSystem) -> (Complex64, Complex64) {
    let (hbar, m) = (units.hbar, units.mass);
    let tau = hbar * t / (2.0 * m * width * width);
    let a = Complex64::new(1.0, tau);
    let vel = hbar * k / m;
    let y = x - center - vel * t;
    let norm = (2.0 * std::f64::consts::PI * width * width).powf(-0.25);
    let i = Complex64::i();
    let arg = -y * y / (4.0 * width * width * a) + i * (k * x - hbar * k * k * t / (2.0 * m));
    let v = norm / a.sqrt() * arg.exp();
    let d = (-y / (2.0 * width * width * a) + i * k) * v;
    (v, d)
}

/// Closed-form solution sampled on `grid` with exact gradients.
pub fn analytic_solution(spec: &StateSpec, potential: &Potential, grid: &SpatialGrid, units: UnitSystem, t: f64) -> Result<RealPairField> {
    spec.validate()?;
    if t == 0.0 {
        return make_state(spec, grid, units);
    }
    if grid.dim() != 1 {
        return config("analytic solutions are one-dimensional");
    }
    let probe = grid.axis(0).min;
    if analytic_value(spec, potential, probe, t, &units).is_none() {
        return config(format!("no closed-form solution for this state under a {} potential", potential.name()));
    }
    RealPairField::from_fn(grid.clone(), units, t, |c| {
        let (v, d) = analytic_value(spec, potential, c[0], t, &units).expect("checked above");
        (v, vec![d])
    })
}

/// Per-slice max-norm conservation residuals for both phases.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualSeries {
    pub times: Vec<f64>,
    pub residuals: Vec<[f64; 2]>,
}

impl ResidualSeries {
    pub fn max(&self) -> f64 {
        self.residuals.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// `r_a = ∂ₜρ_a + ∇·(ρ_a v_a)` for the model's densities and velocities,
/// centered in time and space, on interior points where the velocity is
/// defined and |ψ| exceeds `ACTIVE_LEVEL` of its max. The Eisenhart variant
/// works on the lifted field and includes the s-flux.
pub fn conservation_residual(series: &FieldSeries, model: &FlowModel) -> Result<ResidualSeries> {
    if let FlowVariant::Eisenhart { potential } = &model.variant {
        return crate::eisenhart::lifted_conservation_residual(series, potential, crate::eisenhart::DEFAULT_S_POINTS, model.options.stencil);
    }
    conservation_residual_with(series, model, |_| {})
}

/// As [`conservation_residual`], with a hook that may alter each slice's
/// evaluated closure (used for negative controls).
pub fn conservation_residual_with<F>(series: &FieldSeries, model: &FlowModel, tweak: F) -> Result<ResidualSeries>
where
    F: Fn(&mut ModelEval) + Sync,
{
    let k_slices = series.fields.len();
    if k_slices < 3 {
        return config("centered time differences need at least three slices");
    }
    let evals: Vec<ModelEval> = series
        .fields
        .par_iter()
        .map(|f| {
            let mut e = model.evaluate(f)?;
            tweak(&mut e);
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let grid = series.grid().clone();
    let dim = grid.dim();
    let shape = grid.shape();
    let mut times = Vec::new();
    let mut residuals = Vec::new();
    for n in 1..k_slices - 1 {
        let f = &series.fields[n];
        let rho = density(f);
        let rmax = rho.iter().cloned().fold(0.0, f64::max);
        let e = &evals[n];
        let mut out = [0.0f64; 2];
        for a in 0..2 {
            let mut div = vec![0.0; f.len()];
            for k in 0..dim {
                let flux: Vec<f64> = e.densities[a]
                    .iter()
                    .zip(&e.velocities.v[a][k])
                    .map(|(r, v)| r * v)
                    .collect();
                let ax = grid.axis(k);
                let d = if dim == 1 {
                    fd::derivative(&flux, ax.spacing(), ax.periodic, model.options.stencil)
                } else {
                    fd::derivative_2d(&flux, [shape[0], shape[1]], k, ax.spacing(), ax.periodic, model.options.stencil)
                };
                for (x, y) in div.iter_mut().zip(d) {
                    *x += y;
                }
            }
            for i in 0..f.len() {
                if rho[i] <= ACTIVE_LEVEL * ACTIVE_LEVEL * rmax || !interior(&grid, i) {
                    continue;
                }
                let dt_rho = (evals[n + 1].densities[a][i] - evals[n - 1].densities[a][i]) / (2.0 * series.dt);
                let r = dt_rho + div[i];
                if r.is_finite() {
                    out[a] = out[a].max(r.abs());
                }
            }
        }
        times.push(f.time);
        residuals.push(out);
    }
    Ok(ResidualSeries { times, residuals })
}

/// False for points within two nodes of a non-periodic edge.
fn interior(grid: &SpatialGrid, idx: usize) -> bool {
    let shape = grid.shape();
    let coords: Vec<usize> = match grid.dim() {
        1 => vec![idx],
        _ => vec![idx / shape[1], idx % shape[1]],
    };
    coords
        .iter()
        .enumerate()
        .all(|(k, &c)| grid.axis(k).periodic || (c >= 2 && c + 2 < shape[k]))
}

/// Integrates `dq/dt = v_phase(q, t)` through the series with RK4 at the
/// series step, monotone cubic in space and linear in time. Positions are
/// recorded at every series time.
pub fn trace_in_fields(series: &FieldSeries, model: &FlowModel, labels: &[f64], phase: Phase) -> Result<TrajectoryBundle> {
    let grid = series.grid();
    if grid.dim() != 1 {
        return config("tracing is one-dimensional");
    }
    let ax = *grid.axis(0);
    let xs = ax.points();
    if let Some(&x) = labels.iter().find(|&&x| x < ax.min || x > ax.max) {
        return Err(Error::OutOfDomain {
            time: series.fields[0].time,
            position: x,
            detail: "label outside the series grid".into(),
        });
    }
    let a = phase.index();
    let slices: Vec<(MonotoneCubic, Vec<bool>)> = series
        .fields
        .par_iter()
        .map(|f| {
            let e = model.evaluate(f)?;
            let v = e.velocities.v[a][0].iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect::<Vec<_>>();
            Ok((MonotoneCubic::new(&xs, &v).expect("grid is increasing"), e.velocities.defined[a].clone()))
        })
        .collect::<Result<_>>()?;
    let h = ax.spacing();
    let t0 = series.fields[0].time;
    let dt = series.dt;
    let velocity = |x: f64, t: f64| -> Result<f64> {
        if x < ax.min || x > ax.max {
            return Err(Error::OutOfDomain {
                time: t,
                position: x,
                detail: format!("path left the grid [{}, {}]", ax.min, ax.max),
            });
        }
        let s = ((t - t0) / dt).clamp(0.0, (slices.len() - 1) as f64);
        let n0 = (s.floor() as usize).min(slices.len() - 2);
        let w = s - n0 as f64;
        let cell = (((x - ax.min) / h).floor() as usize).min(xs.len() - 2);
        let mut v = 0.0;
        for (n, wt) in [(n0, 1.0 - w), (n0 + 1, w)] {
            if wt == 0.0 {
                continue;
            }
            let (ip, mask) = &slices[n];
            if !(mask[cell] && mask[cell + 1]) {
                return Err(Error::SingularDensity {
                    phase,
                    time: t,
                    position: x,
                    value: 0.0,
                });
            }
            v += wt * ip.eval(x);
        }
        Ok(v)
    };
    let times = series.times();
    let paths: Vec<Vec<f64>> = labels
        .par_iter()
        .map(|&q0| {
            let mut q = q0;
            let mut path = Vec::with_capacity(times.len());
            path.push(q);
            for n in 0..times.len() - 1 {
                let t = times[n];
                let k1 = velocity(q, t)?;
                let k2 = velocity(q + 0.5 * dt * k1, t + 0.5 * dt)?;
                let k3 = velocity(q + 0.5 * dt * k2, t + 0.5 * dt)?;
                let k4 = velocity(q + dt * k3, t + dt)?;
                q += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                path.push(q);
            }
            Ok(path)
        })
        .collect::<Result<_>>()?;
    let sampler = series.fields[0].sampler()?;
    let psi0: Vec<f64> = labels
        .iter()
        .map(|&x| {
            let (p1, p2) = sampler.sample(x).expect("labels checked");
            if a == 0 {
                p1
            } else {
                p2
            }
        })
        .collect();
    let mut b = TrajectoryBundle::new(phase, labels.to_vec(), psi0)?;
    b.history = times
        .iter()
        .enumerate()
        .map(|(n, &t)| Snapshot {
            t,
            active: (0, labels.len()),
            positions: paths.iter().map(|p| p[n]).collect(),
        })
        .collect();
    let last = b.history.last().unwrap().clone();
    b.positions = last.positions;
    b.time = last.t;
    Ok(b)
}

/// Worst `|ψ_a(q(t), t) J_a(t) / ψ_a0 − 1|` over every recorded slice of a
/// traced bundle, with ψ_a(q, t) interpolated from the series.
pub fn traced_invariant_error(series: &FieldSeries, b: &TrajectoryBundle) -> Result<f64> {
    let a = b.phase.index();
    let h = b.label_spacing();
    let mut worst: f64 = 0.0;
    for snap in &b.history {
        let n = ((snap.t - series.fields[0].time) / series.dt).round() as usize;
        let sampler = series.fields[n].sampler()?;
        let j = fd::derivative(&snap.positions, h, false, Stencil::Second);
        for (k, q) in snap.positions.iter().enumerate() {
            let (p1, p2) = sampler.sample(*q).ok_or_else(|| Error::OutOfDomain {
                time: snap.t,
                position: *q,
                detail: "traced path outside the series grid".into(),
            })?;
            let psi = if a == 0 { p1 } else { p2 };
            let i = snap.active.0 + k;
            worst = worst.max((psi * j[k] / b.psi0[i] - 1.0).abs());
        }
    }
    Ok(worst)
}

/// Relative L2 distance `‖f − g‖/‖g‖` over the grid nodes.
pub fn relative_l2(f: &RealPairField, g: &RealPairField) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..f.len() {
        num += (f.psi1[i] - g.psi1[i]).powi(2) + (f.psi2[i] - g.psi2[i]).powi(2);
        den += g.psi1[i].powi(2) + g.psi2[i].powi(2);
    }
    (num / den).sqrt()
}

/// Samples `f` (1D) at the nodes of `grid` by monotone cubic interpolation.
pub fn resample(f: &RealPairField, grid: &SpatialGrid) -> Result<RealPairField> {
    let s = f.sampler()?;
    let mut p1 = Vec::with_capacity(grid.len());
    let mut p2 = Vec::with_capacity(grid.len());
    for x in grid.axis(0).points() {
        let (a, b) = s.sample(x).ok_or_else(|| Error::OutOfDomain {
            time: f.time,
            position: x,
            detail: "resampling target outside the field grid".into(),
        })?;
        p1.push(a);
        p2.push(b);
    }
    RealPairField::from_samples(grid.clone(), f.units, p1, p2, f.time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solution() {
        let a = Complex64::new(0.3, -0.1);
        let b: Vec<Complex64> = (0..6).map(|k| Complex64::new(2.0 + k as f64 * 0.1, 0.5)).collect();
        let d: Vec<Complex64> = (0..6).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let x = solve_tridiagonal(a, &b, a, &d);
        for k in 0..6 {
            let mut lhs = b[k] * x[k];
            if k > 0 {
                lhs += a * x[k - 1];
            }
            if k < 5 {
                lhs += a * x[k + 1];
            }
            assert!((lhs - d[k]).norm() < 1e-13);
        }
        let x = solve_cyclic(a, &b, a, &d);
        for k in 0..6 {
            let lhs = b[k] * x[k] + a * x[(k + 5) % 6] + a * x[(k + 1) % 6];
            assert!((lhs - d[k]).norm() < 1e-13);
        }
    }

    #[test]
    fn unresolved_state_is_rejected() {
        let g = SpatialGrid::line(0.0, 10.0, 50, true).unwrap();
        let f = make_state(&StateSpec::PlaneWave { k: 2.0 }, &g, UnitSystem::default()).unwrap();
        assert!(matches!(evolve_linear(&f, &Potential::Zero, 0.01, 0.1), Err(Error::Config(_))));
    }

    #[test]
    fn horizon_must_be_multiple_of_step() {
        let g = SpatialGrid::line(-10.0, 10.0, 200, false).unwrap();
        let f = make_state(&StateSpec::benchmark(), &g, UnitSystem::default()).unwrap();
        assert!(evolve_linear(&f, &Potential::Zero, 0.003, 0.01).is_err());
    }

    #[test]
    fn unsupported_closed_form_is_config_error() {
        let g = SpatialGrid::line(-5.0, 5.0, 64, false).unwrap();
        let r = analytic_solution(&StateSpec::benchmark(), &Potential::Zero, &g, UnitSystem::default(), 0.1);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = analytic_solution(&StateSpec::PlaneWave { k: 1.0 }, &Potential::harmonic(1.0).unwrap(), &g, UnitSystem::default(), 0.1);
        assert!(r.is_err());
    }
}
