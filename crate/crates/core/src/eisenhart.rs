//! Propagation with an external potential through the five-dimensional lift.
//!
//! The lifted field `φ(x, s) = e^{ims/ħ} ψ(x)` lives on one spatial axis plus
//! a periodic s axis of period 2πħ/m. Two families of paths over labels
//! `(x₀, s₀)` carry φ₁ and φ₂; the x-motion follows the two-phase rule at
//! fixed s and the s-motion is `dq₄/dt = V(q_x, t)/m`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Error, Phase, Result};
use crate::eulerian::{FieldSeries, ResidualSeries, ACTIVE_LEVEL};
use crate::fd::{self, Stencil};
use crate::fields::{gauge_rotate, RealPairField};
use crate::flow::DEFAULT_FLOOR;
use crate::grid::{SpatialGrid, UnitSystem, MIN_AXIS_POINTS};
use crate::interp::MonotoneCubic;
use crate::lagrangian::{
    attempt_step, check_floor, fmt_num, remeasured_jacobian, grow_factor, interpolant, shrink_factor, Attempt, Diagnostics,
    PropagationOptions, Status, StepRecord,
};
use crate::potential::Potential;

pub const DEFAULT_S_POINTS: usize = 16;

/// Spread limit for extraction, as a multiple of the run tolerance.
pub const SPREAD_FACTOR: f64 = 100.0;

pub fn s_period(units: &UnitSystem) -> f64 {
    2.0 * PI * units.hbar / units.mass
}

/// Lifted field on an `(x, s)` grid; values are stored row by row in s.
#[derive(Clone, Debug, PartialEq)]
pub struct EisenhartField {
    pub grid: SpatialGrid,
    /// Uniform samples covering one s period.
    pub s: Vec<f64>,
    pub units: UnitSystem,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub potential: Potential,
    pub time: f64,
}

impl EisenhartField {
    pub fn nx(&self) -> usize {
        self.grid.axis(0).n
    }

    pub fn ns(&self) -> usize {
        self.s.len()
    }

    pub fn period(&self) -> f64 {
        s_period(&self.units)
    }

    pub fn component(&self, a: usize) -> &[f64] {
        if a == 0 {
            &self.phi1
        } else {
            &self.phi2
        }
    }

    /// `max |∂ₛφ₁ + (m/ħ)φ₂| + |∂ₛφ₂ − (m/ħ)φ₁|` with the spectral s-derivative.
    pub fn constraint_residual(&self) -> f64 {
        let k = self.units.mass / self.units.hbar;
        let d1 = s_derivative(&self.phi1, self.nx(), self.ns(), self.period());
        let d2 = s_derivative(&self.phi2, self.nx(), self.ns(), self.period());
        (0..self.phi1.len())
            .map(|p| (d1[p] + k * self.phi2[p]).abs() + (d2[p] - k * self.phi1[p]).abs())
            .fold(0.0, f64::max)
    }
}

/// Spectral derivative along s of row-major `[s][x]` data.
pub fn s_derivative(y: &[f64], nx: usize, ns: usize, period: f64) -> Vec<f64> {
    let d = spectral_matrix(ns, period);
    apply_columns(&d, y, nx, ns)
}

/// Matrix of the spectral first derivative on `ns` periodic samples.
fn spectral_matrix(ns: usize, period: f64) -> Vec<f64> {
    let mut d = vec![0.0; ns * ns];
    let mut e = vec![0.0; ns];
    for l in 0..ns {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[l] = 1.0;
        let col = fd::spectral_derivative(&e, period);
        for j in 0..ns {
            d[j * ns + l] = col[j];
        }
    }
    d
}

fn apply_columns(d: &[f64], y: &[f64], nx: usize, ns: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for j in 0..ns {
        let row = &mut out[j * nx..(j + 1) * nx];
        for l in 0..ns {
            let w = d[j * ns + l];
            if w == 0.0 {
                continue;
            }
            let src = &y[l * nx..(l + 1) * nx];
            for (o, s) in row.iter_mut().zip(src) {
                *o += w * s;
            }
        }
    }
    out
}

/// `φ₁ = cos(ms/ħ)ψ₁ − sin(ms/ħ)ψ₂`, `φ₂ = sin(ms/ħ)ψ₁ + cos(ms/ħ)ψ₂` on
/// `s_j = j P/M`.
pub fn lift(f: &RealPairField, m_s: usize) -> Result<EisenhartField> {
    lift_with_offset(f, m_s, 0.0, Potential::Zero)
}

/// Lift on `s_j = offset + j P/M` carrying a potential descriptor.
pub fn lift_with_offset(f: &RealPairField, m_s: usize, offset: f64, potential: Potential) -> Result<EisenhartField> {
    if m_s < MIN_AXIS_POINTS {
        return config(format!("the s axis needs at least {MIN_AXIS_POINTS} points, got {m_s}"));
    }
    if f.grid.dim() != 1 {
        return config("the lift is implemented for one spatial dimension");
    }
    let p = s_period(&f.units);
    let s: Vec<f64> = (0..m_s).map(|j| offset + j as f64 * p / m_s as f64).collect();
    let mut phi1 = Vec::with_capacity(m_s * f.len());
    let mut phi2 = Vec::with_capacity(m_s * f.len());
    for &sj in &s {
        let r = gauge_rotate(f, sj);
        phi1.extend_from_slice(&r.psi1);
        phi2.extend_from_slice(&r.psi2);
    }
    Ok(EisenhartField {
        grid: f.grid.clone(),
        s,
        units: f.units,
        phi1,
        phi2,
        potential,
        time: f.time,
    })
}

#[derive(Clone, Debug)]
pub struct Extraction {
    pub field: RealPairField,
    /// `max |e^{−ims/ħ}φ(x, s) − ψ(x)| / max |ψ|` over the s samples.
    pub spread: f64,
}

/// `ψ(x)` as the s-average of `e^{−ims/ħ}φ(x, s)`; fails when the per-s
/// spread exceeds `SPREAD_FACTOR` times the default tolerance (1e−6).
pub fn extract(e: &EisenhartField) -> Result<Extraction> {
    extract_with(e, 1e-6)
}

pub fn extract_with(e: &EisenhartField, tolerance: f64) -> Result<Extraction> {
    let (nx, ns) = (e.nx(), e.ns());
    let k = e.units.mass / e.units.hbar;
    let mut rows = Vec::with_capacity(ns);
    let mut mean = vec![Complex64::new(0.0, 0.0); nx];
    for j in 0..ns {
        let rot = Complex64::from_polar(1.0, -k * e.s[j]);
        let row: Vec<Complex64> = (0..nx)
            .map(|i| rot * Complex64::new(e.phi1[j * nx + i], e.phi2[j * nx + i]))
            .collect();
        for (m, v) in mean.iter_mut().zip(&row) {
            *m += v;
        }
        rows.push(row);
    }
    mean.iter_mut().for_each(|m| *m /= ns as f64);
    let scale = mean.iter().fold(0.0f64, |a, v| a.max(v.norm()));
    let spread = rows
        .iter()
        .flat_map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m).norm()))
        .fold(0.0, f64::max)
        / scale;
    let limit = SPREAD_FACTOR * tolerance;
    if !(spread <= limit) {
        return Err(Error::ConstraintViolation { spread, limit });
    }
    let (p1, p2) = mean.iter().map(|z| (z.re, z.im)).unzip();
    Ok(Extraction {
        field: RealPairField::from_samples(e.grid.clone(), e.units, p1, p2, e.time)?,
        spread,
    })
}

/// Max norm of `∂²φ_a/∂t∂s + ½∇²φ_a + (V/m)∂²φ_a/∂s²` over the interior
/// slices and the active region.
pub fn wave5d_residual(series: &[EisenhartField], dt: f64) -> Result<f64> {
    wave5d_residual_signed(series, dt, 1.0)
}

/// As [`wave5d_residual`] with the potential term scaled by `v_sign`.
pub fn wave5d_residual_signed(series: &[EisenhartField], dt: f64, v_sign: f64) -> Result<f64> {
    if series.len() < 3 {
        return config("the wave residual needs at least three slices");
    }
    let e0 = &series[0];
    let (nx, ns) = (e0.nx(), e0.ns());
    let p = e0.period();
    let ax = *e0.grid.axis(0);
    let xs = ax.points();
    let m = e0.units.mass;
    let d = spectral_matrix(ns, p);
    let mut d2 = vec![0.0; ns * ns];
    for j in 0..ns {
        for l in 0..ns {
            d2[j * ns + l] = (0..ns).map(|k| d[j * ns + k] * d[k * ns + l]).sum();
        }
    }
    let mut worst: f64 = 0.0;
    for n in 1..series.len() - 1 {
        let e = &series[n];
        let amp: Vec<f64> = (0..nx).map(|i| e.phi1[i].hypot(e.phi2[i])).collect();
        let amax = amp.iter().cloned().fold(0.0, f64::max);
        for a in 0..2 {
            let dphi_dt: Vec<f64> = series[n + 1]
                .component(a)
                .iter()
                .zip(series[n - 1].component(a))
                .map(|(x, y)| (x - y) / (2.0 * dt))
                .collect();
            let ts = apply_columns(&d, &dphi_dt, nx, ns);
            let ss = apply_columns(&d2, e.component(a), nx, ns);
            for j in 0..ns {
                let row = &e.component(a)[j * nx..(j + 1) * nx];
                let lap = fd::second_derivative(row, ax.spacing(), ax.periodic, Stencil::Fourth);
                for i in 0..nx {
                    if amp[i] <= ACTIVE_LEVEL * amax || (!ax.periodic && (i < 2 || i + 2 >= nx)) {
                        continue;
                    }
                    let v = e.potential.value(xs[i], e.time, &e.units);
                    let p_ = j * nx + i;
                    let r = ts[p_] + 0.5 * lap[i] + v_sign * v / m * ss[p_];
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Per-phase x- and s-velocities of the lifted field.
#[derive(Clone, Debug)]
pub struct EisenhartVelocities {
    pub v: [Vec<f64>; 2],
    pub u: [Vec<f64>; 2],
    pub defined: [Vec<bool>; 2],
}

/// `v₁ = (ħ/2m)∂ₓφ₂/φ₁`, `u₁ = (ħ/m²)V ∂ₛφ₂/φ₁`, `v₂ = −(ħ/2m)∂ₓφ₁/φ₂`,
/// `u₂ = −(ħ/m²)V ∂ₛφ₁/φ₂`; NaN below the floor.
pub fn eisenhart_velocities(e: &EisenhartField) -> EisenhartVelocities {
    let (nx, ns) = (e.nx(), e.ns());
    let (hbar, m) = (e.units.hbar, e.units.mass);
    let ax = *e.grid.axis(0);
    let xs = ax.points();
    let dx = |y: &[f64]| -> Vec<f64> {
        (0..ns)
            .flat_map(|j| fd::derivative(&y[j * nx..(j + 1) * nx], ax.spacing(), ax.periodic, Stencil::Fourth))
            .collect()
    };
    let gx = [dx(&e.phi1), dx(&e.phi2)];
    let gs = [s_derivative(&e.phi1, nx, ns, e.period()), s_derivative(&e.phi2, nx, ns, e.period())];
    let mut v = [vec![f64::NAN; nx * ns], vec![f64::NAN; nx * ns]];
    let mut u = [vec![f64::NAN; nx * ns], vec![f64::NAN; nx * ns]];
    let mut defined = [vec![false; nx * ns], vec![false; nx * ns]];
    for a in 0..2 {
        let b = 1 - a;
        let sign = if a == 0 { 1.0 } else { -1.0 };
        let own = e.component(a);
        let cut = DEFAULT_FLOOR * own.iter().fold(0.0f64, |x, y| x.max(y.abs()));
        for p in 0..nx * ns {
            if own[p].abs() >= cut && own[p] != 0.0 {
                defined[a][p] = true;
                let pot = e.potential.value(xs[p % nx], e.time, &e.units);
                v[a][p] = sign * hbar / (2.0 * m) * gx[b][p] / own[p];
                u[a][p] = sign * hbar / (m * m) * pot * gs[b][p] / own[p];
            }
        }
    }
    EisenhartVelocities { v, u, defined }
}

/// Conservation residual `∂ₜφ_a + ∂ₓ(φ_a v_a) + ∂ₛ(φ_a u_a)` of lifted
/// reference slices.
pub fn lifted_conservation_residual(series: &FieldSeries, potential: &Potential, m_s: usize, stencil: Stencil) -> Result<ResidualSeries> {
    if series.fields.len() < 3 {
        return config("centered time differences need at least three slices");
    }
    let p = s_period(&series.units());
    let offset = 0.5 * p / m_s as f64;
    let lifted: Vec<EisenhartField> = series
        .fields
        .iter()
        .map(|f| lift_with_offset(f, m_s, offset, potential.clone()))
        .collect::<Result<_>>()?;
    let (nx, ns) = (lifted[0].nx(), lifted[0].ns());
    let ax = *lifted[0].grid.axis(0);
    let mut times = Vec::new();
    let mut residuals = Vec::new();
    for n in 1..lifted.len() - 1 {
        let e = &lifted[n];
        let vel = eisenhart_velocities(e);
        let amp: Vec<f64> = (0..nx).map(|i| e.phi1[i].hypot(e.phi2[i])).collect();
        let amax = amp.iter().cloned().fold(0.0, f64::max);
        let mut out = [0.0f64; 2];
        for a in 0..2 {
            let phi = e.component(a);
            let fx: Vec<f64> = (0..nx * ns).map(|q| phi[q] * vel.v[a][q]).collect();
            let fs: Vec<f64> = (0..nx * ns).map(|q| phi[q] * vel.u[a][q]).collect();
            let dfx: Vec<f64> = (0..ns)
                .flat_map(|j| fd::derivative(&fx[j * nx..(j + 1) * nx], ax.spacing(), ax.periodic, stencil))
                .collect();
            let dfs = s_derivative(&fs, nx, ns, p);
            for q in 0..nx * ns {
                let i = q % nx;
                if amp[i] <= ACTIVE_LEVEL * amax || (!ax.periodic && (i < 2 || i + 2 >= nx)) {
                    continue;
                }
                let dt_phi = (lifted[n + 1].component(a)[q] - lifted[n - 1].component(a)[q]) / (2.0 * series.dt);
                let r = dt_phi + dfx[q] + dfs[q];
                if r.is_finite() {
                    out[a] = out[a].max(r.abs());
                }
            }
        }
        times.push(e.time);
        residuals.push(out);
    }
    Ok(ResidualSeries { times, residuals })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EisenhartSnapshot {
    pub t: f64,
    pub active: Vec<(usize, usize)>,
    pub qx: Vec<f64>,
    pub q4: Vec<f64>,
    pub dqx_ds0: Vec<f64>,
    pub dq4_ds0: Vec<f64>,
}

/// Paths over the label grid `(x₀, s₀)`. Every s₀-row keeps its own live
/// range of x-labels; per-label arrays hold the live labels row after row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EisenhartBundle {
    pub phase: Phase,
    pub labels_x: Vec<f64>,
    pub labels_s: Vec<f64>,
    /// φ_a0 on the full label grid, `[s₀][x₀]`.
    pub phi0: Vec<f64>,
    /// Live x-label range of each row.
    pub active: Vec<(usize, usize)>,
    pub qx: Vec<f64>,
    pub q4: Vec<f64>,
    /// s₀-column of the Jacobian, carried by its tangent equations.
    pub dqx_ds0: Vec<f64>,
    pub dq4_ds0: Vec<f64>,
    pub time: f64,
    pub status: Status,
    pub history: Vec<EisenhartSnapshot>,
}

/// Start of every row in the flattened arrays, plus the total length.
fn row_bounds(active: &[(usize, usize)]) -> Vec<usize> {
    let mut b = Vec::with_capacity(active.len() + 1);
    b.push(0);
    for (lo, hi) in active {
        b.push(b.last().unwrap() + hi - lo);
    }
    b
}

impl EisenhartBundle {
    pub fn ns(&self) -> usize {
        self.labels_s.len()
    }

    pub fn live(&self) -> usize {
        self.qx.len()
    }

    pub fn shortest_row(&self) -> usize {
        self.active.iter().map(|(lo, hi)| hi - lo).min().unwrap_or(0)
    }

    pub fn label_spacing(&self) -> f64 {
        let n = self.labels_x.len();
        (self.labels_x[n - 1] - self.labels_x[0]) / (n - 1) as f64
    }

    /// Offsets of each row's live labels in the flat arrays.
    pub fn bounds(&self) -> Vec<usize> {
        row_bounds(&self.active)
    }

    fn live_phi0(&self) -> Vec<f64> {
        let n = self.labels_x.len();
        self.active
            .iter()
            .enumerate()
            .flat_map(|(j, (lo, hi))| self.phi0[j * n + lo..j * n + hi].iter().copied())
            .collect()
    }

    /// Max deviation of `q₄ − s₀` from zero.
    pub fn q4_deviation(&self) -> f64 {
        let b = self.bounds();
        (0..self.ns())
            .flat_map(|j| self.q4[b[j]..b[j + 1]].iter().map(move |q| (q - self.labels_s[j]).abs()))
            .fold(0.0, f64::max)
    }

    /// `det ∂(q_x, q₄)/∂(x₀, s₀)` at the live labels.
    pub fn determinant(&self, stencil: Stencil) -> Vec<f64> {
        let bounds = self.bounds();
        let h = self.label_spacing();
        let a = rows_dx(&self.qx, &bounds, h, stencil);
        let c = rows_dx(&self.q4, &bounds, h, stencil);
        (0..a.len()).map(|p| a[p] * self.dq4_ds0[p] - self.dqx_ds0[p] * c[p]).collect()
    }
}

/// x₀-derivative along every s₀-row.
fn rows_dx(y: &[f64], bounds: &[usize], h: f64, stencil: Stencil) -> Vec<f64> {
    bounds
        .windows(2)
        .flat_map(|w| fd::derivative(&y[w[0]..w[1]], h, false, stencil))
        .collect()
}

fn wrap_angle(a: f64) -> f64 {
    a - 2.0 * PI * (a / (2.0 * PI)).round()
}

/// The samples nearest to `s` on either side on the circle, as
/// `(angle, index)` with angles `k(s_j − s)` wrapped so that `l ≤ 0 < r`.
fn bracket(k: f64, positions: impl Iterator<Item = f64>, s: f64) -> ((f64, usize), (f64, usize)) {
    let mut l = (f64::NEG_INFINITY, 0);
    let mut r = (f64::INFINITY, 0);
    let mut lowest = (f64::INFINITY, 0);
    let mut highest = (f64::NEG_INFINITY, 0);
    for (j, sj) in positions.enumerate() {
        let th = wrap_angle(k * (sj - s));
        if th <= 0.0 {
            if th > l.0 {
                l = (th, j);
            }
        } else if th < r.0 {
            r = (th, j);
        }
        if th < lowest.0 {
            lowest = (th, j);
        }
        if th > highest.0 {
            highest = (th, j);
        }
    }
    if l.0 == f64::NEG_INFINITY {
        l = (highest.0 - 2.0 * PI, highest.1);
    }
    if r.0 == f64::INFINITY {
        r = (lowest.0 + 2.0 * PI, lowest.1);
    }
    (l, r)
}

/// Angles closer than this to a row count as lying on it.
const ON_ROW: f64 = 1e-12;

fn sine_blend(l: (f64, f64), r: (f64, f64)) -> f64 {
    if l.0 >= -ON_ROW {
        return l.1;
    }
    (l.1 * r.0.sin() - r.1 * l.0.sin()) / (r.0 - l.0).sin()
}

/// Value at `s` of the first harmonic in `ks` through the two samples whose
/// positions bracket `s` on the circle.
pub fn rotation_interp(k: f64, positions: &[f64], values: &[f64], s: f64) -> f64 {
    let (l, r) = bracket(k, positions.iter().copied(), s);
    sine_blend((l.0, values[l.1]), (r.0, values[r.1]))
}

/// One family's fields at arbitrary `(x, s)`: monotone cubic along each
/// s₀-row in x, then rotation interpolation between the two rows that
/// bracket s at that x.
struct Family {
    k: f64,
    sigma: Vec<MonotoneCubic>,
    values: Vec<Vec<MonotoneCubic>>,
}

impl Family {
    fn new(phase: Phase, qx: &[f64], q4: &[f64], fields: &[&[f64]], bounds: &[usize], active: &[(usize, usize)], k: f64, t: f64) -> Result<Family> {
        let ns = bounds.len() - 1;
        let mut sigma = Vec::with_capacity(ns);
        let mut values = vec![Vec::with_capacity(ns); fields.len()];
        for j in 0..ns {
            let r = bounds[j]..bounds[j + 1];
            let xr = &qx[r.clone()];
            sigma.push(interpolant(phase, xr, &q4[r.clone()], active[j].0, t)?);
            for (m, f) in fields.iter().enumerate() {
                values[m].push(interpolant(phase, xr, &f[r.clone()], active[j].0, t)?);
            }
        }
        Ok(Family { k, sigma, values })
    }

    fn eval_rows(ip: &[MonotoneCubic], order: &[usize], sorted: &[f64]) -> Vec<Vec<f64>> {
        ip.par_iter()
            .map(|c| {
                let v = c.eval_sorted(sorted);
                let mut out = vec![0.0; order.len()];
                for (m, &p) in order.iter().enumerate() {
                    out[p] = v[m];
                }
                out
            })
            .collect()
    }

    /// Bracketing rows of every target, `(angle, row)` pairs.
    fn brackets(&self, xs: &[f64], ss: &[f64]) -> (Vec<((f64, usize), (f64, usize))>, Vec<usize>, Vec<f64>) {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        let sorted: Vec<f64> = order.iter().map(|&p| xs[p]).collect();
        let sig = Self::eval_rows(&self.sigma, &order, &sorted);
        let br = (0..xs.len())
            .into_par_iter()
            .map(|p| bracket(self.k, sig.iter().map(|row| row[p]), ss[p]))
            .collect();
        (br, order, sorted)
    }

    /// Values of every carried field at the targets.
    fn lookup(&self, xs: &[f64], ss: &[f64]) -> Vec<Vec<f64>> {
        let (br, order, sorted) = self.brackets(xs, ss);
        self.values
            .iter()
            .map(|v| {
                let rows = Self::eval_rows(v, &order, &sorted);
                br.iter()
                    .enumerate()
                    .map(|(p, (l, r))| sine_blend((l.0, rows[l.1][p]), (r.0, rows[r.1][p])))
                    .collect()
            })
            .collect()
    }

    /// Whether each target lies within one end spacing of both bracketing rows.
    fn reaches(&self, xs: &[f64], ss: &[f64]) -> Vec<bool> {
        let ext: Vec<(f64, f64)> = self
            .sigma
            .iter()
            .map(|c| {
                let q = c.nodes();
                let n = q.len();
                (2.0 * q[0] - q[1], 2.0 * q[n - 1] - q[n - 2])
            })
            .collect();
        let (br, _, _) = self.brackets(xs, ss);
        br.iter()
            .zip(xs)
            .map(|((l, r), &x)| {
                let inside = |j: usize| x >= ext[j].0 && x <= ext[j].1;
                inside(l.1) && (l.0 >= -ON_ROW || inside(r.1))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EisenhartOptions {
    pub base: PropagationOptions,
    pub s_points: usize,
    /// Rigid shift of every s₀ label.
    pub s_shift: f64,
}

impl Default for EisenhartOptions {
    fn default() -> Self {
        EisenhartOptions {
            base: PropagationOptions {
                n_labels: 256,
                window: (-2.0, 2.0),
                max_time: 0.1,
                ..PropagationOptions::default()
            },
            s_points: DEFAULT_S_POINTS,
            s_shift: 0.0,
        }
    }
}

const ROW_STENCIL: Stencil = Stencil::Second;

/// Own-family quantities at the live labels.
struct Own {
    phi: Vec<f64>,
    dphi_dx0: Vec<f64>,
    a: Vec<f64>,
    c: Vec<f64>,
}

struct Layout<'a> {
    phase: Phase,
    bounds: &'a [usize],
    active: &'a [(usize, usize)],
    phi0: &'a [f64],
}

impl Layout<'_> {
    fn label_index(&self, p: usize) -> usize {
        let j = self.bounds.partition_point(|&b| b <= p) - 1;
        self.active[j].0 + p - self.bounds[j]
    }

    fn own(&self, qx: &[f64], q4: &[f64], b: &[f64], d: &[f64], h: f64, t: f64) -> Result<Own> {
        let a = rows_dx(qx, self.bounds, h, ROW_STENCIL);
        let c = rows_dx(q4, self.bounds, h, ROW_STENCIL);
        let mut phi = Vec::with_capacity(qx.len());
        for p in 0..qx.len() {
            let det = a[p] * d[p] - b[p] * c[p];
            if !(det > 0.0) || !(a[p] > 0.0) {
                return Err(Error::CrossingDetected {
                    phase: self.phase,
                    time: t,
                    label_index: self.label_index(p),
                });
            }
            phi.push(self.phi0[p] / det);
        }
        let dphi_dx0 = rows_dx(&phi, self.bounds, h, ROW_STENCIL);
        Ok(Own { phi, dphi_dx0, a, c })
    }

    fn family(&self, qx: &[f64], q4: &[f64], fields: &[&[f64]], k: f64, t: f64) -> Result<Family> {
        Family::new(self.phase, qx, q4, fields, self.bounds, self.active, k, t)
    }
}

struct System<'a> {
    layout: [Layout<'a>; 2],
    h: f64,
    eps: f64,
    potential: &'a Potential,
    units: UnitSystem,
}

const PHASES: [Phase; 2] = [Phase::One, Phase::Two];

impl System<'_> {
    /// `y = [q_x, q₄, ∂q_x/∂s₀, ∂q₄/∂s₀]` for phase 1, then phase 2.
    fn rhs(&self, y: &[Vec<f64>], t: f64) -> Result<Vec<Vec<f64>>> {
        let k = self.units.half_ratio();
        let kp = self.units.mass / self.units.hbar;
        let m = self.units.mass;
        let own: Vec<Own> = (0..2)
            .map(|a| {
                let o = 4 * a;
                self.layout[a].own(&y[o], &y[o + 1], &y[o + 2], &y[o + 3], self.h, t)
            })
            .collect::<Result<_>>()?;
        let fam = |a: usize, f: &[f64]| self.layout[a].family(&y[4 * a], &y[4 * a + 1], &[f], kp, t);
        let phi_fam = [fam(0, &own[0].phi)?, fam(1, &own[1].phi)?];
        let mut foreign_phi = Vec::with_capacity(2);
        for a in 0..2 {
            let vals = phi_fam[1 - a].lookup(&y[4 * a], &y[4 * a + 1]).remove(0);
            for (p, x) in y[4 * a].iter().enumerate() {
                for (ph, val) in [(PHASES[a], own[a].phi[p]), (PHASES[1 - a], vals[p])] {
                    if !(val.abs() >= self.eps) {
                        return Err(Error::SingularDensity {
                            phase: ph,
                            time: t,
                            position: *x,
                            value: val.abs(),
                        });
                    }
                }
            }
            foreign_phi.push(vals);
        }
        // ∂ₓφ_a from the row derivative, with ∂ₛφ₁ = −(m/ħ)φ₂ and ∂ₛφ₂ = (m/ħ)φ₁.
        let g: Vec<Vec<f64>> = (0..2)
            .map(|a| {
                let sgn = if a == 0 { -1.0 } else { 1.0 };
                let o = &own[a];
                (0..o.phi.len())
                    .map(|p| (o.dphi_dx0[p] - sgn * kp * foreign_phi[a][p] * o.c[p]) / o.a[p])
                    .collect()
            })
            .collect();
        let g_fam = [fam(0, &g[0])?, fam(1, &g[1])?];
        let mut out = Vec::with_capacity(8);
        for a in 0..2 {
            let o = 4 * a;
            let sign = if a == 0 { 1.0 } else { -1.0 };
            let gf = g_fam[1 - a].lookup(&y[o], &y[o + 1]).remove(0);
            let (phi, fphi) = (&own[a].phi, &foreign_phi[a]);
            let n = phi.len();
            let v: Vec<f64> = (0..n).map(|p| sign * k * gf[p] / phi[p]).collect();
            let ds_v: Vec<f64> = (0..n)
                .map(|p| kp * (k * g[a][p] / phi[p] + sign * v[p] * fphi[p] / phi[p]))
                .collect();
            let dv_dx0 = rows_dx(&v, self.layout[a].bounds, self.h, ROW_STENCIL);
            let (b, d) = (&y[o + 2], &y[o + 3]);
            let mut db = Vec::with_capacity(n);
            let mut dd = Vec::with_capacity(n);
            let mut u = Vec::with_capacity(n);
            for p in 0..n {
                let x = y[o][p];
                let dx_v = (dv_dx0[p] - ds_v[p] * own[a].c[p]) / own[a].a[p];
                db.push(dx_v * b[p] + ds_v[p] * d[p]);
                dd.push(self.potential.gradient(x, t, &self.units) / m * b[p]);
                u.push(self.potential.value(x, t, &self.units) / m);
            }
            out.extend([v, u, db, dd]);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct EisenhartPropagation {
    pub field: RealPairField,
    pub spread: f64,
    pub lifted: EisenhartField,
    pub bundles: [EisenhartBundle; 2],
    pub diagnostics: Diagnostics,
}

/// Label bundles from the lift of `f0`; both charges must clear the floor.
pub fn init_eisenhart_bundles(f0: &RealPairField, opts: &EisenhartOptions) -> Result<[EisenhartBundle; 2]> {
    opts.base.validate()?;
    if opts.s_points < MIN_AXIS_POINTS {
        return config(format!("the s axis needs at least {MIN_AXIS_POINTS} points"));
    }
    if !opts.s_shift.is_finite() {
        return config("s shift must be finite");
    }
    let (lo, hi) = opts.base.window;
    let n = opts.base.n_labels;
    let ns = opts.s_points;
    let ds = s_period(&f0.units) / ns as f64;
    let labels_x: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let labels_s: Vec<f64> = (0..ns).map(|j| opts.s_shift + (j as f64 + 0.5) * ds).collect();
    let sampler = f0.sampler()?;
    let mut psi = Vec::with_capacity(n);
    for &x in &labels_x {
        psi.push(sampler.sample(x).ok_or_else(|| Error::OutOfDomain {
            time: 0.0,
            position: x,
            detail: "label window extends beyond the field grid".into(),
        })?);
    }
    let k = f0.units.mass / f0.units.hbar;
    let mut phi = [Vec::with_capacity(n * ns), Vec::with_capacity(n * ns)];
    for &s in &labels_s {
        let (sn, cs) = (k * s).sin_cos();
        for &(a, b) in &psi {
            phi[0].push(cs * a - sn * b);
            phi[1].push(sn * a + cs * b);
        }
    }
    let qx: Vec<f64> = labels_s.iter().flat_map(|_| labels_x.iter().copied()).collect();
    check_floor(&qx, [&phi[0], &phi[1]], opts.base.floor, 0.0)?;
    let q4: Vec<f64> = labels_s.iter().flat_map(|s| std::iter::repeat(*s).take(n)).collect();
    let make = |phase: Phase, phi0: Vec<f64>| EisenhartBundle {
        phase,
        labels_x: labels_x.clone(),
        labels_s: labels_s.clone(),
        phi0,
        active: vec![(0, n); ns],
        qx: qx.clone(),
        q4: q4.clone(),
        dqx_ds0: vec![0.0; n * ns],
        dq4_ds0: vec![1.0; n * ns],
        time: 0.0,
        status: Status::Ok,
        history: Vec::new(),
    };
    let [p1, p2] = phi;
    Ok([make(Phase::One, p1), make(Phase::Two, p2)])
}

/// Retires row-end labels that have left the reach of the two rows of the
/// other family bracketing them in s, until both families are mutually
/// covered.
fn trim_e(b: &mut [EisenhartBundle; 2], kp: f64) -> Result<()> {
    loop {
        let mut changed = false;
        for a in 0..2 {
            let o = &b[1 - a];
            let fam = Family::new(o.phase, &o.qx, &o.q4, &[], &o.bounds(), &o.active, kp, o.time)?;
            let ok = fam.reaches(&b[a].qx, &b[a].q4);
            let own = &mut b[a];
            let bounds = own.bounds();
            let mut keep = Vec::with_capacity(own.live());
            let mut active = Vec::with_capacity(own.ns());
            for j in 0..own.ns() {
                let row = &ok[bounds[j]..bounds[j + 1]];
                let n = row.len();
                let first = row.iter().position(|&v| v).unwrap_or(n);
                let last = row.iter().rposition(|&v| v).map_or(first, |i| i + 1);
                if first > 0 || last < n {
                    changed = true;
                }
                keep.extend(bounds[j] + first..bounds[j] + last);
                let s = own.active[j].0;
                active.push((s + first, s + last));
            }
            if changed {
                let pick = |v: &[f64]| -> Vec<f64> { keep.iter().map(|&p| v[p]).collect() };
                own.qx = pick(&own.qx);
                own.q4 = pick(&own.q4);
                own.dqx_ds0 = pick(&own.dqx_ds0);
                own.dq4_ds0 = pick(&own.dq4_ds0);
                own.active = active;
            }
            if own.shortest_row() < MIN_AXIS_POINTS {
                return Ok(());
            }
        }
        if !changed {
            return Ok(());
        }
    }
}

/// `max |φ_a det' − φ_a0| / max|φ_a0|` with the x₀-column of det'
/// re-measured from positions against the label coordinates.
fn drift_e(b: &EisenhartBundle) -> f64 {
    if b.shortest_row() < 3 {
        return f64::NAN;
    }
    let phi0 = b.live_phi0();
    let det = b.determinant(Stencil::Second);
    let bounds = b.bounds();
    let rows = |y: &[f64]| -> Vec<f64> {
        (0..b.ns())
            .flat_map(|j| {
                let (lo, hi) = b.active[j];
                remeasured_jacobian(&y[bounds[j]..bounds[j + 1]], &b.labels_x[lo..hi])
            })
            .collect()
    };
    let (a, c) = (rows(&b.qx), rows(&b.q4));
    let scale = phi0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (0..phi0.len())
        .map(|p| (phi0[p] / det[p] * (a[p] * b.dq4_ds0[p] - b.dqx_ds0[p] * c[p]) - phi0[p]).abs())
        .fold(0.0, f64::max)
        / scale
}

fn jacobian_gap_e(b: &EisenhartBundle) -> f64 {
    if b.shortest_row() < 6 {
        return f64::NAN;
    }
    let d2 = b.determinant(Stencil::Second);
    let d4 = b.determinant(Stencil::Fourth);
    let phi0 = b.live_phi0();
    let scale = phi0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    phi0.iter()
        .zip(d2.iter().zip(&d4))
        .map(|(p, (a, c))| (p / a * c - p).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Lifts `f0`, advances both label families to `opts.base.max_time` with
/// adaptive RK4, assembles φ on the (x, s) grid and extracts ψ.
pub fn propagate_eisenhart(f0: &RealPairField, potential: &Potential, opts: &EisenhartOptions) -> Result<EisenhartPropagation> {
    let mut bundles = init_eisenhart_bundles(f0, opts)?;
    let base = &opts.base;
    let h = bundles[0].label_spacing();
    let kp = f0.units.mass / f0.units.hbar;
    let scale = bundles.iter().flat_map(|b| b.phi0.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = base.floor * scale;
    let mut diag = Diagnostics::default();
    let record = |b: &mut [EisenhartBundle; 2]| {
        for x in b.iter_mut() {
            x.history.push(EisenhartSnapshot {
                t: x.time,
                active: x.active.clone(),
                qx: x.qx.clone(),
                q4: x.q4.clone(),
                dqx_ds0: x.dqx_ds0.clone(),
                dq4_ds0: x.dq4_ds0.clone(),
            });
        }
    };
    if base.record_history {
        record(&mut bundles);
    }
    let mut t = 0.0;
    let mut dt = base.dt_init;
    let mut last_error = None;
    while t < base.max_time * (1.0 - 1e-12) {
        if diag.steps.len() + diag.rejected >= base.max_steps {
            let e = Error::Config(format!("step budget of {} exhausted", base.max_steps));
            halt_e(&mut bundles, &mut diag, &e, t);
            break;
        }
        dt = dt.min(base.max_time - t);
        let phi0 = [bundles[0].live_phi0(), bundles[1].live_phi0()];
        let bounds = [bundles[0].bounds(), bundles[1].bounds()];
        let sys = System {
            layout: [0, 1].map(|a| Layout {
                phase: PHASES[a],
                bounds: &bounds[a],
                active: &bundles[a].active,
                phi0: &phi0[a],
            }),
            h,
            eps,
            potential,
            units: f0.units,
        };
        let rhs = |y: &[Vec<f64>], s: f64| sys.rhs(y, s);
        let check = |y: &[Vec<f64>], s: f64| -> Result<()> {
            for a in 0..2 {
                for w in bounds[a].windows(2) {
                    let r = &y[4 * a][w[0]..w[1]];
                    if let Some(k) = r.windows(2).position(|v| !(v[1] > v[0])) {
                        return Err(Error::CrossingDetected {
                            phase: PHASES[a],
                            time: s,
                            label_index: sys.layout[a].label_index(w[0] + k),
                        });
                    }
                }
            }
            Ok(())
        };
        let y0: Vec<Vec<f64>> = bundles
            .iter()
            .flat_map(|b| [b.qx.clone(), b.q4.clone(), b.dqx_ds0.clone(), b.dq4_ds0.clone()])
            .collect();
        match attempt_step(&rhs, &check, &y0, t, dt, base.tolerance) {
            Attempt::Accepted { y, err } => {
                t += dt;
                let mut it = y.into_iter();
                for b in bundles.iter_mut() {
                    b.qx = it.next().unwrap();
                    b.q4 = it.next().unwrap();
                    b.dqx_ds0 = it.next().unwrap();
                    b.dq4_ds0 = it.next().unwrap();
                    b.time = t;
                }
                if let Err(e) = trim_e(&mut bundles, kp) {
                    halt_e(&mut bundles, &mut diag, &e, t);
                    break;
                }
                if let Some(b) = bundles.iter().find(|b| b.shortest_row() < MIN_AXIS_POINTS) {
                    let e = Error::OutOfDomain {
                        time: t,
                        position: b.qx.first().copied().unwrap_or(f64::NAN),
                        detail: format!("a phase-{} row has fewer than {MIN_AXIS_POINTS} labels inside the other family's reach", b.phase),
                    };
                    halt_e(&mut bundles, &mut diag, &e, t);
                    break;
                }
                diag.steps.push(StepRecord {
                    t,
                    dt,
                    error: err,
                    drift: drift_e(&bundles[0]).max(drift_e(&bundles[1])),
                    jacobian_gap: jacobian_gap_e(&bundles[0]).max(jacobian_gap_e(&bundles[1])),
                    active: [bundles[0].live(), bundles[1].live()],
                });
                if base.record_history {
                    record(&mut bundles);
                }
                dt *= grow_factor(base.tolerance, err);
                last_error = None;
            }
            Attempt::TooLarge { err } => {
                diag.rejected += 1;
                dt *= shrink_factor(base.tolerance, err);
            }
            Attempt::Failed(e) => {
                diag.rejected += 1;
                dt *= 0.5;
                last_error = Some(e);
            }
        }
        if dt < base.dt_min {
            let e = last_error.take().unwrap_or_else(|| Error::Config("step size fell below dt_min".into()));
            halt_e(&mut bundles, &mut diag, &e, t);
            break;
        }
    }
    let lifted = assemble_lifted(&bundles, &f0.grid, f0.units, potential, t)?;
    let ex = extract_with(&lifted, base.tolerance)?;
    Ok(EisenhartPropagation {
        field: ex.field,
        spread: ex.spread,
        lifted,
        bundles,
        diagnostics: diag,
    })
}

fn halt_e(b: &mut [EisenhartBundle; 2], diag: &mut Diagnostics, e: &Error, t: f64) {
    let s = Status::halted(e, t);
    for x in b.iter_mut() {
        x.status = s.clone();
    }
    diag.halt = Some(s);
}

/// Least number of labels at each row end left out of the assembly region.
pub const ASSEMBLY_MARGIN: usize = 8;

/// Row-end margin: `ASSEMBLY_MARGIN` labels or a sixteenth of the row
/// labels, whichever is larger, so the excluded edge layer keeps its width
/// as the labels are refined.
pub fn assembly_margin(n_labels: usize) -> usize {
    ASSEMBLY_MARGIN.max(n_labels.div_ceil(16))
}

/// φ on `(x_i, s_k)` with x from `grid` restricted to the region covered by
/// every row of both families (less [`assembly_margin`] labels at each row
/// end), and s at the label rows.
fn assemble_lifted(b: &[EisenhartBundle; 2], grid: &SpatialGrid, units: UnitSystem, potential: &Potential, t: f64) -> Result<EisenhartField> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let margin = assembly_margin(b[0].labels_x.len());
    for x in b {
        for w in x.bounds().windows(2) {
            let m = margin.min((w[1] - w[0] - 1) / 2);
            lo = lo.max(x.qx[w[0] + m]);
            hi = hi.min(x.qx[w[1] - 1 - m]);
        }
    }
    let out_grid = grid.restrict(lo, hi)?;
    let xs = out_grid.axis(0).points();
    let nx = xs.len();
    let s = b[0].labels_s.clone();
    let ns = s.len();
    let tx: Vec<f64> = (0..ns).flat_map(|_| xs.iter().copied()).collect();
    let ts: Vec<f64> = s.iter().flat_map(|v| std::iter::repeat(*v).take(nx)).collect();
    let kp = units.mass / units.hbar;
    let mut comps = Vec::with_capacity(2);
    for x in b {
        let bounds = x.bounds();
        let phi0 = x.live_phi0();
        let layout = Layout {
            phase: x.phase,
            bounds: &bounds,
            active: &x.active,
            phi0: &phi0,
        };
        let own = layout.own(&x.qx, &x.q4, &x.dqx_ds0, &x.dq4_ds0, x.label_spacing(), t)?;
        let fam = layout.family(&x.qx, &x.q4, &[&own.phi], kp, t)?;
        comps.push(fam.lookup(&tx, &ts).remove(0));
    }
    let phi2 = comps.pop().unwrap();
    let phi1 = comps.pop().unwrap();
    Ok(EisenhartField {
        grid: out_grid,
        s,
        units,
        phi1,
        phi2,
        potential: potential.clone(),
        time: t,
    })
}

/// Trajectory CSV with `s0` and `q4` columns.
pub fn write_eisenhart_csv<W: Write>(out: &mut W, bundles: &[EisenhartBundle; 2]) -> Result<()> {
    writeln!(out, "phase,label_index,q0,t,q,J,psi_recon,s0,q4")?;
    for b in bundles {
        let current = EisenhartSnapshot {
            t: b.time,
            active: b.active.clone(),
            qx: b.qx.clone(),
            q4: b.q4.clone(),
            dqx_ds0: b.dqx_ds0.clone(),
            dq4_ds0: b.dq4_ds0.clone(),
        };
        let snaps: Vec<&EisenhartSnapshot> = if b.history.is_empty() { vec![&current] } else { b.history.iter().collect() };
        let n = b.labels_x.len();
        let h = b.label_spacing();
        for s in snaps {
            let bounds = row_bounds(&s.active);
            let a = rows_dx(&s.qx, &bounds, h, Stencil::Second);
            let c = rows_dx(&s.q4, &bounds, h, Stencil::Second);
            for j in 0..b.ns() {
                for p in bounds[j]..bounds[j + 1] {
                    let i = s.active[j].0 + p - bounds[j];
                    let det = a[p] * s.dq4_ds0[p] - s.dqx_ds0[p] * c[p];
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        b.phase,
                        i,
                        fmt_num(b.labels_x[i]),
                        fmt_num(s.t),
                        fmt_num(s.qx[p]),
                        fmt_num(det),
                        fmt_num(b.phi0[j * n + i] / det),
                        fmt_num(b.labels_s[j]),
                        fmt_num(s.q4[p])
                    )?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_field(p1: f64, p2: f64) -> RealPairField {
        let g = SpatialGrid::line(0.0, 1.0, 8, false).unwrap();
        RealPairField::from_samples(g, UnitSystem::default(), vec![p1; 8], vec![p2; 8], 0.0).unwrap()
    }

    #[test]
    fn lift_rotates_by_s() {
        let e = lift(&point_field(1.0, 0.0), 16).unwrap();
        assert_eq!((e.phi1[0], e.phi2[0]), (1.0, 0.0));
        // s_4 = π/2
        let p = 4 * 8;
        assert!(e.phi1[p].abs() < 1e-15 && (e.phi2[p] - 1.0).abs() < 1e-15);
        assert!(e.constraint_residual() < 1e-10);
        assert!(lift(&point_field(1.0, 0.0), 4).is_err());
    }

    #[test]
    fn extract_inverts_lift_and_flags_spurious_s_dependence() {
        let f = point_field(0.3, -0.8);
        let mut e = lift(&f, 16).unwrap();
        let back = extract(&e).unwrap();
        assert!(back.spread < 1e-14);
        assert!(back.field.psi1.iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(back.field.psi2.iter().all(|v| (v + 0.8).abs() < 1e-12));
        for j in 0..16 {
            let w = 1.0 + 0.1 * (j as f64).sin();
            for i in 0..8 {
                e.phi1[j * 8 + i] *= w;
                e.phi2[j * 8 + i] *= w;
            }
        }
        assert!(matches!(extract(&e), Err(Error::ConstraintViolation { .. })));
    }

    #[test]
    fn rotation_interpolation_is_exact_on_first_harmonics() {
        let pos = [0.3, 1.1, 2.0, 2.9, 4.4, 5.0, 6.0];
        let f = |s: f64| 0.7 * s.cos() - 1.3 * s.sin();
        let vals: Vec<f64> = pos.iter().map(|s| f(*s)).collect();
        for s in [0.0, 0.3, 1.5, 3.2, 6.1, -2.0, 9.0] {
            assert!((rotation_interp(1.0, &pos, &vals, s) - f(s)).abs() < 1e-13);
        }
        assert_eq!(rotation_interp(1.0, &pos, &vals, 2.0), vals[2]);
    }
}
