//! Self-contained propagation of the two coupled trajectory families in one
//! spatial dimension.
//!
//! Each phase carries its initial charge ψ_a0 along its paths; the current
//! value is ψ_a0/J_a with J_a = ∂q_a/∂q_a0. A phase-1 particle moves with
//! `(ħ/2m) ∂ₓψ₂ / ψ₁`, where ∂ₓψ₂ comes from the phase-2 family evaluated at
//! the particle position by monotone interpolation over the phase-2 paths.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Error, Phase, Result};
use crate::fd::{self, Stencil};
use crate::fields::RealPairField;
use crate::grid::{SpatialGrid, UnitSystem, MIN_AXIS_POINTS};
use crate::interp::MonotoneCubic;

/// Relative floor on |ψ_a| used during propagation.
pub const PROPAGATION_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    /// Half-open range of live labels.
    pub active: (usize, usize),
    /// Positions of the live labels.
    pub positions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Ok,
    Halted {
        kind: String,
        reason: String,
        time: f64,
        position: Option<f64>,
        label_index: Option<usize>,
    },
}

impl Status {
    pub fn halted(err: &Error, time: f64) -> Status {
        let (kind, position, label_index) = match err {
            Error::SingularDensity { position, .. } => ("singular_density", Some(*position), None),
            Error::CrossingDetected { label_index, .. } => ("crossing_detected", None, Some(*label_index)),
            Error::OutOfDomain { position, .. } => ("out_of_domain", Some(*position), None),
            Error::ConstraintViolation { .. } => ("constraint_violation", None, None),
            Error::BranchAmbiguity { .. } => ("branch_ambiguity", None, None),
            Error::Config(_) => ("config", None, None),
            Error::Io(_) => ("io", None, None),
        };
        Status::Halted {
            kind: kind.to_string(),
            reason: err.to_string(),
            time,
            position,
            label_index,
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }
}

/// One family of trajectories `q(q₀, t)` with its carried charge.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryBundle {
    pub phase: Phase,
    /// Uniform label grid q₀.
    pub labels: Vec<f64>,
    /// Current positions of the live labels `active.0..active.1`.
    pub positions: Vec<f64>,
    /// ψ_a0 at every label.
    pub psi0: Vec<f64>,
    pub active: (usize, usize),
    pub time: f64,
    pub status: Status,
    pub history: Vec<Snapshot>,
}

impl TrajectoryBundle {
    pub fn new(phase: Phase, labels: Vec<f64>, psi0: Vec<f64>) -> Result<TrajectoryBundle> {
        if labels.len() < MIN_AXIS_POINTS || labels.len() != psi0.len() {
            return config(format!("a bundle needs at least {MIN_AXIS_POINTS} labels with matching charges"));
        }
        let n = labels.len();
        Ok(TrajectoryBundle {
            phase,
            positions: labels.clone(),
            labels,
            psi0,
            active: (0, n),
            time: 0.0,
            status: Status::Ok,
            history: Vec::new(),
        })
    }

    pub fn label_spacing(&self) -> f64 {
        (self.labels[self.labels.len() - 1] - self.labels[0]) / (self.labels.len() - 1) as f64
    }

    pub fn active_len(&self) -> usize {
        self.active.1 - self.active.0
    }

    pub fn active_labels(&self) -> &[f64] {
        &self.labels[self.active.0..self.active.1]
    }

    pub fn active_psi0(&self) -> &[f64] {
        &self.psi0[self.active.0..self.active.1]
    }

    pub fn range(&self) -> (f64, f64) {
        (self.positions[0], self.positions[self.positions.len() - 1])
    }

    /// Overwrites positions (live labels only); used to build bundles from
    /// externally traced or synthetic paths.
    pub fn with_positions(mut self, positions: Vec<f64>, time: f64) -> Result<TrajectoryBundle> {
        if positions.len() != self.active_len() {
            return config("position count does not match the live labels");
        }
        self.positions = positions;
        self.time = time;
        Ok(self)
    }
}

/// `∂q/∂q₀` by central differences (one-sided at the end labels).
pub fn jacobian(b: &TrajectoryBundle) -> Result<Vec<f64>> {
    jacobian_with(b, Stencil::Second)
}

pub fn jacobian_with(b: &TrajectoryBundle, stencil: Stencil) -> Result<Vec<f64>> {
    let j = fd::derivative(&b.positions, b.label_spacing(), false, stencil);
    if let Some(k) = j.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::CrossingDetected {
            phase: b.phase,
            time: b.time,
            label_index: b.active.0 + k,
        });
    }
    Ok(j)
}

/// `ψ_a(q₀, t) = ψ_a0(q₀)/J(q₀, t)` on the live labels.
pub fn reconstruct_density(b: &TrajectoryBundle) -> Result<Vec<f64>> {
    let j = jacobian(b)?;
    Ok(b.active_psi0().iter().zip(&j).map(|(p, j)| p / j).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropagationOptions {
    pub dt_init: f64,
    pub dt_min: f64,
    /// Local error target for positions per accepted step.
    pub tolerance: f64,
    /// Relative floor on |ψ_a|.
    pub floor: f64,
    pub max_time: f64,
    pub n_labels: usize,
    /// Label window `[lo, hi]`.
    pub window: (f64, f64),
    pub max_steps: usize,
    pub record_history: bool,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions {
            dt_init: 1e-3,
            dt_min: 1e-9,
            tolerance: 1e-6,
            floor: PROPAGATION_FLOOR,
            max_time: 0.2,
            n_labels: 512,
            window: (-10.0, 10.0),
            max_steps: 1_000_000,
            record_history: true,
        }
    }
}

impl PropagationOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                config(format!("{name} must be positive, got {v}"))
            }
        };
        pos("dt_init", self.dt_init)?;
        pos("dt_min", self.dt_min)?;
        pos("tolerance", self.tolerance)?;
        pos("floor", self.floor)?;
        pos("max_time", self.max_time)?;
        if self.dt_min > self.dt_init {
            return config("dt_min must not exceed dt_init");
        }
        if self.n_labels < MIN_AXIS_POINTS {
            return config(format!("need at least {MIN_AXIS_POINTS} labels"));
        }
        let (lo, hi) = self.window;
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return config(format!("label window [{lo}, {hi}] is empty"));
        }
        Ok(())
    }
}

/// Uniform labels over the window with ψ_a0 sampled from `f0`.
pub fn init_bundles(f0: &RealPairField, opts: &PropagationOptions) -> Result<(TrajectoryBundle, TrajectoryBundle)> {
    opts.validate()?;
    let (lo, hi) = opts.window;
    let n = opts.n_labels;
    let labels: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let sampler = f0.sampler()?;
    let mut p1 = Vec::with_capacity(n);
    let mut p2 = Vec::with_capacity(n);
    for &x in &labels {
        let (a, b) = sampler.sample(x).ok_or_else(|| Error::OutOfDomain {
            time: 0.0,
            position: x,
            detail: "label window extends beyond the field grid".into(),
        })?;
        p1.push(a);
        p2.push(b);
    }
    check_floor(&labels, [&p1, &p2], opts.floor, 0.0)?;
    Ok((
        TrajectoryBundle::new(Phase::One, labels.clone(), p1)?,
        TrajectoryBundle::new(Phase::Two, labels, p2)?,
    ))
}

/// Both components must exceed `floor · max(|ψ₁|, |ψ₂|)` at every label.
pub(crate) fn check_floor(xs: &[f64], comps: [&[f64]; 2], floor: f64, time: f64) -> Result<f64> {
    let scale = comps.iter().flat_map(|c| c.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = floor * scale;
    for (a, c) in comps.iter().enumerate() {
        if let Some(i) = c.iter().position(|v| !(v.abs() >= eps) || *v == 0.0) {
            return Err(Error::SingularDensity {
                phase: if a == 0 { Phase::One } else { Phase::Two },
                time,
                position: xs[i],
                value: c[i].abs(),
            });
        }
    }
    Ok(eps)
}

/// Per-phase quantities derived from positions: J, ψ = ψ₀/J and
/// ∂ₓψ = (∂ψ/∂q₀)/J.
pub(crate) struct Derived {
    pub psi: Vec<f64>,
    pub dpsi: Vec<f64>,
}

pub(crate) fn derive(phase: Phase, q: &[f64], psi0: &[f64], h: f64, offset: usize, t: f64) -> Result<Derived> {
    let j = fd::derivative(q, h, false, Stencil::Second);
    if let Some(k) = j.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::CrossingDetected {
            phase,
            time: t,
            label_index: offset + k,
        });
    }
    let psi: Vec<f64> = psi0.iter().zip(&j).map(|(p, j)| p / j).collect();
    let dq0 = fd::derivative(&psi, h, false, Stencil::Second);
    let dpsi = dq0.iter().zip(&j).map(|(d, j)| d / j).collect();
    Ok(Derived { psi, dpsi })
}

pub(crate) fn interpolant(phase: Phase, xs: &[f64], ys: &[f64], offset: usize, t: f64) -> Result<MonotoneCubic> {
    MonotoneCubic::new(xs, ys).ok_or_else(|| Error::CrossingDetected {
        phase,
        time: t,
        label_index: offset + xs.windows(2).position(|w| !(w[1] > w[0])).unwrap_or(0),
    })
}

/// The coupled right-hand side for both phases.
struct TwoPhase<'a> {
    psi0: [&'a [f64]; 2],
    h: f64,
    offsets: [usize; 2],
    k: f64,
    eps: f64,
}

impl TwoPhase<'_> {
    fn rhs(&self, y: &[Vec<f64>], t: f64) -> Result<Vec<Vec<f64>>> {
        let phases = [Phase::One, Phase::Two];
        let d: Vec<Derived> = (0..2)
            .map(|a| derive(phases[a], &y[a], self.psi0[a], self.h, self.offsets[a], t))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(2);
        for a in 0..2 {
            let b = 1 - a;
            let fpsi = interpolant(phases[b], &y[b], &d[b].psi, self.offsets[b], t)?;
            let fgrad = interpolant(phases[b], &y[b], &d[b].dpsi, self.offsets[b], t)?;
            let foreign_psi = fpsi.eval_sorted(&y[a]);
            let foreign_grad = fgrad.eval_sorted(&y[a]);
            let sign = if a == 0 { 1.0 } else { -1.0 };
            let own = &d[a].psi;
            let v: Vec<f64> = (0..y[a].len())
                .into_par_iter()
                .map(|i| sign * self.k * foreign_grad[i] / own[i])
                .collect();
            for i in 0..y[a].len() {
                for (ph, val) in [(phases[a], own[i]), (phases[b], foreign_psi[i])] {
                    if !(val.abs() >= self.eps) {
                        return Err(Error::SingularDensity {
                            phase: ph,
                            time: t,
                            position: y[a][i],
                            value: val.abs(),
                        });
                    }
                }
            }
            out.push(v);
        }
        Ok(out)
    }
}

pub(crate) fn rk4<F>(rhs: &F, y: &[Vec<f64>], t: f64, dt: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Vec<f64>], f64) -> Result<Vec<Vec<f64>>>,
{
    let axpy = |base: &[Vec<f64>], k: &[Vec<f64>], s: f64| -> Vec<Vec<f64>> {
        base.iter()
            .zip(k)
            .map(|(b, k)| b.iter().zip(k).map(|(x, d)| x + s * d).collect())
            .collect()
    };
    let k1 = rhs(y, t)?;
    let k2 = rhs(&axpy(y, &k1, 0.5 * dt), t + 0.5 * dt)?;
    let k3 = rhs(&axpy(y, &k2, 0.5 * dt), t + 0.5 * dt)?;
    let k4 = rhs(&axpy(y, &k3, dt), t + dt)?;
    Ok(y.iter()
        .enumerate()
        .map(|(c, yc)| {
            (0..yc.len())
                .map(|i| yc[i] + dt / 6.0 * (k1[c][i] + 2.0 * k2[c][i] + 2.0 * k3[c][i] + k4[c][i]))
                .collect()
        })
        .collect())
}

/// Outcome of one step-doubling attempt.
pub(crate) enum Attempt {
    Accepted { y: Vec<Vec<f64>>, err: f64 },
    TooLarge { err: f64 },
    Failed(Error),
}

pub(crate) fn attempt_step<F, C>(rhs: &F, check: &C, y: &[Vec<f64>], t: f64, dt: f64, tol: f64) -> Attempt
where
    F: Fn(&[Vec<f64>], f64) -> Result<Vec<Vec<f64>>>,
    C: Fn(&[Vec<f64>], f64) -> Result<()>,
{
    let run = || -> Result<(Vec<Vec<f64>>, f64)> {
        let full = rk4(rhs, y, t, dt)?;
        let half = rk4(rhs, y, t, 0.5 * dt)?;
        let half = rk4(rhs, &half, t + 0.5 * dt, 0.5 * dt)?;
        check(&half, t + dt)?;
        let err = full
            .iter()
            .flatten()
            .zip(half.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / 15.0;
        Ok((half, err))
    };
    match run() {
        Ok((y, err)) if err.is_finite() && err <= tol => Attempt::Accepted { y, err },
        Ok((_, err)) if err.is_finite() => Attempt::TooLarge { err },
        Ok(_) => Attempt::TooLarge { err: f64::INFINITY },
        Err(e) => Attempt::Failed(e),
    }
}

pub(crate) fn grow_factor(tol: f64, err: f64) -> f64 {
    if err == 0.0 {
        2.0
    } else {
        (0.9 * (tol / err).powf(0.2)).min(2.0)
    }
}

pub(crate) fn shrink_factor(tol: f64, err: f64) -> f64 {
    if err.is_finite() {
        (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.9)
    } else {
        0.5
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub error: f64,
    /// `max_a max |ψ_a J'_a − ψ_a0| / max|ψ_a0|` with J' re-measured from positions.
    pub drift: f64,
    /// Fourth- against second-order Jacobian, a resolution indicator.
    pub jacobian_gap: f64,
    pub active: [usize; 2],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub steps: Vec<StepRecord>,
    pub rejected: usize,
    pub halt: Option<Status>,
}

impl Diagnostics {
    pub fn max_drift(&self) -> f64 {
        self.steps.iter().map(|s| s.drift).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        let steps: Vec<_> = self
            .steps
            .iter()
            .map(|s| {
                serde_json::json!({
                    "t": fmt_num(s.t),
                    "dt": fmt_num(s.dt),
                    "error": fmt_num(s.error),
                    "drift": fmt_num(s.drift),
                    "jacobian_gap": fmt_num(s.jacobian_gap),
                    "active": s.active,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "drift": self.steps.iter().map(|s| fmt_num(s.drift)).collect::<Vec<_>>(),
            "dt": self.steps.iter().map(|s| fmt_num(s.dt)).collect::<Vec<_>>(),
            "steps": steps,
            "rejected": self.rejected,
            "halt": self.halt,
        });
        serde_json::to_string_pretty(&doc).expect("diagnostics serialise")
    }
}

/// Scientific notation with 12 significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.11e}")
    }
}

/// Conservation drift `max |ψ_a J' − ψ_a0| / max|ψ_a0|`, with ψ_a from
/// [`reconstruct_density`] and J' re-measured from positions against the
/// label coordinates.
pub fn drift(b: &TrajectoryBundle) -> f64 {
    let Ok(psi) = reconstruct_density(b) else {
        return f64::NAN;
    };
    let j = remeasured_jacobian(&b.positions, b.active_labels());
    let p0 = b.active_psi0();
    let scale = p0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    p0.iter()
        .zip(psi.iter().zip(&j))
        .map(|(p, (r, j))| (r * j - p).abs())
        .fold(0.0, f64::max)
        / scale
}

pub(crate) fn remeasured_jacobian(q: &[f64], labels: &[f64]) -> Vec<f64> {
    let n = q.len();
    (0..n)
        .map(|i| match i {
            0 => (4.0 * q[1] - 3.0 * q[0] - q[2]) / (labels[2] - labels[0]),
            _ if i == n - 1 => (3.0 * q[n - 1] - 4.0 * q[n - 2] + q[n - 3]) / (labels[n - 1] - labels[n - 3]),
            _ => (q[i + 1] - q[i - 1]) / (labels[i + 1] - labels[i - 1]),
        })
        .collect()
}

/// Truncation estimate of the label-grid Jacobian: the charge rebuilt with a
/// fourth-order J against the second-order one the propagation divides by.
pub fn jacobian_gap(b: &TrajectoryBundle) -> f64 {
    let h = b.label_spacing();
    if b.positions.len() < 6 {
        return f64::NAN;
    }
    let j2 = fd::derivative(&b.positions, h, false, Stencil::Second);
    let j4 = fd::derivative(&b.positions, h, false, Stencil::Fourth);
    let p0 = b.active_psi0();
    let scale = p0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    p0.iter()
        .zip(j2.iter().zip(&j4))
        .map(|(p, (a, c))| (p / a * c - p).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Retires edge labels whose positions lie beyond the other family's range by
/// more than one end spacing, until both sets are mutually covered.
pub(crate) fn trim(b: &mut [TrajectoryBundle; 2]) {
    loop {
        let mut changed = false;
        for a in 0..2 {
            let other = &b[1 - a].positions;
            let m = other.len();
            let lo = other[0] - (other[1] - other[0]);
            let hi = other[m - 1] + (other[m - 1] - other[m - 2]);
            let own = &b[a].positions;
            let first = own.iter().position(|&x| x >= lo).unwrap_or(own.len());
            let last = own.iter().rposition(|&x| x <= hi).map_or(first, |k| k + 1).max(first);
            if first > 0 || last < own.len() {
                let (s, _) = b[a].active;
                b[a].positions = own[first..last].to_vec();
                b[a].active = (s + first, s + last);
                changed = true;
            }
            if b[a].positions.len() < 2 {
                return;
            }
        }
        if !changed {
            return;
        }
    }
}

/// Phase-1 and phase-2 velocities at the current positions.
pub fn lagrangian_velocities(
    b1: &TrajectoryBundle,
    b2: &TrajectoryBundle,
    units: &UnitSystem,
    floor: f64,
) -> Result<[Vec<f64>; 2]> {
    let scale = b1.psi0.iter().chain(&b2.psi0).fold(0.0f64, |m, v| m.max(v.abs()));
    let sys = TwoPhase {
        psi0: [b1.active_psi0(), b2.active_psi0()],
        h: b1.label_spacing(),
        offsets: [b1.active.0, b2.active.0],
        k: units.half_ratio(),
        eps: floor * scale,
    };
    let mut v = sys.rhs(&[b1.positions.clone(), b2.positions.clone()], b1.time)?;
    let v2 = v.pop().unwrap();
    let v1 = v.pop().unwrap();
    Ok([v1, v2])
}

/// Advances both families by one RK4 step of size `dt` (no error control).
pub fn step_two_phase(
    b1: &TrajectoryBundle,
    b2: &TrajectoryBundle,
    dt: f64,
    units: &UnitSystem,
    floor: f64,
) -> Result<(TrajectoryBundle, TrajectoryBundle)> {
    if (b1.time - b2.time).abs() > 1e-14 || !b1.status.is_ok() || !b2.status.is_ok() {
        return config("bundles must be live and at the same time");
    }
    let scale = b1.psi0.iter().chain(&b2.psi0).fold(0.0f64, |m, v| m.max(v.abs()));
    let sys = TwoPhase {
        psi0: [b1.active_psi0(), b2.active_psi0()],
        h: b1.label_spacing(),
        offsets: [b1.active.0, b2.active.0],
        k: units.half_ratio(),
        eps: floor * scale,
    };
    let rhs = |y: &[Vec<f64>], t: f64| sys.rhs(y, t);
    let y = rk4(&rhs, &[b1.positions.clone(), b2.positions.clone()], b1.time, dt)?;
    check_monotone(&y, [b1, b2], b1.time + dt)?;
    let mut out = [b1.clone(), b2.clone()];
    for (a, ya) in y.into_iter().enumerate() {
        out[a].positions = ya;
        out[a].time = b1.time + dt;
    }
    let [o1, o2] = out;
    Ok((o1, o2))
}

fn check_monotone(y: &[Vec<f64>], b: [&TrajectoryBundle; 2], t: f64) -> Result<()> {
    for (a, ya) in y.iter().enumerate() {
        if let Some(k) = ya.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::CrossingDetected {
                phase: b[a].phase,
                time: t,
                label_index: b[a].active.0 + k,
            });
        }
    }
    Ok(())
}

/// Resamples both reconstructed charges from positions onto `grid`.
pub fn assemble_wavefunction(b1: &TrajectoryBundle, b2: &TrajectoryBundle, grid: &SpatialGrid, units: UnitSystem) -> Result<RealPairField> {
    if grid.dim() != 1 {
        return config("assembly targets a 1D grid");
    }
    let xs = grid.axis(0).points();
    let mut comps = Vec::with_capacity(2);
    for b in [b1, b2] {
        let psi = reconstruct_density(b)?;
        let (lo, hi) = b.range();
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if let Some(&x) = xs.iter().find(|&&x| x < lo - tol || x > hi + tol) {
            return Err(Error::OutOfDomain {
                time: b.time,
                position: x,
                detail: format!("grid point outside phase-{} positions [{lo}, {hi}]", b.phase),
            });
        }
        let ip = interpolant(b.phase, &b.positions, &psi, b.active.0, b.time)?;
        comps.push(ip.eval_sorted(&xs));
    }
    let p2 = comps.pop().unwrap();
    let p1 = comps.pop().unwrap();
    RealPairField::from_samples(grid.clone(), units, p1, p2, b1.time)
}

/// The largest sub-grid of `grid` inside both position ranges.
pub fn common_grid(grid: &SpatialGrid, b1: &TrajectoryBundle, b2: &TrajectoryBundle) -> Result<SpatialGrid> {
    let (l1, h1) = b1.range();
    let (l2, h2) = b2.range();
    grid.restrict(l1.max(l2), h1.min(h2))
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub field: RealPairField,
    pub bundles: [TrajectoryBundle; 2],
    pub diagnostics: Diagnostics,
}

/// Adaptive RK4 with step doubling from the initial field alone.
pub fn propagate(f0: &RealPairField, opts: &PropagationOptions) -> Result<Propagation> {
    let (b1, b2) = init_bundles(f0, opts)?;
    let scale = b1.psi0.iter().chain(&b2.psi0).fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = opts.floor * scale;
    let k = f0.units.half_ratio();
    let h = b1.label_spacing();
    let mut bundles = [b1, b2];
    let mut diag = Diagnostics::default();
    let record = |b: &mut [TrajectoryBundle; 2]| {
        for x in b.iter_mut() {
            x.history.push(Snapshot {
                t: x.time,
                active: x.active,
                positions: x.positions.clone(),
            });
        }
    };
    if opts.record_history {
        record(&mut bundles);
    }
    let mut t = 0.0;
    let mut dt = opts.dt_init;
    let mut last_error: Option<Error> = None;
    let t_end = opts.max_time;
    while t < t_end * (1.0 - 1e-12) {
        if diag.steps.len() + diag.rejected >= opts.max_steps {
            let e = Error::Config(format!("step budget of {} exhausted", opts.max_steps));
            halt(&mut bundles, &mut diag, &e, t);
            break;
        }
        dt = dt.min(t_end - t);
        let sys = TwoPhase {
            psi0: [bundles[0].active_psi0(), bundles[1].active_psi0()],
            h,
            offsets: [bundles[0].active.0, bundles[1].active.0],
            k,
            eps,
        };
        let rhs = |y: &[Vec<f64>], s: f64| sys.rhs(y, s);
        let check = |y: &[Vec<f64>], s: f64| check_monotone(y, [&bundles[0], &bundles[1]], s);
        let y0 = [bundles[0].positions.clone(), bundles[1].positions.clone()];
        match attempt_step(&rhs, &check, &y0, t, dt, opts.tolerance) {
            Attempt::Accepted { y, err } => {
                t += dt;
                for (a, ya) in y.into_iter().enumerate() {
                    bundles[a].positions = ya;
                    bundles[a].time = t;
                }
                trim(&mut bundles);
                if bundles.iter().any(|b| b.active_len() < MIN_AXIS_POINTS) {
                    let b = bundles.iter().find(|b| b.active_len() < MIN_AXIS_POINTS).unwrap();
                    let e = Error::OutOfDomain {
                        time: t,
                        position: b.positions.first().copied().unwrap_or(f64::NAN),
                        detail: format!("phase {} has fewer than {MIN_AXIS_POINTS} labels inside the other family's range", b.phase),
                    };
                    halt(&mut bundles, &mut diag, &e, t);
                    break;
                }
                diag.steps.push(StepRecord {
                    t,
                    dt,
                    error: err,
                    drift: drift(&bundles[0]).max(drift(&bundles[1])),
                    jacobian_gap: jacobian_gap(&bundles[0]).max(jacobian_gap(&bundles[1])),
                    active: [bundles[0].active_len(), bundles[1].active_len()],
                });
                if opts.record_history {
                    record(&mut bundles);
                }
                dt *= grow_factor(opts.tolerance, err);
                last_error = None;
            }
            Attempt::TooLarge { err } => {
                diag.rejected += 1;
                dt *= shrink_factor(opts.tolerance, err);
            }
            Attempt::Failed(e) => {
                diag.rejected += 1;
                dt *= 0.5;
                last_error = Some(e);
            }
        }
        if dt < opts.dt_min {
            let e = last_error.take().unwrap_or_else(|| Error::Config("step size fell below dt_min".into()));
            halt(&mut bundles, &mut diag, &e, t);
            break;
        }
    }
    let grid = common_grid(&f0.grid, &bundles[0], &bundles[1])?;
    let field = assemble_wavefunction(&bundles[0], &bundles[1], &grid, f0.units)?;
    Ok(Propagation {
        field,
        bundles,
        diagnostics: diag,
    })
}

fn halt(b: &mut [TrajectoryBundle; 2], diag: &mut Diagnostics, e: &Error, t: f64) {
    let s = Status::halted(e, t);
    for x in b.iter_mut() {
        x.status = s.clone();
    }
    diag.halt = Some(s);
}

/// Writes the trajectory CSV (`phase,label_index,q0,t,q,J,psi_recon`) for
/// every recorded snapshot, or the current state when no history was kept.
pub fn write_trajectory_csv<W: Write>(out: &mut W, bundles: &[&TrajectoryBundle]) -> Result<()> {
    writeln!(out, "phase,label_index,q0,t,q,J,psi_recon")?;
    for b in bundles {
        let current = Snapshot {
            t: b.time,
            active: b.active,
            positions: b.positions.clone(),
        };
        let snaps: Vec<&Snapshot> = if b.history.is_empty() {
            vec![&current]
        } else {
            b.history.iter().collect()
        };
        for s in snaps {
            let j = fd::derivative(&s.positions, b.label_spacing(), false, Stencil::Second);
            for (k, q) in s.positions.iter().enumerate() {
                let i = s.active.0 + k;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    b.phase,
                    i,
                    fmt_num(b.labels[i]),
                    fmt_num(s.t),
                    fmt_num(*q),
                    fmt_num(j[k]),
                    fmt_num(b.psi0[i] / j[k])
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(labels: Vec<f64>, psi0: Vec<f64>) -> TrajectoryBundle {
        TrajectoryBundle::new(Phase::One, labels, psi0).unwrap()
    }

    #[test]
    fn rigid_translation_has_unit_jacobian() {
        let l: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let b = bundle(l.clone(), vec![1.0; 20]).with_positions(l.iter().map(|x| x + 0.7).collect(), 1.0).unwrap();
        assert!(jacobian(&b).unwrap().iter().all(|j| (j - 1.0).abs() < 1e-12));
    }

    #[test]
    fn linear_stretch_divides_density() {
        let l: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let t = 0.5;
        let b = bundle(l.clone(), vec![2.0; 20]).with_positions(l.iter().map(|x| x * (1.0 + t)).collect(), t).unwrap();
        assert!(jacobian(&b).unwrap().iter().all(|j| (j - 1.5).abs() < 1e-12));
        assert!(reconstruct_density(&b).unwrap().iter().all(|p| (p - 2.0 / 1.5).abs() < 1e-12));
    }

    #[test]
    fn folded_positions_are_crossings() {
        let l: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut q = l.clone();
        q[5] = 3.5;
        q[6] = 3.6;
        let b = bundle(l, vec![1.0; 10]).with_positions(q, 0.1).unwrap();
        assert!(matches!(jacobian(&b), Err(Error::CrossingDetected { .. })));
    }

    #[test]
    fn trimming_keeps_mutually_covered_sets() {
        let l: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let a = bundle(l.clone(), vec![1.0; 20]);
        let mut b = bundle(l.clone(), vec![1.0; 20]);
        b.phase = Phase::Two;
        let b = b.with_positions(l.iter().map(|x| x + 3.5).collect(), 0.0).unwrap();
        let mut pair = [a, b];
        trim(&mut pair);
        assert_eq!(pair[0].active, (3, 20));
        assert_eq!(pair[1].active, (0, 17));
    }

    #[test]
    fn number_format_has_twelve_digits() {
        assert_eq!(fmt_num(0.1), "1.00000000000e-1");
        assert_eq!(fmt_num(-2.5e-12), "-2.50000000000e-12");
    }
}
