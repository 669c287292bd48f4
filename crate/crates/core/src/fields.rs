//! Two-component real wavefunctions on uniform grids, the analytic initial
//! states, and the global gauge / Galilean transformations.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::fd::{self, Stencil};
use crate::grid::{SpatialGrid, UnitSystem};
use crate::interp::MonotoneCubic;

/// Relative density below which the phase S is treated as undefined.
pub const PHASE_FLOOR: f64 = 1e-12;

/// The fixed antisymmetric coupling matrix of the two real component
/// equations, `Γ = [[0, 1], [-1, 0]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaMatrix;

impl GammaMatrix {
    pub const ENTRIES: [[f64; 2]; 2] = [[0.0, 1.0], [-1.0, 0.0]];

    pub fn apply(v: [f64; 2]) -> [f64; 2] {
        let g = Self::ENTRIES;
        [g[0][0] * v[0] + g[0][1] * v[1], g[1][0] * v[0] + g[1][1] * v[1]]
    }

    pub fn square() -> [[f64; 2]; 2] {
        let g = Self::ENTRIES;
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, o) in row.iter_mut().enumerate() {
                *o = (0..2).map(|k| g[i][k] * g[k][j]).sum();
            }
        }
        out
    }
}

/// Exact spatial gradients attached to a field built from closed-form
/// expressions. `d_psi1[axis][point]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactGradients {
    pub d_psi1: Vec<Vec<f64>>,
    pub d_psi2: Vec<Vec<f64>>,
}

/// Samples of `(ψ₁, ψ₂)` on a grid. When the field came from closed-form
/// expressions it carries exact gradients; otherwise gradients are taken by
/// finite differences.
#[derive(Clone, Debug, PartialEq)]
pub struct RealPairField {
    pub grid: SpatialGrid,
    pub units: UnitSystem,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub time: f64,
    pub exact: Option<ExactGradients>,
}

impl RealPairField {
    pub fn from_samples(
        grid: SpatialGrid,
        units: UnitSystem,
        psi1: Vec<f64>,
        psi2: Vec<f64>,
        time: f64,
    ) -> Result<Self> {
        if psi1.len() != grid.len() || psi2.len() != grid.len() {
            return config(format!(
                "field arrays ({}, {}) do not match grid size {}",
                psi1.len(),
                psi2.len(),
                grid.len()
            ));
        }
        if psi1.iter().chain(&psi2).any(|v| !v.is_finite()) {
            return config("field samples must be finite");
        }
        Ok(RealPairField {
            grid,
            units,
            psi1,
            psi2,
            time,
            exact: None,
        })
    }

    /// Samples a complex function given with its gradient on every grid node.
    pub fn from_fn<F>(grid: SpatialGrid, units: UnitSystem, time: f64, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> (Complex64, Vec<Complex64>),
    {
        let n = grid.len();
        let d = grid.dim();
        let mut psi1 = Vec::with_capacity(n);
        let mut psi2 = Vec::with_capacity(n);
        let mut d1 = vec![Vec::with_capacity(n); d];
        let mut d2 = vec![Vec::with_capacity(n); d];
        for idx in 0..n {
            let (v, g) = f(&grid.coords(idx));
            psi1.push(v.re);
            psi2.push(v.im);
            for k in 0..d {
                d1[k].push(g[k].re);
                d2[k].push(g[k].im);
            }
        }
        let mut out = RealPairField::from_samples(grid, units, psi1, psi2, time)?;
        if d1.iter().chain(&d2).flatten().any(|v| !v.is_finite()) {
            return config("field gradients must be finite");
        }
        out.exact = Some(ExactGradients {
            d_psi1: d1,
            d_psi2: d2,
        });
        Ok(out)
    }

    pub fn zeros_like(&self) -> RealPairField {
        let d = self.grid.dim();
        let n = self.grid.len();
        RealPairField {
            grid: self.grid.clone(),
            units: self.units,
            psi1: vec![0.0; n],
            psi2: vec![0.0; n],
            time: self.time,
            exact: Some(ExactGradients {
                d_psi1: vec![vec![0.0; n]; d],
                d_psi2: vec![vec![0.0; n]; d],
            }),
        }
    }

    /// Drops exact gradients so every evaluator falls back to finite differences.
    pub fn gridded(mut self) -> RealPairField {
        self.exact = None;
        self
    }

    pub fn len(&self) -> usize {
        self.psi1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi1.is_empty()
    }

    pub fn component(&self, a: usize) -> &[f64] {
        if a == 0 {
            &self.psi1
        } else {
            &self.psi2
        }
    }

    pub fn value(&self, idx: usize) -> Complex64 {
        Complex64::new(self.psi1[idx], self.psi2[idx])
    }

    /// Gradients `[component][axis][point]`, exact when available.
    pub fn gradients(&self, stencil: Stencil) -> [Vec<Vec<f64>>; 2] {
        if let Some(ex) = &self.exact {
            return [ex.d_psi1.clone(), ex.d_psi2.clone()];
        }
        [
            grid_gradient(&self.grid, &self.psi1, stencil),
            grid_gradient(&self.grid, &self.psi2, stencil),
        ]
    }

    /// Pointwise sum of two fields on the same grid.
    pub fn add(&self, other: &RealPairField) -> Result<RealPairField> {
        if self.grid != other.grid {
            return config("fields live on different grids");
        }
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
        let exact = match (&self.exact, &other.exact) {
            (Some(a), Some(b)) => Some(ExactGradients {
                d_psi1: a.d_psi1.iter().zip(&b.d_psi1).map(|(x, y)| sum(x, y)).collect(),
                d_psi2: a.d_psi2.iter().zip(&b.d_psi2).map(|(x, y)| sum(x, y)).collect(),
            }),
            _ => None,
        };
        Ok(RealPairField {
            grid: self.grid.clone(),
            units: self.units,
            psi1: sum(&self.psi1, &other.psi1),
            psi2: sum(&self.psi2, &other.psi2),
            time: self.time,
            exact,
        })
    }

    /// Trapezoidal `∫ρ dx` (1D) or `∫ρ dx dy` (2D, rectangle rule).
    pub fn norm(&self) -> f64 {
        let rho = density(self);
        let cell: f64 = self.grid.axes().iter().map(|a| a.spacing()).product();
        if self.grid.dim() == 1 && !self.grid.axis(0).periodic {
            let n = rho.len();
            cell * (rho.iter().sum::<f64>() - 0.5 * (rho[0] + rho[n - 1]))
        } else {
            cell * rho.iter().sum::<f64>()
        }
    }

    /// Interpolates both components at `x` (1D fields; monotone cubic).
    pub fn sampler(&self) -> Result<FieldSampler> {
        if self.grid.dim() != 1 {
            return config("sampling is only available for 1D fields");
        }
        let ax = *self.grid.axis(0);
        let (xs, p1, p2) = if ax.periodic {
            let xs = ax.points();
            let pad = 3;
            let n = ax.n;
            let period = ax.length();
            let mut ex = Vec::with_capacity(n + 2 * pad);
            let mut e1 = Vec::with_capacity(n + 2 * pad);
            let mut e2 = Vec::with_capacity(n + 2 * pad);
            for k in 0..n + 2 * pad {
                let i = (k + n - pad) % n;
                let wrap = (k as isize - pad as isize).div_euclid(n as isize) as f64;
                ex.push(xs[i] + wrap * period);
                e1.push(self.psi1[i]);
                e2.push(self.psi2[i]);
            }
            (ex, e1, e2)
        } else {
            (ax.points(), self.psi1.clone(), self.psi2.clone())
        };
        Ok(FieldSampler {
            axis: ax,
            c1: MonotoneCubic::new(&xs, &p1).expect("grid nodes are increasing"),
            c2: MonotoneCubic::new(&xs, &p2).expect("grid nodes are increasing"),
        })
    }
}

/// Monotone cubic interpolation of a 1D field.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    axis: crate::grid::Axis,
    c1: MonotoneCubic,
    c2: MonotoneCubic,
}

impl FieldSampler {
    /// `None` outside a non-periodic grid. Targets within `1e-9` spacings of
    /// an end are clamped onto it.
    pub fn sample(&self, x: f64) -> Option<(f64, f64)> {
        let x = if self.axis.periodic {
            self.axis.min + (x - self.axis.min).rem_euclid(self.axis.length())
        } else {
            let slack = 1e-9 * self.axis.spacing();
            if x < self.axis.min - slack || x > self.axis.max + slack {
                return None;
            }
            x.clamp(self.axis.min, self.axis.max)
        };
        Some((self.c1.eval(x), self.c2.eval(x)))
    }
}

pub(crate) fn grid_gradient(grid: &SpatialGrid, y: &[f64], stencil: Stencil) -> Vec<Vec<f64>> {
    match grid.dim() {
        1 => {
            let ax = grid.axis(0);
            vec![fd::derivative(y, ax.spacing(), ax.periodic, stencil)]
        }
        _ => {
            let shape = [grid.axis(0).n, grid.axis(1).n];
            (0..2)
                .map(|k| {
                    let ax = grid.axis(k);
                    fd::derivative_2d(y, shape, k, ax.spacing(), ax.periodic, stencil)
                })
                .collect()
        }
    }
}

/// Initial-state descriptions with closed forms.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpec {
    PlaneWave {
        k: f64,
    },
    Gaussian {
        center: f64,
        width: f64,
        k: f64,
    },
    /// Gaussian envelope about `center` with phase `S/ħ = a + b·tanh(x/σ_S)`.
    GaussianTanhPhase {
        center: f64,
        width: f64,
        a: f64,
        b: f64,
        sigma_s: f64,
    },
    /// Harmonic-oscillator ground state displaced to `x0` (zero momentum).
    CoherentState {
        omega: f64,
        x0: f64,
    },
    Superposition {
        terms: Vec<(Weight, StateSpec)>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Weight {
    pub re: f64,
    pub im: f64,
}

impl From<Weight> for Complex64 {
    fn from(w: Weight) -> Self {
        Complex64::new(w.re, w.im)
    }
}

impl StateSpec {
    /// The benchmark state: Gaussian envelope (width 2) with tanh phase
    /// `0.7 + 0.45 tanh(x)`, which keeps `S/ħ` inside `(0.25, 1.15)`.
    pub fn benchmark() -> StateSpec {
        StateSpec::GaussianTanhPhase {
            center: 0.0,
            width: 2.0,
            a: 0.7,
            b: 0.45,
            sigma_s: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        match self {
            StateSpec::PlaneWave { k } if finite(&[*k]) => Ok(()),
            StateSpec::Gaussian { center, width, k } if finite(&[*center, *width, *k]) => {
                positive("width", *width)
            }
            StateSpec::GaussianTanhPhase {
                center,
                width,
                a,
                b,
                sigma_s,
            } if finite(&[*center, *width, *a, *b, *sigma_s]) => {
                positive("width", *width)?;
                positive("sigma_s", *sigma_s)
            }
            StateSpec::CoherentState { omega, x0 } if finite(&[*omega, *x0]) => {
                positive("omega", *omega)
            }
            StateSpec::Superposition { terms } => {
                if terms.is_empty() {
                    return config("superposition needs at least one term");
                }
                for (w, s) in terms {
                    if !(w.re.is_finite() && w.im.is_finite()) {
                        return config("superposition weights must be finite");
                    }
                    s.validate()?;
                }
                Ok(())
            }
            _ => config(format!("state parameters must be finite: {self:?}")),
        }
    }

    /// Value and x-derivative at `x`.
    pub fn eval(&self, x: f64, units: &UnitSystem) -> (Complex64, Complex64) {
        let i = Complex64::i();
        match *self {
            StateSpec::PlaneWave { k } => {
                let v = Complex64::from_polar(1.0, k * x);
                (v, i * k * v)
            }
            StateSpec::Gaussian { center, width, k } => {
                let env = gaussian_envelope(x - center, width);
                let v = env * Complex64::from_polar(1.0, k * x);
                (v, (-(x - center) / (2.0 * width * width) + i * k) * v)
            }
            StateSpec::GaussianTanhPhase {
                center,
                width,
                a,
                b,
                sigma_s,
            } => {
                let z = x / sigma_s;
                let env = gaussian_envelope(x - center, width);
                let v = env * Complex64::from_polar(1.0, a + b * z.tanh());
                let sech2 = 1.0 / z.cosh().powi(2);
                (v, (-(x - center) / (2.0 * width * width) + i * b * sech2 / sigma_s) * v)
            }
            StateSpec::CoherentState { omega, x0 } => {
                let mw = units.mass * omega / units.hbar;
                let v = Complex64::new(
                    (mw / std::f64::consts::PI).powf(0.25) * (-0.5 * mw * (x - x0).powi(2)).exp(),
                    0.0,
                );
                (v, -mw * (x - x0) * v)
            }
            StateSpec::Superposition { ref terms } => {
                terms.iter().fold(
                    (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
                    |(v, d), (w, s)| {
                        let (sv, sd) = s.eval(x, units);
                        let w: Complex64 = (*w).into();
                        (v + w * sv, d + w * sd)
                    },
                )
            }
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 {
        Ok(())
    } else {
        config(format!("{name} must be positive, got {v}"))
    }
}

/// Normalised envelope `(2πσ²)^(-1/4) exp(-x²/4σ²)`; σ is the density width.
pub fn gaussian_envelope(x: f64, width: f64) -> f64 {
    (2.0 * std::f64::consts::PI * width * width).powf(-0.25) * (-x * x / (4.0 * width * width)).exp()
}

/// Samples `spec` on a 1D grid at t = 0 with exact gradients.
pub fn make_state(spec: &StateSpec, grid: &SpatialGrid, units: UnitSystem) -> Result<RealPairField> {
    spec.validate()?;
    if grid.dim() != 1 {
        return config("analytic states are defined on 1D grids");
    }
    RealPairField::from_fn(grid.clone(), units, 0.0, |c| {
        let (v, d) = spec.eval(c[0], &units);
        (v, vec![d])
    })
}

pub fn density(f: &RealPairField) -> Vec<f64> {
    f.psi1.iter().zip(&f.psi2).map(|(a, b)| a * a + b * b).collect()
}

/// `ψ = √ρ exp(iS/ħ)` with S unwrapped along axis 0.
#[derive(Clone, Debug)]
pub struct PolarField {
    pub grid: SpatialGrid,
    pub units: UnitSystem,
    pub rho: Vec<f64>,
    pub phase: Vec<f64>,
    /// Points where ρ is below `PHASE_FLOOR · max ρ`; the phase there is not meaningful.
    pub undefined: Vec<bool>,
    exact: Option<PolarGradients>,
}

#[derive(Clone, Debug)]
struct PolarGradients {
    d_rho: Vec<Vec<f64>>,
    d_phase: Vec<Vec<f64>>,
}

impl PolarField {
    /// Reconstructs `(ψ₁, ψ₂) = √ρ (cos S/ħ, sin S/ħ)`.
    pub fn to_pair(&self) -> RealPairField {
        let (p1, p2) = self
            .rho
            .iter()
            .zip(&self.phase)
            .map(|(r, s)| {
                let (sn, cs) = (s / self.units.hbar).sin_cos();
                (r.sqrt() * cs, r.sqrt() * sn)
            })
            .unzip();
        RealPairField {
            grid: self.grid.clone(),
            units: self.units,
            psi1: p1,
            psi2: p2,
            time: 0.0,
            exact: None,
        }
    }

    /// `(∇ρ, ∇S)` per axis; exact when the source field carried exact gradients.
    pub fn gradients(&self, stencil: Stencil) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        if let Some(ex) = &self.exact {
            return (ex.d_rho.clone(), ex.d_phase.clone());
        }
        (
            grid_gradient(&self.grid, &self.rho, stencil),
            grid_gradient(&self.grid, &self.phase, stencil),
        )
    }

    pub fn has_exact_gradients(&self) -> bool {
        self.exact.is_some()
    }
}

pub fn polar_decompose(f: &RealPairField) -> PolarField {
    let rho = density(f);
    let hbar = f.units.hbar;
    let rmax = rho.iter().cloned().fold(0.0, f64::max);
    let undefined: Vec<bool> = rho.iter().map(|&r| r <= PHASE_FLOOR * rmax || rmax == 0.0).collect();
    let raw: Vec<f64> = f.psi1.iter().zip(&f.psi2).map(|(a, b)| b.atan2(*a)).collect();
    let mut theta = raw.clone();
    let (n0, n1) = match f.grid.dim() {
        1 => (f.grid.axis(0).n, 1),
        _ => (f.grid.axis(0).n, f.grid.axis(1).n),
    };
    for c in 0..n1 {
        let mut prev: Option<f64> = None;
        for r in 0..n0 {
            let idx = r * n1 + c;
            if undefined[idx] {
                prev = None;
                continue;
            }
            if let Some(p) = prev {
                let two_pi = 2.0 * std::f64::consts::PI;
                let mut t = raw[idx];
                t += two_pi * ((p - t) / two_pi).round();
                theta[idx] = t;
            }
            prev = Some(theta[idx]);
        }
    }
    let phase = theta.iter().map(|t| hbar * t).collect();
    let exact = f.exact.as_ref().map(|ex| {
        let d = f.grid.dim();
        let mut d_rho = vec![vec![0.0; rho.len()]; d];
        let mut d_phase = vec![vec![0.0; rho.len()]; d];
        for k in 0..d {
            for i in 0..rho.len() {
                let (a, b) = (f.psi1[i], f.psi2[i]);
                let (da, db) = (ex.d_psi1[k][i], ex.d_psi2[k][i]);
                d_rho[k][i] = 2.0 * (a * da + b * db);
                d_phase[k][i] = if rho[i] > 0.0 {
                    hbar * (a * db - b * da) / rho[i]
                } else {
                    f64::NAN
                };
            }
        }
        PolarGradients { d_rho, d_phase }
    });
    PolarField {
        grid: f.grid.clone(),
        units: f.units,
        rho,
        phase,
        undefined,
        exact,
    }
}

/// Global gauge rotation by the angle `m s/ħ`; ρ is unchanged and `S' = S + m s`.
pub fn gauge_rotate(f: &RealPairField, s: f64) -> RealPairField {
    let angle = f.units.mass * s / f.units.hbar;
    let (sn, cs) = angle.sin_cos();
    let rot = |a: &[f64], b: &[f64]| -> (Vec<f64>, Vec<f64>) {
        a.iter()
            .zip(b)
            .map(|(x, y)| (cs * x - sn * y, sn * x + cs * y))
            .unzip()
    };
    let (p1, p2) = rot(&f.psi1, &f.psi2);
    let exact = f.exact.as_ref().map(|ex| {
        let (d1, d2): (Vec<_>, Vec<_>) = ex
            .d_psi1
            .iter()
            .zip(&ex.d_psi2)
            .map(|(a, b)| rot(a, b))
            .unzip();
        ExactGradients {
            d_psi1: d1,
            d_psi2: d2,
        }
    });
    RealPairField {
        grid: f.grid.clone(),
        units: f.units,
        psi1: p1,
        psi2: p2,
        time: f.time,
        exact,
    }
}

/// Field seen from the frame `x' = x − u t`: `ρ'(x') = ρ(x)`,
/// `S'(x') = S(x) + m u·x − ½ m u² t`, resampled on the same grid.
pub fn galilean_boost(f: &RealPairField, u: &[f64], t: f64) -> Result<RealPairField> {
    if u.len() != f.grid.dim() {
        return config(format!(
            "boost velocity has {} components for a {}D grid",
            u.len(),
            f.grid.dim()
        ));
    }
    if (f.time - t).abs() > 1e-12 * (1.0 + t.abs()) {
        return config(format!("field time {} does not match boost time {t}", f.time));
    }
    if f.grid.dim() != 1 {
        return config("Galilean resampling is implemented for 1D fields");
    }
    let (m, hbar) = (f.units.mass, f.units.hbar);
    let u = u[0];
    let ax = *f.grid.axis(0);
    let xs = ax.points();
    let shift = u * t;
    let phase_at = |x: f64| (m * u * x - 0.5 * m * u * u * t) / hbar;

    if shift == 0.0 {
        // No resampling: rotate pointwise and carry exact gradients through.
        let mut p1 = Vec::with_capacity(xs.len());
        let mut p2 = Vec::with_capacity(xs.len());
        let mut d1 = Vec::new();
        let mut d2 = Vec::new();
        for (i, &x) in xs.iter().enumerate() {
            let rot = Complex64::from_polar(1.0, phase_at(x));
            let v = rot * f.value(i);
            p1.push(v.re);
            p2.push(v.im);
            if let Some(ex) = &f.exact {
                let dv = Complex64::new(ex.d_psi1[0][i], ex.d_psi2[0][i]);
                let g = rot * (dv + Complex64::i() * (m * u / hbar) * f.value(i));
                d1.push(g.re);
                d2.push(g.im);
            }
        }
        return Ok(RealPairField {
            grid: f.grid.clone(),
            units: f.units,
            psi1: p1,
            psi2: p2,
            time: t,
            exact: f.exact.as_ref().map(|_| ExactGradients {
                d_psi1: vec![d1],
                d_psi2: vec![d2],
            }),
        });
    }

    let sampler = f.sampler()?;
    let mut p1 = Vec::with_capacity(xs.len());
    let mut p2 = Vec::with_capacity(xs.len());
    for &xp in &xs {
        let x = xp + shift;
        let (a, b) = sampler.sample(x).ok_or_else(|| Error::OutOfDomain {
            time: t,
            position: x,
            detail: format!("boost resampling needs x = {x} outside [{}, {}]", ax.min, ax.max),
        })?;
        let v = Complex64::from_polar(1.0, phase_at(x)) * Complex64::new(a, b);
        p1.push(v.re);
        p2.push(v.im);
    }
    RealPairField::from_samples(f.grid.clone(), f.units, p1, p2, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(min: f64, max: f64, n: usize) -> SpatialGrid {
        SpatialGrid::line(min, max, n, false).unwrap()
    }

    #[test]
    fn gamma_squares_to_minus_identity() {
        assert_eq!(GammaMatrix::square(), [[-1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(GammaMatrix::apply([2.0, 3.0]), [3.0, -2.0]);
    }

    #[test]
    fn plane_wave_components() {
        let g = line(-3.0, 3.0, 61);
        let f = make_state(&StateSpec::PlaneWave { k: 1.0 }, &g, UnitSystem::default()).unwrap();
        for (i, x) in g.axis(0).points().into_iter().enumerate() {
            assert!((f.psi1[i] - x.cos()).abs() < 1e-15);
            assert!((f.psi2[i] - x.sin()).abs() < 1e-15);
        }
        assert!(density(&f).iter().all(|r| (r - 1.0).abs() < 1e-14));
    }

    #[test]
    fn real_gaussian_has_zero_imaginary_part() {
        let g = line(-5.0, 5.0, 101);
        let f = make_state(
            &StateSpec::Gaussian {
                center: 0.0,
                width: 1.0,
                k: 0.0,
            },
            &g,
            UnitSystem::default(),
        )
        .unwrap();
        assert!(f.psi2.iter().all(|v| *v == 0.0));
        for (i, x) in g.axis(0).points().into_iter().enumerate() {
            assert!((f.psi1[i] - gaussian_envelope(x, 1.0)).abs() < 1e-15);
            assert!((density(&f)[i] - gaussian_envelope(x, 1.0).powi(2)).abs() < 1e-15);
        }
    }

    #[test]
    fn benchmark_components_stay_away_from_zero() {
        let g = line(-6.0, 6.0, 1201);
        let f = make_state(&StateSpec::GaussianTanhPhase {
            center: 0.0,
            width: 2.0,
            a: 0.7,
            b: 0.45,
            sigma_s: 1.0,
        }, &g, UnitSystem::default())
        .unwrap();
        let ratio = g
            .axis(0)
            .points()
            .iter()
            .enumerate()
            .map(|(i, &x)| f.psi1[i].min(f.psi2[i]) / gaussian_envelope(x, 2.0))
            .fold(f64::INFINITY, f64::min);
        // min(cos 1.15, sin 0.25) = 0.2474
        assert!(ratio > 0.2, "ratio {ratio}");
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        let g = line(-1.0, 1.0, 16);
        let bad = StateSpec::Gaussian {
            center: 0.0,
            width: 0.0,
            k: 1.0,
        };
        assert!(matches!(make_state(&bad, &g, UnitSystem::default()), Err(Error::Config(_))));
        let bad = StateSpec::GaussianTanhPhase {
            center: 0.0,
            width: 1.0,
            a: 0.0,
            b: 1.0,
            sigma_s: -1.0,
        };
        assert!(make_state(&bad, &g, UnitSystem::default()).is_err());
        assert!(make_state(&StateSpec::PlaneWave { k: f64::NAN }, &g, UnitSystem::default()).is_err());
    }

    #[test]
    fn polar_identity_cases() {
        let g = line(0.0, 1.0, 8);
        let f = RealPairField::from_samples(g.clone(), UnitSystem::default(), vec![1.0; 8], vec![0.0; 8], 0.0).unwrap();
        let p = polar_decompose(&f);
        assert!(p.rho.iter().all(|r| *r == 1.0) && p.phase.iter().all(|s| *s == 0.0));
        let units = UnitSystem::new(0.5, 1.0).unwrap();
        let f = RealPairField::from_samples(g, units, vec![0.0; 8], vec![1.0; 8], 0.0).unwrap();
        let p = polar_decompose(&f);
        assert!(p.phase.iter().all(|s| (s - PI * 0.5 / 2.0).abs() < 1e-15));
    }

    #[test]
    fn polar_roundtrip_and_unwrapping() {
        let g = line(-6.0, 6.0, 601);
        let spec = StateSpec::Gaussian {
            center: 0.0,
            width: 2.0,
            k: 3.0,
        };
        let f = make_state(&spec, &g, UnitSystem::default()).unwrap();
        let p = polar_decompose(&f);
        // phase = k x, continuous across many windings
        for (i, x) in g.axis(0).points().into_iter().enumerate() {
            assert!((p.phase[i] - p.phase[300] - 3.0 * x).abs() < 1e-9);
        }
        let back = p.to_pair();
        let err = f
            .psi1
            .iter()
            .zip(&back.psi1)
            .chain(f.psi2.iter().zip(&back.psi2))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn undefined_mask_breaks_unwrapping() {
        let g = line(0.0, 1.0, 10);
        let mut p1 = vec![1.0; 10];
        let p2 = vec![0.0; 10];
        p1[4] = 0.0;
        let f = RealPairField::from_samples(g, UnitSystem::default(), p1, p2, 0.0).unwrap();
        let p = polar_decompose(&f);
        assert!(p.undefined[4]);
        assert_eq!(p.undefined.iter().filter(|u| **u).count(), 1);
    }

    #[test]
    fn gauge_rotation_cases() {
        let g = line(0.0, 1.0, 8);
        let f = RealPairField::from_samples(g, UnitSystem::default(), vec![1.0; 8], vec![0.0; 8], 0.0).unwrap();
        assert_eq!(gauge_rotate(&f, 0.0), f);
        let r = gauge_rotate(&f, PI / 2.0);
        assert!(r.psi1.iter().all(|v| v.abs() < 1e-15));
        assert!(r.psi2.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn boost_of_plane_wave_doubles_wavenumber() {
        let g = line(-3.0, 3.0, 121);
        let f = make_state(&StateSpec::PlaneWave { k: 1.0 }, &g, UnitSystem::default()).unwrap();
        let b = galilean_boost(&f, &[1.0], 0.0).unwrap();
        for (i, x) in g.axis(0).points().into_iter().enumerate() {
            assert!((b.psi1[i] - (2.0 * x).cos()).abs() < 1e-14);
            assert!((b.psi2[i] - (2.0 * x).sin()).abs() < 1e-14);
        }
        assert_eq!(galilean_boost(&f, &[0.0], 0.0).unwrap().psi1, f.psi1);
    }

    #[test]
    fn boost_preserves_density_at_coincident_points() {
        let g = SpatialGrid::line(-10.0, 10.0, 400, true).unwrap();
        let units = UnitSystem::default();
        let mut f = make_state(&StateSpec::benchmark(), &g, units).unwrap();
        f.time = 0.5;
        let h = g.axis(0).spacing();
        // u t = 4 h lands exactly on nodes
        let u = 8.0 * h;
        let b = galilean_boost(&f, &[u], 0.5).unwrap();
        let (r0, r1) = (density(&f), density(&b));
        for i in 0..396 {
            assert!((r1[i] - r0[i + 4]).abs() < 1e-10);
        }
        // smooth but off-node shift: resampling error only
        let b = galilean_boost(&f, &[0.37], 0.5).unwrap();
        let s = f.sampler().unwrap();
        let r1 = density(&b);
        for (i, x) in g.axis(0).points().into_iter().enumerate() {
            let (a, c) = s.sample(x + 0.185).unwrap();
            assert!((r1[i] - (a * a + c * c)).abs() < 1e-12);
        }
    }

    #[test]
    fn boost_outside_nonperiodic_domain_fails() {
        let g = line(-3.0, 3.0, 61);
        let mut f = make_state(&StateSpec::benchmark(), &g, UnitSystem::default()).unwrap();
        f.time = 1.0;
        assert!(matches!(
            galilean_boost(&f, &[0.5], 1.0),
            Err(Error::OutOfDomain { .. })
        ));
    }
}
