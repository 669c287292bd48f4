//! Velocity and density closures of the two-phase flow and its variants.
//!
//! Every evaluator is a pure function of a field. Points where a closure
//! divides by a vanishing quantity are masked rather than reported as errors.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::fd::Stencil;
use crate::fields::{grid_gradient, polar_decompose, PolarField, RealPairField};
use crate::grid::SpatialGrid;
use crate::potential::Potential;

/// Relative floor below which a divisor is treated as zero.
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// How far `S/ħ` may approach a multiple of π/2 before the tan/cot terms of
/// the polar closure are masked.
pub const POLAR_SINGULAR_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalOptions {
    /// Relative floor; divisors below `floor · max|divisor|` are masked.
    pub floor: f64,
    pub stencil: Stencil,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            floor: DEFAULT_FLOOR,
            stencil: Stencil::default(),
        }
    }
}

impl EvalOptions {
    pub fn with_stencil(stencil: Stencil) -> Self {
        EvalOptions {
            stencil,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FlowVariant {
    Standard,
    Polar,
    Eisenhart { potential: Potential },
    /// Out-of-plane vectors `w_a = (0, 0, w_a)`.
    SpinAugmented { w1: [f64; 3], w2: [f64; 3] },
    DbbHybrid,
    LinearCombo { alpha: f64, beta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowModel {
    pub variant: FlowVariant,
    pub options: EvalOptions,
}

/// Per-phase velocity vectors `v[phase][axis][point]` with a defined mask.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityPair {
    pub v: [Vec<Vec<f64>>; 2],
    pub defined: [Vec<bool>; 2],
}

impl VelocityPair {
    pub fn v1(&self) -> &[f64] {
        &self.v[0][0]
    }

    pub fn v2(&self) -> &[f64] {
        &self.v[1][0]
    }

    pub fn len(&self) -> usize {
        self.defined[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Max deviation from `other` over points where both are defined, per
    /// phase and component.
    pub fn max_deviation(&self, other: &VelocityPair) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..2 {
            for (c, comp) in self.v[a].iter().enumerate() {
                for (i, x) in comp.iter().enumerate() {
                    if self.defined[a][i] && other.defined[a][i] {
                        worst = worst.max((x - other.v[a][c][i]).abs());
                    }
                }
            }
        }
        worst
    }

    /// Count of points that are defined in both phases.
    pub fn joint_defined(&self) -> usize {
        self.defined[0]
            .iter()
            .zip(&self.defined[1])
            .filter(|(a, b)| **a && **b)
            .count()
    }
}

/// Densities and velocities of one closure, the input of conservation checks.
#[derive(Clone, Debug)]
pub struct ModelEval {
    pub densities: [Vec<f64>; 2],
    pub velocities: VelocityPair,
}

impl FlowModel {
    pub fn new(variant: FlowVariant) -> Result<FlowModel> {
        Self::with_options(variant, EvalOptions::default())
    }

    pub fn with_options(variant: FlowVariant, options: EvalOptions) -> Result<FlowModel> {
        if !(options.floor.is_finite() && options.floor > 0.0) {
            return config("regularisation floor must be positive");
        }
        match &variant {
            FlowVariant::LinearCombo { alpha, beta } => check_combo(*alpha, *beta)?,
            FlowVariant::SpinAugmented { w1, w2 } => {
                check_out_of_plane(w1)?;
                check_out_of_plane(w2)?;
            }
            _ => {}
        }
        Ok(FlowModel { variant, options })
    }

    pub fn standard() -> FlowModel {
        FlowModel {
            variant: FlowVariant::Standard,
            options: EvalOptions::default(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.variant {
            FlowVariant::Standard => "standard",
            FlowVariant::Polar => "polar",
            FlowVariant::Eisenhart { .. } => "eisenhart",
            FlowVariant::SpinAugmented { .. } => "spin_augmented",
            FlowVariant::DbbHybrid => "dbb_hybrid",
            FlowVariant::LinearCombo { .. } => "linear_combo",
        }
    }

    /// The conserved densities of the model and their velocities. For the
    /// Eisenhart variant this is the closure on a single s-slice (the field
    /// is taken as the lifted field at s = 0).
    pub fn evaluate(&self, f: &RealPairField) -> Result<ModelEval> {
        let o = &self.options;
        let charges = || [f.psi1.clone(), f.psi2.clone()];
        Ok(match &self.variant {
            FlowVariant::Standard | FlowVariant::Eisenhart { .. } => ModelEval {
                densities: charges(),
                velocities: velocities_standard_with(f, o),
            },
            FlowVariant::Polar => ModelEval {
                densities: charges(),
                velocities: velocities_polar_with(&polar_decompose(f), o),
            },
            FlowVariant::SpinAugmented { w1, w2 } => ModelEval {
                densities: charges(),
                velocities: velocities_spin_augmented_with(f, *w1, *w2, o)?,
            },
            FlowVariant::DbbHybrid => {
                let h = velocities_dbb_hybrid_with(f, o)?;
                ModelEval {
                    densities: h.densities,
                    velocities: h.velocities,
                }
            }
            FlowVariant::LinearCombo { alpha, beta } => {
                let c = velocities_linear_combo_with(f, *alpha, *beta, o)?;
                ModelEval {
                    densities: c.densities,
                    velocities: c.velocities,
                }
            }
        })
    }
}

fn check_combo(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha.is_finite() && beta.is_finite()) || alpha == 0.0 || beta == 0.0 {
        return config(format!("linear-combination weights must be finite and nonzero, got ({alpha}, {beta})"));
    }
    Ok(())
}

fn check_out_of_plane(w: &[f64; 3]) -> Result<()> {
    if w.iter().any(|c| !c.is_finite()) || w[0] != 0.0 || w[1] != 0.0 {
        return config(format!("spin vector must point out of plane, got {w:?}"));
    }
    Ok(())
}

fn max_abs(y: &[f64]) -> f64 {
    y.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn mask_above(y: &[f64], floor: f64) -> Vec<bool> {
    let cut = floor * max_abs(y);
    y.iter().map(|v| v.abs() >= cut && v.abs() > 0.0).collect()
}

/// `v₁ = (ħ/2m)∇ψ₂/ψ₁`, `v₂ = −(ħ/2m)∇ψ₁/ψ₂`.
pub fn velocities_standard(f: &RealPairField) -> VelocityPair {
    velocities_standard_with(f, &EvalOptions::default())
}

pub fn velocities_standard_with(f: &RealPairField, o: &EvalOptions) -> VelocityPair {
    let [g1, g2] = f.gradients(o.stencil);
    let k = f.units.half_ratio();
    let defined = [mask_above(&f.psi1, o.floor), mask_above(&f.psi2, o.floor)];
    let ratio = |num: &[f64], den: &[f64], mask: &[bool], sign: f64| -> Vec<f64> {
        num.par_iter()
            .zip(den.par_iter())
            .zip(mask.par_iter())
            .map(|((n, d), m)| if *m { sign * k * n / d } else { f64::NAN })
            .collect()
    };
    let v1 = g2.iter().map(|g| ratio(g, &f.psi1, &defined[0], 1.0)).collect();
    let v2 = g1.iter().map(|g| ratio(g, &f.psi2, &defined[1], -1.0)).collect();
    VelocityPair { v: [v1, v2], defined }
}

/// Polar form: `v₁ = ∇S/2m + (ħ/4m)tan(S/ħ)∇log ρ`,
/// `v₂ = ∇S/2m − (ħ/4m)cot(S/ħ)∇log ρ`.
pub fn velocities_polar(p: &PolarField) -> VelocityPair {
    velocities_polar_with(p, &EvalOptions::default())
}

pub fn velocities_polar_with(p: &PolarField, o: &EvalOptions) -> VelocityPair {
    let (d_rho, d_s) = p.gradients(o.stencil);
    let (hbar, m) = (p.units.hbar, p.units.mass);
    let rmax = p.rho.iter().cloned().fold(0.0, f64::max);
    let n = p.rho.len();
    let mut defined = [vec![false; n], vec![false; n]];
    for i in 0..n {
        let ok = !p.undefined[i] && p.rho[i] > o.floor * o.floor * rmax;
        let (sn, cs) = (p.phase[i] / hbar).sin_cos();
        defined[0][i] = ok && cs.abs() > POLAR_SINGULAR_MARGIN;
        defined[1][i] = ok && sn.abs() > POLAR_SINGULAR_MARGIN;
    }
    let mut v = [Vec::new(), Vec::new()];
    for (dr, ds) in d_rho.iter().zip(&d_s) {
        let mut v1 = vec![f64::NAN; n];
        let mut v2 = vec![f64::NAN; n];
        for i in 0..n {
            let theta = p.phase[i] / hbar;
            let dlog = dr[i] / p.rho[i];
            if defined[0][i] {
                v1[i] = ds[i] / (2.0 * m) + hbar / (4.0 * m) * theta.tan() * dlog;
            }
            if defined[1][i] {
                v2[i] = ds[i] / (2.0 * m) - hbar / (4.0 * m) * dlog / theta.tan();
            }
        }
        v[0].push(v1);
        v[1].push(v2);
    }
    VelocityPair { v, defined }
}

/// Pointwise `cos²(S/ħ)v₁ + sin²(S/ħ)v₂ − ∇S/2m`, max-norm over components;
/// NaN where either velocity or the phase is undefined.
pub fn mean_identity_residual(f: &RealPairField) -> Vec<f64> {
    mean_identity_residual_with(f, &EvalOptions::default())
}

pub fn mean_identity_residual_with(f: &RealPairField, o: &EvalOptions) -> Vec<f64> {
    mean_identity_residual_of(f, &velocities_standard_with(f, o), o)
}

/// Residual for given velocities; used to run negative controls.
pub fn mean_identity_residual_of(f: &RealPairField, vel: &VelocityPair, o: &EvalOptions) -> Vec<f64> {
    let p = polar_decompose(f);
    let (_, d_s) = p.gradients(o.stencil);
    let (hbar, m) = (f.units.hbar, f.units.mass);
    (0..f.len())
        .map(|i| {
            if p.undefined[i] || !vel.defined[0][i] || !vel.defined[1][i] {
                return f64::NAN;
            }
            let (sn, cs) = (p.phase[i] / hbar).sin_cos();
            (0..d_s.len())
                .map(|k| (cs * cs * vel.v[0][k][i] + sn * sn * vel.v[1][k][i] - d_s[k][i] / (2.0 * m)).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Max of a residual array ignoring NaN entries.
pub fn nan_max(y: &[f64]) -> f64 {
    y.iter().filter(|v| !v.is_nan()).fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OnePhaseReport {
    pub holds: bool,
    pub max_gap: f64,
    /// Grid index and coordinates of the largest `|v₁ − v₂|` when the criterion fails.
    pub witness: Option<(usize, Vec<f64>)>,
}

/// True iff `max |v₁ − v₂| < tol` over points where both are defined.
pub fn one_phase_criterion(f: &RealPairField, tol: f64) -> OnePhaseReport {
    one_phase_criterion_with(f, tol, &EvalOptions::default())
}

pub fn one_phase_criterion_with(f: &RealPairField, tol: f64, o: &EvalOptions) -> OnePhaseReport {
    let vel = velocities_standard_with(f, o);
    let mut best = (0.0, None);
    for i in 0..f.len() {
        if !(vel.defined[0][i] && vel.defined[1][i]) {
            continue;
        }
        let gap = (0..vel.v[0].len())
            .map(|k| (vel.v[0][k][i] - vel.v[1][k][i]).abs())
            .fold(0.0, f64::max);
        if best.1.is_none() || gap > best.0 {
            best = (gap, Some(i));
        }
    }
    let holds = best.0 < tol;
    OnePhaseReport {
        holds,
        max_gap: best.0,
        witness: if holds {
            None
        } else {
            best.1.map(|i| (i, f.grid.coords(i)))
        },
    }
}

/// `ṽ_a = (ψ_a v_a + ψ̄_a v̄_a)/(ψ_a + ψ̄_a)` for the sum of two fields. Where
/// a term's own velocity is masked its flux `ψ_a v_a = ±(ħ/2m)∇ψ_b` is used.
pub fn superposition_velocity(f: &RealPairField, g: &RealPairField) -> Result<VelocityPair> {
    superposition_velocity_with(f, g, &EvalOptions::default())
}

pub fn superposition_velocity_with(f: &RealPairField, g: &RealPairField, o: &EvalOptions) -> Result<VelocityPair> {
    if f.grid != g.grid {
        return config("superposed fields must share a grid");
    }
    let k = f.units.half_ratio();
    let flux = |h: &RealPairField| -> [Vec<Vec<f64>>; 2] {
        let vel = velocities_standard_with(h, o);
        let [g1, g2] = h.gradients(o.stencil);
        let mut out = [Vec::new(), Vec::new()];
        for (a, (other, sign)) in [(g2, 1.0), (g1, -1.0)].into_iter().enumerate() {
            let comp = h.component(a);
            out[a] = other
                .iter()
                .enumerate()
                .map(|(c, d)| {
                    (0..comp.len())
                        .map(|i| {
                            if vel.defined[a][i] {
                                comp[i] * vel.v[a][c][i]
                            } else {
                                sign * k * d[i]
                            }
                        })
                        .collect()
                })
                .collect();
        }
        out
    };
    let (jf, jg) = (flux(f), flux(g));
    let mut v = [Vec::new(), Vec::new()];
    let mut defined = [Vec::new(), Vec::new()];
    for a in 0..2 {
        let sum: Vec<f64> = f.component(a).iter().zip(g.component(a)).map(|(x, y)| x + y).collect();
        defined[a] = mask_above(&sum, o.floor);
        v[a] = jf[a]
            .iter()
            .zip(&jg[a])
            .map(|(x, y)| {
                (0..sum.len())
                    .map(|i| if defined[a][i] { (x[i] + y[i]) / sum[i] } else { f64::NAN })
                    .collect()
            })
            .collect();
    }
    Ok(VelocityPair { v, defined })
}

/// Two-particle product state on the product grid with its velocities and
/// the deviation of phase-1's first component from the one-body closure.
#[derive(Clone, Debug)]
pub struct ProductState {
    pub field: RealPairField,
    pub velocities: VelocityPair,
    /// `|v₁,₁(x₁, x₂) − (ħ/2m)∂₁ψ₂/ψ₁(x₁)|`.
    pub gap: Vec<f64>,
    /// The same comparison for the second component against the particle-2 closure.
    pub gap_second: Vec<f64>,
}

impl ProductState {
    /// `max |ρ_total − ρ_ψ ⊗ ρ_φ|`.
    pub fn factorization_residual(&self, psi: &RealPairField, phi: &RealPairField) -> f64 {
        let rp = crate::fields::density(psi);
        let rf = crate::fields::density(phi);
        let rt = crate::fields::density(&self.field);
        let n1 = rf.len();
        rt.iter()
            .enumerate()
            .map(|(idx, r)| (r - rp[idx / n1] * rf[idx % n1]).abs())
            .fold(0.0, f64::max)
    }
}

pub fn product_state_velocities(psi: &RealPairField, phi: &RealPairField) -> Result<ProductState> {
    product_state_velocities_with(psi, phi, &EvalOptions::default())
}

pub fn product_state_velocities_with(
    psi: &RealPairField,
    phi: &RealPairField,
    o: &EvalOptions,
) -> Result<ProductState> {
    if psi.grid.dim() != 1 || phi.grid.dim() != 1 {
        return config("product states are built from two 1D fields");
    }
    if psi.units != phi.units {
        return config("product factors must share a unit system");
    }
    let grid = SpatialGrid::plane(*psi.grid.axis(0), *phi.grid.axis(0));
    let (n0, n1) = (psi.len(), phi.len());
    let mut p1 = Vec::with_capacity(n0 * n1);
    let mut p2 = Vec::with_capacity(n0 * n1);
    for i in 0..n0 {
        for j in 0..n1 {
            let v = psi.value(i) * phi.value(j);
            p1.push(v.re);
            p2.push(v.im);
        }
    }
    let mut field = RealPairField::from_samples(grid, psi.units, p1, p2, psi.time)?;
    if let (Some(ea), Some(eb)) = (&psi.exact, &phi.exact) {
        let mut d = [[vec![0.0; n0 * n1], vec![0.0; n0 * n1]], [vec![0.0; n0 * n1], vec![0.0; n0 * n1]]];
        for i in 0..n0 {
            let da = Complex64::new(ea.d_psi1[0][i], ea.d_psi2[0][i]);
            for j in 0..n1 {
                let db = Complex64::new(eb.d_psi1[0][j], eb.d_psi2[0][j]);
                let g0 = da * phi.value(j);
                let g1 = psi.value(i) * db;
                let idx = i * n1 + j;
                d[0][0][idx] = g0.re;
                d[1][0][idx] = g0.im;
                d[0][1][idx] = g1.re;
                d[1][1][idx] = g1.im;
            }
        }
        let [d1, d2] = d;
        field.exact = Some(crate::fields::ExactGradients {
            d_psi1: d1.to_vec(),
            d_psi2: d2.to_vec(),
        });
    }
    let velocities = velocities_standard_with(&field, o);
    let one_body = |f: &RealPairField| -> Vec<f64> { velocities_standard_with(f, o).v[0][0].clone() };
    let (b1, b2) = (one_body(psi), one_body(phi));
    let gap = (0..n0 * n1)
        .map(|idx| {
            if velocities.defined[0][idx] {
                (velocities.v[0][0][idx] - b1[idx / n1]).abs()
            } else {
                f64::NAN
            }
        })
        .collect();
    let gap_second = (0..n0 * n1)
        .map(|idx| {
            if velocities.defined[0][idx] {
                (velocities.v[0][1][idx] - b2[idx % n1]).abs()
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(ProductState {
        field,
        velocities,
        gap,
        gap_second,
    })
}

/// The divergence-free current `∇ψ_a × w` restricted to the plane:
/// `(w ∂_yψ_a, −w ∂_xψ_a)`.
pub fn spin_current(f: &RealPairField, w: [f64; 3], phase: usize, stencil: Stencil) -> Result<[Vec<f64>; 2]> {
    if f.grid.dim() != 2 {
        return config(
            "the spin term needs a 2D grid: for a 1D field ∇ψ is parallel to x and an out-of-plane w gives no in-line current",
        );
    }
    check_out_of_plane(&w)?;
    let g = f.gradients(stencil);
    let (gx, gy) = (&g[phase][0], &g[phase][1]);
    Ok([
        gy.iter().map(|d| w[2] * d).collect(),
        gx.iter().map(|d| -w[2] * d).collect(),
    ])
}

/// Standard velocities plus `(∇ψ_a × w_a)/ψ_a`.
pub fn velocities_spin_augmented(f: &RealPairField, w1: [f64; 3], w2: [f64; 3]) -> Result<VelocityPair> {
    velocities_spin_augmented_with(f, w1, w2, &EvalOptions::default())
}

pub fn velocities_spin_augmented_with(
    f: &RealPairField,
    w1: [f64; 3],
    w2: [f64; 3],
    o: &EvalOptions,
) -> Result<VelocityPair> {
    let c = [spin_current(f, w1, 0, o.stencil)?, spin_current(f, w2, 1, o.stencil)?];
    let mut vel = velocities_standard_with(f, o);
    for (a, current) in c.iter().enumerate() {
        let comp = f.component(a);
        for (k, cur) in current.iter().enumerate() {
            for i in 0..comp.len() {
                if vel.defined[a][i] {
                    vel.v[a][k][i] += cur[i] / comp[i];
                }
            }
        }
    }
    Ok(vel)
}

#[derive(Clone, Debug)]
pub struct DbbHybrid {
    pub velocities: VelocityPair,
    /// `ρ₁ = ψ₁`, `ρ₂ = ψ₁² + ψ₂²`.
    pub densities: [Vec<f64>; 2],
    /// Branch of `±(ρ₂ − ρ₁²)^{1/2}` at each point.
    pub sign: Vec<i8>,
    /// The signed root, i.e. the reconstructed ψ₂.
    pub root: Vec<f64>,
}

/// Longest run of degenerate points the branch tracker will bridge.
pub const MAX_BRANCH_GAP: usize = 3;

/// Hybrid model: `v₁ = (ħ/2m)∇r/ρ₁`, `v₂ = (ħ/m)∇ atan(r/ρ₁)` with
/// `r = ±(ρ₂ − ρ₁²)^{1/2}`. The branch is seeded from the sign of ψ₂ at the
/// first non-degenerate point of each line along axis 0 and then continued by
/// comparing linear extrapolations from both sides of every candidate zero.
pub fn velocities_dbb_hybrid(f: &RealPairField) -> Result<DbbHybrid> {
    velocities_dbb_hybrid_with(f, &EvalOptions::default())
}

pub fn velocities_dbb_hybrid_with(f: &RealPairField, o: &EvalOptions) -> Result<DbbHybrid> {
    let rho1 = f.psi1.clone();
    let rho2 = crate::fields::density(f);
    let n = rho1.len();
    let scale = rho2.iter().cloned().fold(0.0, f64::max).sqrt();
    let eps = o.floor * scale;
    let gap: Vec<f64> = rho1.iter().zip(&rho2).map(|(a, b)| (b - a * a).max(0.0)).collect();
    let degenerate: Vec<bool> = gap.iter().map(|g| *g < eps * eps).collect();
    let mag: Vec<f64> = gap.iter().map(|g| g.sqrt()).collect();

    let (n0, n1) = (f.grid.axis(0).n, if f.grid.dim() == 2 { f.grid.axis(1).n } else { 1 });
    let mut sign = vec![0i8; n];
    for c in 0..n1 {
        let line: Vec<usize> = (0..n0).map(|r| r * n1 + c).collect();
        let lm: Vec<f64> = line.iter().map(|&i| mag[i]).collect();
        let ld: Vec<bool> = line.iter().map(|&i| degenerate[i]).collect();
        let seed = line.iter().find(|&&i| !degenerate[i]).map(|&i| f.psi2[i]);
        let signs = track_branch(&lm, &ld, seed)?;
        for (k, &i) in line.iter().enumerate() {
            sign[i] = signs[k];
        }
    }
    let root: Vec<f64> = (0..n).map(|i| sign[i] as f64 * mag[i]).collect();

    let (hbar, m) = (f.units.hbar, f.units.mass);
    let d_rho1;
    let d_root: Vec<Vec<f64>>;
    let mut root_ok = vec![true; n];
    match &f.exact {
        Some(ex) => {
            d_rho1 = ex.d_psi1.clone();
            d_root = (0..f.grid.dim())
                .map(|k| {
                    (0..n)
                        .map(|i| {
                            let d_rho2 = 2.0 * (f.psi1[i] * ex.d_psi1[k][i] + f.psi2[i] * ex.d_psi2[k][i]);
                            if degenerate[i] {
                                root_ok[i] = false;
                                f64::NAN
                            } else {
                                (d_rho2 - 2.0 * rho1[i] * ex.d_psi1[k][i]) / (2.0 * root[i])
                            }
                        })
                        .collect()
                })
                .collect();
        }
        None => {
            d_rho1 = grid_gradient(&f.grid, &rho1, o.stencil);
            d_root = grid_gradient(&f.grid, &root, o.stencil);
        }
    }
    let def1: Vec<bool> = mask_above(&rho1, o.floor).iter().zip(&root_ok).map(|(a, b)| *a && *b).collect();
    let rmax = rho2.iter().cloned().fold(0.0, f64::max);
    let def2: Vec<bool> = (0..n).map(|i| root_ok[i] && rho2[i] > o.floor * o.floor * rmax).collect();
    let mut v = [Vec::new(), Vec::new()];
    for k in 0..f.grid.dim() {
        v[0].push(
            (0..n)
                .map(|i| if def1[i] { hbar / (2.0 * m) * d_root[k][i] / rho1[i] } else { f64::NAN })
                .collect(),
        );
        v[1].push(
            (0..n)
                .map(|i| {
                    if def2[i] {
                        hbar / m * (rho1[i] * d_root[k][i] - root[i] * d_rho1[k][i]) / rho2[i]
                    } else {
                        f64::NAN
                    }
                })
                .collect(),
        );
    }
    Ok(DbbHybrid {
        velocities: VelocityPair {
            v,
            defined: [def1, def2],
        },
        densities: [rho1, rho2],
        sign,
        root,
    })
}

/// Assigns ±1 along a line of magnitudes `|r|`. Degenerate points inside a
/// run take the sign of the point after the run.
fn track_branch(mag: &[f64], degenerate: &[bool], seed: Option<f64>) -> Result<Vec<i8>> {
    let n = mag.len();
    let Some(seed) = seed else {
        return Err(Error::BranchAmbiguity { start: 0, len: n });
    };
    let good: Vec<usize> = (0..n).filter(|&i| !degenerate[i]).collect();
    let mut sign = vec![0i8; n];
    let mut s: i8 = if seed < 0.0 { -1 } else { 1 };
    // degenerate prefix follows the first good point
    for x in sign.iter_mut().take(good[0]) {
        *x = s;
    }
    sign[good[0]] = s;
    for w in 0..good.len() - 1 {
        let (i, j) = (good[w], good[w + 1]);
        let run = j - i - 1;
        if run > MAX_BRANCH_GAP {
            return Err(Error::BranchAmbiguity { start: i + 1, len: run });
        }
        let prev = (w > 0).then(|| good[w - 1]);
        let next = good.get(w + 2).copied();
        if let (Some(p), Some(q)) = (prev, next) {
            let vee = mag[p] > mag[i] && mag[q] > mag[j];
            if run > 0 || vee {
                let si = s as f64;
                let ri = si * mag[i];
                let slope_l = (ri - si * mag[p]) / (i - p) as f64;
                let err = |t: f64| {
                    let rj = t * mag[j];
                    let slope_r = (t * mag[q] - rj) / (q - j) as f64;
                    let left = ri + slope_l * (j - i) as f64;
                    let right = rj - slope_r * (j - i) as f64;
                    (left - rj).abs() + (right - ri).abs()
                };
                if err(-si) < err(si) {
                    s = -s;
                }
            }
        }
        for x in sign.iter_mut().take(j + 1).skip(i + 1) {
            *x = s;
        }
    }
    let last = *good.last().unwrap();
    for x in sign.iter_mut().skip(last + 1) {
        *x = s;
    }
    Ok(sign)
}

#[derive(Clone, Debug)]
pub struct LinearCombo {
    pub velocities: VelocityPair,
    /// `ρ₁ = αψ₁ + βψ₂`, `ρ₂ = αψ₁ − βψ₂`.
    pub densities: [Vec<f64>; 2],
    pub gamma: f64,
    pub delta: f64,
}

/// `γ = (α² − β²)/αβ`, `δ = (α² + β²)/αβ`.
pub fn combo_coefficients(alpha: f64, beta: f64) -> Result<(f64, f64)> {
    check_combo(alpha, beta)?;
    let ab = alpha * beta;
    Ok(((alpha * alpha - beta * beta) / ab, (alpha * alpha + beta * beta) / ab))
}

/// Inverse map `ψ₁ = (ρ₁ + ρ₂)/2α`, `ψ₂ = (ρ₁ − ρ₂)/2β`.
pub fn combo_inverse(rho1: &[f64], rho2: &[f64], alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    rho1.iter()
        .zip(rho2)
        .map(|(a, b)| ((a + b) / (2.0 * alpha), (a - b) / (2.0 * beta)))
        .unzip()
}

/// `v₁ = (ħ/4mρ₁)(γ∇ρ₁ − δ∇ρ₂)`, `v₂ = (ħ/4mρ₂)(δ∇ρ₁ − γ∇ρ₂)`.
pub fn velocities_linear_combo(f: &RealPairField, alpha: f64, beta: f64) -> Result<LinearCombo> {
    velocities_linear_combo_with(f, alpha, beta, &EvalOptions::default())
}

pub fn velocities_linear_combo_with(f: &RealPairField, alpha: f64, beta: f64, o: &EvalOptions) -> Result<LinearCombo> {
    let (gamma, delta) = combo_coefficients(alpha, beta)?;
    let rho1: Vec<f64> = f.psi1.iter().zip(&f.psi2).map(|(a, b)| alpha * a + beta * b).collect();
    let rho2: Vec<f64> = f.psi1.iter().zip(&f.psi2).map(|(a, b)| alpha * a - beta * b).collect();
    let [g1, g2] = f.gradients(o.stencil);
    let d1: Vec<Vec<f64>> = g1.iter().zip(&g2).map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect()).collect();
    let d2: Vec<Vec<f64>> = g1.iter().zip(&g2).map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x - beta * y).collect()).collect();
    let c = f.units.hbar / (4.0 * f.units.mass);
    let defined = [mask_above(&rho1, o.floor), mask_above(&rho2, o.floor)];
    let n = rho1.len();
    let mut v = [Vec::new(), Vec::new()];
    for k in 0..d1.len() {
        v[0].push(
            (0..n)
                .map(|i| if defined[0][i] { c / rho1[i] * (gamma * d1[k][i] - delta * d2[k][i]) } else { f64::NAN })
                .collect(),
        );
        v[1].push(
            (0..n)
                .map(|i| if defined[1][i] { c / rho2[i] * (delta * d1[k][i] - gamma * d2[k][i]) } else { f64::NAN })
                .collect(),
        );
    }
    Ok(LinearCombo {
        velocities: VelocityPair { v, defined },
        densities: [rho1, rho2],
        gamma,
        delta,
    })
}
