use std::f64::consts::PI;

use biflow::eisenhart::{
    eisenhart_velocities, extract, lift, lift_with_offset, propagate_eisenhart, s_period, wave5d_residual, wave5d_residual_signed,
    EisenhartField, EisenhartOptions,
};
use biflow::eulerian::{analytic_solution, evolve_linear, relative_l2, resample};
use biflow::fields::{gauge_rotate, make_state, RealPairField};
use biflow::flow::velocities_standard;
use biflow::lagrangian::{propagate, PropagationOptions};
use biflow::{Error, Potential, SpatialGrid, StateSpec, UnitSystem};
use num_complex::Complex64;

fn units() -> UnitSystem {
    UnitSystem::default()
}

fn line(min: f64, max: f64, n: usize) -> SpatialGrid {
    SpatialGrid::line(min, max, n, false).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn lift_is_a_rotation_in_s() {
    let g = line(0.0, 1.0, 8);
    let n = g.len();
    let f = RealPairField::from_samples(g, units(), vec![1.0; n], vec![0.0; n], 0.0).unwrap();
    let e = lift(&f, 8).unwrap();
    assert_eq!(e.ns(), 8);
    assert!((e.s[1] * 8.0 - s_period(&units())).abs() < 1e-15);
    // s = 0 row
    assert!(e.phi1[..n].iter().all(|v| (v - 1.0).abs() < 1e-15));
    assert!(e.phi2[..n].iter().all(|v| v.abs() < 1e-15));
    // s = π/2 row: φ = (0, 1)
    let row = 2 * n..3 * n;
    assert!(e.phi1[row.clone()].iter().all(|v| v.abs() < 1e-15));
    assert!(e.phi2[row].iter().all(|v| (v - 1.0).abs() < 1e-15));
    assert!(lift(&f, 4).is_err());
}

#[test]
fn lift_then_extract_is_the_identity() {
    let g = line(-8.0, 8.0, 801);
    let f = make_state(&StateSpec::benchmark(), &g, units()).unwrap();
    let e = lift(&f, 16).unwrap();
    assert!(e.constraint_residual() < 1e-10, "{}", e.constraint_residual());
    let x = extract(&e).unwrap();
    assert!(x.spread < 1e-12);
    assert!(max_abs_diff(&x.field.psi1, &f.psi1) < 1e-12);
    assert!(max_abs_diff(&x.field.psi2, &f.psi2) < 1e-12);
}

#[test]
fn spurious_s_dependence_is_a_constraint_violation() {
    let g = line(-8.0, 8.0, 401);
    let f = make_state(&StateSpec::benchmark(), &g, units()).unwrap();
    let mut e = lift(&f, 16).unwrap();
    let nx = e.nx();
    for j in 0..e.ns() {
        let w = 1.0 + 0.1 * e.s[j].sin();
        for i in 0..nx {
            e.phi1[j * nx + i] *= w;
            e.phi2[j * nx + i] *= w;
        }
    }
    assert!(matches!(extract(&e), Err(Error::ConstraintViolation { .. })));
}

fn lifted_slices(fields: &[RealPairField], v: &Potential) -> Vec<EisenhartField> {
    fields.iter().map(|f| lift_with_offset(f, 16, 0.0, v.clone()).unwrap()).collect()
}

#[test]
fn lifted_free_plane_wave_solves_the_wave_equation() {
    let g = SpatialGrid::line(0.0, 2.0 * PI, 1024, true).unwrap();
    let dt = 1e-4;
    let spec = StateSpec::PlaneWave { k: 1.0 };
    let slices: Vec<RealPairField> = (0..3)
        .map(|n| analytic_solution(&spec, &Potential::Zero, &g, units(), 0.2 + n as f64 * dt).unwrap())
        .collect();
    let r = wave5d_residual(&lifted_slices(&slices, &Potential::Zero), dt).unwrap();
    assert!(r < 1e-8, "{r}");
}

/// Residual of the lifted oracle run of a coherent state in a harmonic well.
fn harmonic_residual(n: usize, dt: f64, v_sign: f64) -> f64 {
    let g = line(-8.0, 8.0, n);
    let v = Potential::harmonic(1.0).unwrap();
    let f0 = make_state(&StateSpec::CoherentState { omega: 1.0, x0: 1.0 }, &g, units()).unwrap();
    let s = evolve_linear(&f0, &v, dt, 0.02).unwrap();
    let k = s.fields.len() / 2;
    wave5d_residual_signed(&lifted_slices(&s.fields[k - 1..k + 2], &v), dt, v_sign).unwrap()
}

#[test]
fn harmonic_wave_residual_is_second_order() {
    let (coarse, fine) = (harmonic_residual(801, 2e-3, 1.0), harmonic_residual(1601, 1e-3, 1.0));
    assert!(coarse / fine >= 3.5, "{coarse} {fine}");
}

#[test]
fn flipped_potential_term_does_not_converge() {
    let (coarse, fine) = (harmonic_residual(801, 2e-3, -1.0), harmonic_residual(1601, 1e-3, -1.0));
    assert!(fine > 1e-2 && coarse / fine < 1.5, "{coarse} {fine}");
}

#[test]
fn s_velocity_is_the_potential_over_mass() {
    // x = 2 is node 900
    let g = line(-4.0, 4.0, 1201);
    let f = make_state(&StateSpec::benchmark(), &g, units()).unwrap();
    let v = Potential::harmonic(1.0).unwrap();
    let e = lift_with_offset(&f, 16, 0.0, v.clone()).unwrap();
    let vel = eisenhart_velocities(&e);
    let nx = e.nx();
    let xs = g.axis(0).points();
    let mut checked = 0;
    for a in 0..2 {
        for (p, u) in vel.u[a].iter().enumerate() {
            if vel.defined[a][p] {
                let target = 0.5 * xs[p % nx] * xs[p % nx];
                assert!((u - target).abs() < 1e-10, "phase {} at x = {}: {u}", a + 1, xs[p % nx]);
                checked += 1;
            }
        }
    }
    assert!(checked > nx * 16);
    let at2 = 3 * nx + 900;
    assert!((xs[900] - 2.0).abs() < 1e-12);
    assert!(vel.defined[0][at2] && (vel.u[0][at2] - 2.0).abs() < 1e-10);
}

#[test]
fn free_lift_velocities_are_the_row_closures() {
    let g = line(-6.0, 6.0, 601);
    let f = make_state(&StateSpec::benchmark(), &g, units()).unwrap().gridded();
    let e = lift(&f, 16).unwrap();
    let vel = eisenhart_velocities(&e);
    assert!(vel.u.iter().flatten().all(|u| u.is_nan() || *u == 0.0));
    let nx = e.nx();
    for j in [0, 5, 11] {
        let row = velocities_standard(&gauge_rotate(&f, e.s[j]));
        for (a, closure) in [row.v1(), row.v2()].into_iter().enumerate() {
            for i in 0..nx {
                let p = j * nx + i;
                if vel.defined[a][p] && row.defined[a][i] {
                    assert!((vel.v[a][p] - closure[i]).abs() < 1e-12);
                }
            }
        }
    }
}

fn lift_opts(t: f64) -> EisenhartOptions {
    EisenhartOptions {
        base: PropagationOptions {
            n_labels: 256,
            window: (-6.0, 6.0),
            max_time: t,
            ..PropagationOptions::default()
        },
        ..EisenhartOptions::default()
    }
}

fn free_gaussian() -> RealPairField {
    make_state(&StateSpec::Gaussian { center: 0.0, width: 2.0, k: 0.0 }, &line(-10.0, 10.0, 2001), units()).unwrap()
}

#[test]
fn without_potential_the_lift_reduces_to_gauge_rotated_rows() {
    let f0 = free_gaussian();
    let opts = lift_opts(0.05);
    let p = propagate_eisenhart(&f0, &Potential::Zero, &opts).unwrap();
    assert!(p.diagnostics.halt.is_none());
    assert!(p.bundles.iter().all(|b| b.q4_deviation() == 0.0));
    assert!(p.spread < 1e-4, "{}", p.spread);

    // every s₀ row on its own through the one-dimensional scheme, rotated back
    let mut base = opts.base.clone();
    base.max_time = p.field.time;
    let ns = p.bundles[0].labels_s.len();
    let mut z = vec![Complex64::new(0.0, 0.0); p.field.len()];
    for &s in &p.bundles[0].labels_s {
        let q = propagate(&gauge_rotate(&f0, s), &base).unwrap();
        let back = gauge_rotate(&resample(&q.field, &p.field.grid).unwrap(), -s);
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += Complex64::new(back.psi1[i], back.psi2[i]) / ns as f64;
        }
    }
    let mean = RealPairField::from_samples(
        p.field.grid.clone(),
        units(),
        z.iter().map(|v| v.re).collect(),
        z.iter().map(|v| v.im).collect(),
        p.field.time,
    )
    .unwrap();
    let l2 = relative_l2(&p.field, &mean);
    assert!(l2 < 1e-6, "{l2}");
}

#[test]
fn constant_potential_shifts_q4_and_the_global_phase() {
    let f0 = free_gaussian();
    let opts = lift_opts(0.05);
    let v0 = 0.5;
    let p = propagate_eisenhart(&f0, &Potential::Constant { value: v0 }, &opts).unwrap();
    let free = propagate_eisenhart(&f0, &Potential::Zero, &opts).unwrap();
    let t = p.field.time;
    assert!((t - 0.05).abs() < 1e-12);
    for b in &p.bundles {
        let bounds = b.bounds();
        for j in 0..b.ns() {
            for q4 in &b.q4[bounds[j]..bounds[j + 1]] {
                assert!((q4 - (b.labels_s[j] + v0 * t)).abs() < 1e-12);
            }
        }
    }
    let (a, b) = (p.field.grid.axis(0), free.field.grid.axis(0));
    let common = p.field.grid.restrict(a.min.max(b.min), a.max.min(b.max)).unwrap();
    let got = resample(&p.field, &common).unwrap();
    let reference = resample(&free.field, &common).unwrap();
    let phase = Complex64::from_polar(1.0, -v0 * t);
    let (e1, e2): (Vec<f64>, Vec<f64>) = reference
        .psi1
        .iter()
        .zip(&reference.psi2)
        .map(|(x, y)| {
            let z = Complex64::new(*x, *y) * phase;
            (z.re, z.im)
        })
        .unzip();
    let expect = RealPairField::from_samples(common.clone(), units(), e1, e2, t).unwrap();
    let l2 = relative_l2(&got, &expect);
    assert!(l2 < 1e-6, "{l2}");
}
