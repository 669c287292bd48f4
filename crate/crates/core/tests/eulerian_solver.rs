use std::f64::consts::PI;

use biflow::error::Phase;
use biflow::eulerian::{
    analytic_solution, conservation_residual, conservation_residual_with, evolve_linear, evolve_linear_sampled, relative_l2,
    trace_in_fields,
};
use biflow::fields::{density, make_state, RealPairField};
use biflow::{FlowModel, Potential, SpatialGrid, StateSpec, UnitSystem};
use num_complex::Complex64;

fn units() -> UnitSystem {
    UnitSystem::default()
}

/// Spreading free Gaussian, ħ = m = 1, density standard deviation σ at t = 0.
fn free_gaussian(sigma: f64, x: f64, t: f64) -> Complex64 {
    let a = Complex64::new(1.0, t / (2.0 * sigma * sigma));
    (2.0 * PI * sigma * sigma).powf(-0.25) / a.sqrt() * (-(x * x) / (4.0 * sigma * sigma * a)).exp()
}

#[test]
fn periodic_plane_wave_rotates_with_constant_density() {
    let g = SpatialGrid::line(0.0, 2.0 * PI, 128, true).unwrap();
    let f0 = make_state(&StateSpec::PlaneWave { k: 1.0 }, &g, units()).unwrap();
    let s = evolve_linear(&f0, &Potential::Zero, 1e-3, 0.5).unwrap();
    for f in &s.fields {
        assert!(density(f).iter().all(|r| (r - 1.0).abs() < 1e-10));
    }
    let last = s.last();
    // phase at x = 0 advances by -ħk²t/2m up to the scheme's dispersion error
    let phase = last.psi2[0].atan2(last.psi1[0]);
    assert!((phase + 0.25).abs() < 1e-3, "{phase}");
}

#[test]
fn free_gaussian_matches_closed_form() {
    let g = SpatialGrid::line(-20.0, 20.0, 8001, false).unwrap();
    let sigma = 1.0;
    let f0 = make_state(&StateSpec::Gaussian { center: 0.0, width: sigma, k: 0.0 }, &g, units()).unwrap();
    let s = evolve_linear_sampled(&f0, &Potential::Zero, 5e-4, 0.5, 1000).unwrap();
    let got = s.last();
    let z: Vec<Complex64> = g.axis(0).points().into_iter().map(|x| free_gaussian(sigma, x, 0.5)).collect();
    let exact = RealPairField::from_samples(g.clone(), units(), z.iter().map(|v| v.re).collect(), z.iter().map(|v| v.im).collect(), 0.5).unwrap();
    let e = relative_l2(got, &exact);
    assert!(e < 1e-6, "{e}");
    let n0 = f0.norm();
    assert!((got.norm() - n0).abs() / n0 < 1e-10);
}

#[test]
fn coherent_state_oscillates_rigidly() {
    let g = SpatialGrid::line(-10.0, 10.0, 8001, false).unwrap();
    let f0 = make_state(&StateSpec::CoherentState { omega: 1.0, x0: 1.0 }, &g, units()).unwrap();
    let v = Potential::harmonic(1.0).unwrap();
    let t = 1.0;
    let s = evolve_linear_sampled(&f0, &v, 5e-4, t, 2000).unwrap();
    let rho = density(s.last());
    let c = t.cos();
    let worst = g
        .axis(0)
        .points()
        .iter()
        .zip(&rho)
        .map(|(x, r)| (r - (-(x - c).powi(2)).exp() / PI.sqrt()).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn closed_forms_at_zero_and_one_period() {
    let g = SpatialGrid::line(-8.0, 8.0, 801, false).unwrap();
    let spec = StateSpec::CoherentState { omega: 1.0, x0: 1.5 };
    let v = Potential::harmonic(1.0).unwrap();
    let f0 = make_state(&spec, &g, units()).unwrap();
    let a0 = analytic_solution(&spec, &v, &g, units(), 0.0).unwrap();
    assert_eq!(a0.psi1, f0.psi1);
    let a = analytic_solution(&spec, &v, &g, units(), 2.0 * PI).unwrap();
    // global phase e^{-iπ} from the zero-point energy
    assert!(a.psi1.iter().zip(&f0.psi1).all(|(x, y)| (x + y).abs() < 1e-12));
    assert!(a.psi2.iter().zip(&f0.psi2).all(|(x, y)| (x + y).abs() < 1e-12));

    let pw = StateSpec::PlaneWave { k: 2.0 };
    let a = analytic_solution(&pw, &Potential::Zero, &g, units(), 0.3).unwrap();
    for (i, x) in g.axis(0).points().into_iter().enumerate() {
        let z = Complex64::from_polar(1.0, 2.0 * x - 2.0 * 0.3);
        assert!((a.psi1[i] - z.re).abs() < 1e-12 && (a.psi2[i] - z.im).abs() < 1e-12);
    }
    assert!(analytic_solution(&StateSpec::benchmark(), &Potential::Zero, &g, units(), 0.1).is_err());
}

#[test]
fn plane_wave_conservation_residual_vanishes() {
    // the oracle's dispersion error grows like k⁴Δx² while rounding grows like
    // 1/Δx², so a long wave keeps both well below the limit
    let g = SpatialGrid::line(0.0, 8.0 * PI, 8192, true).unwrap();
    let f0 = make_state(&StateSpec::PlaneWave { k: 0.25 }, &g, units()).unwrap();
    let s = evolve_linear(&f0, &Potential::Zero, 1e-3, 0.01).unwrap();
    let r = conservation_residual(&s, &FlowModel::standard()).unwrap().max();
    assert!(r < 1e-8, "{r}");
}

fn residual(n: usize, dt: f64, double_v1: bool) -> f64 {
    let g = SpatialGrid::line(-20.0, 20.0, n, false).unwrap();
    let f0 = make_state(&StateSpec::benchmark(), &g, units()).unwrap();
    let s = evolve_linear(&f0, &Potential::Zero, dt, 0.05).unwrap();
    conservation_residual_with(&s, &FlowModel::standard(), |e| {
        if double_v1 {
            e.velocities.v[0][0].iter_mut().for_each(|v| *v *= 2.0);
        }
    })
    .unwrap()
    .max()
}

#[test]
fn benchmark_residual_is_second_order() {
    let (coarse, fine) = (residual(1001, 1e-3, false), residual(2001, 5e-4, false));
    assert!(coarse / fine >= 3.5, "{coarse} {fine}");
    assert_eq!(coarse, conservation_residual(
        &evolve_linear(
            &make_state(&StateSpec::benchmark(), &SpatialGrid::line(-20.0, 20.0, 1001, false).unwrap(), units()).unwrap(),
            &Potential::Zero,
            1e-3,
            0.05
        )
        .unwrap(),
        &FlowModel::standard()
    )
    .unwrap()
    .max());
}

#[test]
fn doubled_velocity_residual_does_not_converge() {
    let (coarse, fine) = (residual(1001, 1e-3, true), residual(2001, 5e-4, true));
    assert!(fine > 1e-2 && coarse / fine < 1.5, "{coarse} {fine}");
}

#[test]
fn traced_plane_wave_paths_are_straight() {
    let g = SpatialGrid::line(0.0, 2.0 * PI, 256, true).unwrap();
    let f0 = make_state(&StateSpec::PlaneWave { k: 1.0 }, &g, units()).unwrap();
    let s = evolve_linear(&f0, &Potential::Zero, 1e-3, 0.1).unwrap();
    // between the nodes of ψ₁ at π/2 and of ψ₂ at π, which move with the paths
    let labels: Vec<f64> = (0..16).map(|i| 1.8 + 0.07 * i as f64).collect();
    for phase in [Phase::One, Phase::Two] {
        let b = trace_in_fields(&s, &FlowModel::standard(), &labels, phase).unwrap();
        assert_eq!(b.history.len(), s.fields.len());
        for snap in &b.history {
            for (q, q0) in snap.positions.iter().zip(&labels) {
                assert!((q - q0 - 0.5 * snap.t).abs() < 1e-6, "{q} {q0} {}", snap.t);
            }
        }
    }
}

#[test]
fn tracing_into_a_masked_region_is_reported() {
    // ψ₂ ≡ 0 for a real Gaussian at t = 0: phase 2 has no velocity there
    let g = SpatialGrid::line(-10.0, 10.0, 1001, false).unwrap();
    let f0 = make_state(&StateSpec::Gaussian { center: 0.0, width: 1.0, k: 0.0 }, &g, units()).unwrap();
    let s = evolve_linear(&f0, &Potential::Zero, 1e-3, 0.01).unwrap();
    let e = trace_in_fields(&s, &FlowModel::standard(), &[0.5, 1.0], Phase::Two).unwrap_err();
    assert!(matches!(e, biflow::Error::SingularDensity { .. }), "{e}");
}
