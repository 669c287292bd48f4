use std::f64::consts::PI;

use biflow::fields::{density, galilean_boost, gauge_rotate, make_state, polar_decompose, GammaMatrix, RealPairField};
use biflow::flow::velocities_standard;
use biflow::{SpatialGrid, StateSpec, UnitSystem};

fn line(min: f64, max: f64, n: usize) -> SpatialGrid {
    SpatialGrid::line(min, max, n, false).unwrap()
}

fn units() -> UnitSystem {
    UnitSystem::default()
}

fn benchmark(grid: &SpatialGrid) -> RealPairField {
    make_state(&StateSpec::benchmark(), grid, units()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn plane_wave_is_cos_and_sin() {
    let g = line(-3.0, 3.0, 61);
    let f = make_state(&StateSpec::PlaneWave { k: 1.0 }, &g, units()).unwrap();
    for (i, x) in g.axis(0).points().into_iter().enumerate() {
        assert!((f.psi1[i] - x.cos()).abs() < 1e-15);
        assert!((f.psi2[i] - x.sin()).abs() < 1e-15);
    }
}

#[test]
fn benchmark_components_bounded_away_from_zero_on_window() {
    let g = line(-6.0, 6.0, 1201);
    let f = benchmark(&g);
    // envelope of a width-2 Gaussian, written out independently
    let env = |x: f64| (2.0 * PI * 4.0).powf(-0.25) * (-x * x / 16.0).exp();
    let worst = g
        .axis(0)
        .points()
        .iter()
        .enumerate()
        .map(|(i, &x)| f.psi1[i].min(f.psi2[i]) / env(x))
        .fold(f64::INFINITY, f64::min);
    assert!(worst > 0.2, "min ratio {worst}");
}

#[test]
fn real_gaussian_density_is_squared_envelope() {
    let g = line(-5.0, 5.0, 101);
    let f = make_state(&StateSpec::Gaussian { center: 0.0, width: 1.0, k: 0.0 }, &g, units()).unwrap();
    let rho = density(&f);
    for (i, x) in g.axis(0).points().into_iter().enumerate() {
        let e = (2.0 * PI).powf(-0.5) * (-x * x / 2.0).exp();
        assert!((rho[i] - e).abs() < 1e-15);
        assert_eq!(f.psi2[i], 0.0);
    }
}

#[test]
fn polar_cases_and_roundtrip() {
    let g = line(0.0, 1.0, 8);
    let n = g.len();
    let f = RealPairField::from_samples(g.clone(), units(), vec![0.0; n], vec![1.0; n], 0.0).unwrap();
    let p = polar_decompose(&f);
    assert!(p.rho.iter().all(|r| (r - 1.0).abs() < 1e-15));
    assert!(p.phase.iter().all(|s| (s - PI / 2.0).abs() < 1e-15));

    let g = line(-8.0, 8.0, 1601);
    let f = benchmark(&g);
    let back = polar_decompose(&f).to_pair();
    assert!(max_abs_diff(&back.psi1, &f.psi1) < 1e-12);
    assert!(max_abs_diff(&back.psi2, &f.psi2) < 1e-12);
}

#[test]
fn phase_unwraps_continuously_for_fast_plane_wave() {
    let g = line(0.0, 10.0, 2001);
    let f = make_state(&StateSpec::PlaneWave { k: 3.0 }, &g, units()).unwrap();
    let p = polar_decompose(&f);
    for (i, x) in g.axis(0).points().into_iter().enumerate() {
        assert!((p.phase[i] - 3.0 * x).abs() < 1e-9);
    }
}

#[test]
fn gauge_rotation_cases() {
    let g = line(0.0, 1.0, 8);
    let n = g.len();
    let f = RealPairField::from_samples(g.clone(), units(), vec![1.0; n], vec![0.0; n], 0.0).unwrap();
    let r = gauge_rotate(&f, PI / 2.0);
    assert!(r.psi1.iter().all(|v| v.abs() < 1e-15));
    assert!(r.psi2.iter().all(|v| (v - 1.0).abs() < 1e-15));
    let same = gauge_rotate(&f, 0.0);
    assert_eq!(same.psi1, f.psi1);
    assert_eq!(same.psi2, f.psi2);
}

#[test]
fn gauge_rotation_preserves_density_and_shifts_phase() {
    let g = line(-8.0, 8.0, 801);
    let f = benchmark(&g);
    let rho = density(&f);
    let s0 = polar_decompose(&f).phase;
    for s in [0.1, 0.4, 0.77] {
        let r = gauge_rotate(&f, s);
        assert!(max_abs_diff(&density(&r), &rho) < 1e-14);
        let s1 = polar_decompose(&r).phase;
        assert!(s1.iter().zip(&s0).all(|(a, b)| (a - b - s).abs() < 1e-12));
    }
}

#[test]
fn boost_of_plane_wave_is_not_a_vector_transformation() {
    let g = SpatialGrid::line(0.0, 2.0 * PI, 257, true).unwrap();
    let f = make_state(&StateSpec::PlaneWave { k: 1.0 }, &g, units()).unwrap();
    let b = galilean_boost(&f, &[1.0], 0.0).unwrap();
    let v = velocities_standard(&b);
    // wavenumber 2 after the boost, so v1 = k/2 = 1, not v1 - u = -0.5
    let i = 64;
    assert!((v.v1()[i] - 1.0).abs() < 1e-6, "{}", v.v1()[i]);
    let x = g.axis(0).point(i);
    assert!((b.psi1[i] - (2.0 * x).cos()).abs() < 1e-8);
}

#[test]
fn zero_boost_is_identity_and_density_survives_boost() {
    let g = line(-10.0, 10.0, 2001);
    let f = benchmark(&g);
    let same = galilean_boost(&f, &[0.0], 0.0).unwrap();
    assert!(max_abs_diff(&same.psi1, &f.psi1) < 1e-15);
    assert!(galilean_boost(&{ let mut h = f.clone(); h.time = 0.5; h }, &[0.4], 0.5).is_err());

    let g = SpatialGrid::line(-20.0, 20.0, 4000, true).unwrap();
    let mut f1 = benchmark(&g);
    f1.time = 0.5;
    let b = galilean_boost(&f1, &[0.4], 0.5).unwrap();
    // x = x' + u t lies 20 nodes to the right
    let (rho, rho_b) = (density(&f1), density(&b));
    let worst = (0..g.len() - 20).map(|i| (rho_b[i] - rho[i + 20]).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-10, "{worst}");
}

#[test]
fn gamma_squares_to_minus_identity() {
    assert_eq!(GammaMatrix::square(), [[-1.0, 0.0], [0.0, -1.0]]);
    assert_eq!(GammaMatrix::apply(GammaMatrix::apply([0.3, -2.0])), [-0.3, 2.0]);
}

#[test]
fn invalid_state_parameters_are_rejected() {
    let g = line(-1.0, 1.0, 11);
    let bad = StateSpec::Gaussian { center: 0.0, width: -1.0, k: 0.0 };
    assert!(matches!(make_state(&bad, &g, units()), Err(biflow::Error::Config(_))));
}
