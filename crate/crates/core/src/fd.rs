//! Finite-difference and spectral derivative stencils on uniform samples.

use serde::Serialize;

/// Order of the central difference stencil. Non-periodic edges use one-sided
/// stencils of the same order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Default)]
pub enum Stencil {
    Second,
    #[default]
    Fourth,
}

impl Stencil {
    fn min_points(self) -> usize {
        match self {
            Stencil::Second => 3,
            Stencil::Fourth => 6,
        }
    }
}

/// First derivative of uniformly spaced samples.
pub fn derivative(y: &[f64], h: f64, periodic: bool, stencil: Stencil) -> Vec<f64> {
    let n = y.len();
    assert!(n >= stencil.min_points(), "too few samples for stencil");
    let mut d = vec![0.0; n];
    if periodic {
        let at = |i: isize| y[i.rem_euclid(n as isize) as usize];
        for (i, di) in d.iter_mut().enumerate() {
            let i = i as isize;
            *di = match stencil {
                Stencil::Second => (at(i + 1) - at(i - 1)) / (2.0 * h),
                Stencil::Fourth => {
                    (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * h)
                }
            };
        }
        return d;
    }
    match stencil {
        Stencil::Second => {
            for i in 1..n - 1 {
                d[i] = (y[i + 1] - y[i - 1]) / (2.0 * h);
            }
            d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * h);
            d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * h);
        }
        Stencil::Fourth => {
            for i in 2..n - 2 {
                d[i] = (y[i - 2] - 8.0 * y[i - 1] + 8.0 * y[i + 1] - y[i + 2]) / (12.0 * h);
            }
            const E0: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
            const E1: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
            let dot = |c: &[f64; 5], f: &dyn Fn(usize) -> f64| -> f64 {
                c.iter().enumerate().map(|(k, ck)| ck * f(k)).sum()
            };
            d[0] = dot(&E0, &|k| y[k]) / (12.0 * h);
            d[1] = dot(&E1, &|k| y[k]) / (12.0 * h);
            d[n - 1] = -dot(&E0, &|k| y[n - 1 - k]) / (12.0 * h);
            d[n - 2] = -dot(&E1, &|k| y[n - 1 - k]) / (12.0 * h);
        }
    }
    d
}

/// Second derivative of uniformly spaced samples.
pub fn second_derivative(y: &[f64], h: f64, periodic: bool, stencil: Stencil) -> Vec<f64> {
    let n = y.len();
    assert!(n >= stencil.min_points(), "too few samples for stencil");
    let h2 = h * h;
    let mut d = vec![0.0; n];
    if periodic {
        let at = |i: isize| y[i.rem_euclid(n as isize) as usize];
        for (i, di) in d.iter_mut().enumerate() {
            let i = i as isize;
            *di = match stencil {
                Stencil::Second => (at(i - 1) - 2.0 * at(i) + at(i + 1)) / h2,
                Stencil::Fourth => {
                    (-at(i - 2) + 16.0 * at(i - 1) - 30.0 * at(i) + 16.0 * at(i + 1) - at(i + 2))
                        / (12.0 * h2)
                }
            };
        }
        return d;
    }
    match stencil {
        Stencil::Second => {
            for i in 1..n - 1 {
                d[i] = (y[i - 1] - 2.0 * y[i] + y[i + 1]) / h2;
            }
            d[0] = (2.0 * y[0] - 5.0 * y[1] + 4.0 * y[2] - y[3]) / h2;
            d[n - 1] = (2.0 * y[n - 1] - 5.0 * y[n - 2] + 4.0 * y[n - 3] - y[n - 4]) / h2;
        }
        Stencil::Fourth => {
            for i in 2..n - 2 {
                d[i] = (-y[i - 2] + 16.0 * y[i - 1] - 30.0 * y[i] + 16.0 * y[i + 1] - y[i + 2])
                    / (12.0 * h2);
            }
            const E0: [f64; 6] = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
            const E1: [f64; 6] = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];
            let lo = |c: &[f64; 6], off: usize| -> f64 {
                c.iter().enumerate().map(|(k, ck)| ck * y[off + k]).sum::<f64>()
            };
            let hi = |c: &[f64; 6]| -> f64 {
                c.iter().enumerate().map(|(k, ck)| ck * y[n - 1 - k]).sum::<f64>()
            };
            d[0] = lo(&E0, 0) / (12.0 * h2);
            d[1] = lo(&E1, 0) / (12.0 * h2);
            d[n - 1] = hi(&E0) / (12.0 * h2);
            d[n - 2] = hi(&E1) / (12.0 * h2);
        }
    }
    d
}

/// Derivative of a row-major 2D array along `axis`.
pub fn derivative_2d(
    y: &[f64],
    shape: [usize; 2],
    axis: usize,
    h: f64,
    periodic: bool,
    stencil: Stencil,
) -> Vec<f64> {
    let [n0, n1] = shape;
    let mut out = vec![0.0; y.len()];
    if axis == 1 {
        for r in 0..n0 {
            let row = &y[r * n1..(r + 1) * n1];
            out[r * n1..(r + 1) * n1].copy_from_slice(&derivative(row, h, periodic, stencil));
        }
    } else {
        let mut col = vec![0.0; n0];
        for c in 0..n1 {
            for r in 0..n0 {
                col[r] = y[r * n1 + c];
            }
            for (r, v) in derivative(&col, h, periodic, stencil).into_iter().enumerate() {
                out[r * n1 + c] = v;
            }
        }
    }
    out
}

/// Exact derivative of the trigonometric interpolant through `m` samples that
/// cover one period. The Nyquist mode (even `m`) is dropped.
pub fn spectral_derivative(y: &[f64], period: f64) -> Vec<f64> {
    let m = y.len();
    let (re, im) = dft(y);
    let omega = 2.0 * std::f64::consts::PI / period;
    let mut out = vec![0.0; m];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 1..m.div_ceil(2) {
            let theta = 2.0 * std::f64::consts::PI * (k * j) as f64 / m as f64;
            let (s, c) = theta.sin_cos();
            // d/ds of 2 Re(c_k e^{i k ω s})
            acc += -2.0 * k as f64 * omega * (re[k] * s + im[k] * c);
        }
        *o = acc;
    }
    out
}

/// Normalised discrete Fourier coefficients `c_k = (1/m) Σ y_j e^{-2πijk/m}`.
pub fn dft(y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = y.len();
    let mut re = vec![0.0; m];
    let mut im = vec![0.0; m];
    for k in 0..m {
        for (j, yj) in y.iter().enumerate() {
            let theta = 2.0 * std::f64::consts::PI * ((k * j) % m) as f64 / m as f64;
            re[k] += yj * theta.cos();
            im[k] -= yj * theta.sin();
        }
        re[k] /= m as f64;
        im[k] /= m as f64;
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(x: f64) -> f64 {
        1.0 - 2.0 * x + 0.5 * x * x + 0.3 * x.powi(3) - 0.1 * x.powi(4)
    }
    fn dpoly(x: f64) -> f64 {
        -2.0 + x + 0.9 * x * x - 0.4 * x.powi(3)
    }
    fn ddpoly(x: f64) -> f64 {
        1.0 + 1.8 * x - 1.2 * x * x
    }

    #[test]
    fn fourth_order_is_exact_on_quartics() {
        let h = 0.13;
        let xs: Vec<f64> = (0..12).map(|i| -0.7 + i as f64 * h).collect();
        let y: Vec<f64> = xs.iter().map(|&x| poly(x)).collect();
        let d = derivative(&y, h, false, Stencil::Fourth);
        let dd = second_derivative(&y, h, false, Stencil::Fourth);
        for (i, &x) in xs.iter().enumerate() {
            assert!((d[i] - dpoly(x)).abs() < 1e-10, "d at {i}");
            // second derivative stencils are exact to degree 4 in the interior and degree 5 at edges
            assert!((dd[i] - ddpoly(x)).abs() < 1e-8, "dd at {i}: {} vs {}", dd[i], ddpoly(x));
        }
    }

    #[test]
    fn second_order_is_exact_on_quadratics() {
        let h = 0.2;
        let y: Vec<f64> = (0..9).map(|i| 3.0 + 2.0 * (i as f64 * h) - (i as f64 * h).powi(2)).collect();
        let d = derivative(&y, h, false, Stencil::Second);
        let dd = second_derivative(&y, h, false, Stencil::Second);
        for i in 0..9 {
            assert!((d[i] - (2.0 - 2.0 * i as f64 * h)).abs() < 1e-12);
            assert!((dd[i] + 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn periodic_stencils_converge_on_sine() {
        let err = |n: usize, s: Stencil| {
            let h = 2.0 * std::f64::consts::PI / n as f64;
            let y: Vec<f64> = (0..n).map(|i| (i as f64 * h).sin()).collect();
            let d = derivative(&y, h, true, s);
            (0..n).map(|i| (d[i] - (i as f64 * h).cos()).abs()).fold(0.0, f64::max)
        };
        assert!(err(32, Stencil::Second) / err(64, Stencil::Second) > 3.9);
        assert!(err(32, Stencil::Fourth) / err(64, Stencil::Fourth) > 15.0);
    }

    #[test]
    fn spectral_derivative_of_first_harmonic_is_exact() {
        let m = 16;
        let period = 2.0 * std::f64::consts::PI / 1.7;
        let s: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5) * period / m as f64).collect();
        let y: Vec<f64> = s.iter().map(|&s| 0.3 * (1.7 * s).cos() - 1.1 * (1.7 * s).sin()).collect();
        let d = spectral_derivative(&y, period);
        for (j, &sj) in s.iter().enumerate() {
            let exact = -0.3 * 1.7 * (1.7 * sj).sin() - 1.1 * 1.7 * (1.7 * sj).cos();
            assert!((d[j] - exact).abs() < 1e-12);
        }
    }
}
