//! Monotone piecewise-cubic Hermite interpolation over scattered, strictly
//! increasing nodes (five-point slopes with Hyman's limiter), and trigonometric interpolation over
//! one period of uniform samples.

use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// Returns `None` when fewer than two nodes are given or the nodes are not
    /// strictly increasing.
    pub fn new(xs: &[f64], ys: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n || xs.windows(2).any(|w| !(w[1] > w[0])) {
            return None;
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else if n < 5 {
            for k in 1..n - 1 {
                let (d0, d1) = (delta[k - 1], delta[k]);
                if d0 * d1 <= 0.0 {
                    slopes[k] = 0.0;
                } else {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
                }
            }
            slopes[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        } else {
            for (k, s) in slopes.iter_mut().enumerate() {
                let lo = k.saturating_sub(2).min(n - 5);
                *s = lagrange_slope(&xs[lo..lo + 5], &ys[lo..lo + 5], xs[k]);
            }
            hyman_filter(&mut slopes, &delta);
        }
        Some(MonotoneCubic {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slopes,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn range(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn contains(&self, x: f64) -> bool {
        let (lo, hi) = self.range();
        x >= lo && x <= hi
    }

    fn interval(&self, x: f64) -> usize {
        let n = self.xs.len();
        let p = self.xs.partition_point(|&xk| xk <= x);
        p.clamp(1, n - 1) - 1
    }

    /// Value at `x`; outside the node range the end cubic is extended.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_in(self.interval(x), x)
    }

    /// Value and first derivative at `x`.
    pub fn eval_with_derivative(&self, x: f64) -> (f64, f64) {
        let k = self.interval(x);
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (y0, y1, m0, m1) = (self.ys[k], self.ys[k + 1], self.slopes[k], self.slopes[k + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1;
        let dv = ((6.0 * t2 - 6.0 * t) * y0 + (-6.0 * t2 + 6.0 * t) * y1) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (3.0 * t2 - 2.0 * t) * m1;
        (v, dv)
    }

    fn eval_in(&self, k: usize, x: f64) -> f64 {
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (y0, y1, m0, m1) = (self.ys[k], self.ys[k + 1], self.slopes[k], self.slopes[k + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * m1
    }

    /// Evaluates at a sorted sequence of points with a moving cursor.
    pub fn eval_sorted(&self, xs: &[f64]) -> Vec<f64> {
        let n = self.xs.len();
        let mut k = 0usize;
        xs.iter()
            .map(|&x| {
                while k + 2 < n && self.xs[k + 1] <= x {
                    k += 1;
                }
                if k > 0 && x < self.xs[k] {
                    k = self.interval(x);
                }
                self.eval_in(k, x)
            })
            .collect()
    }
}

/// Derivative at `z` of the polynomial through the given nodes.
fn lagrange_slope(xs: &[f64], ys: &[f64], z: f64) -> f64 {
    let m = xs.len();
    let mut total = 0.0;
    for j in 0..m {
        let mut denom = 1.0;
        for l in 0..m {
            if l != j {
                denom *= xs[j] - xs[l];
            }
        }
        let mut num = 0.0;
        for l in 0..m {
            if l == j {
                continue;
            }
            let mut prod = 1.0;
            for r in 0..m {
                if r != j && r != l {
                    prod *= z - xs[r];
                }
            }
            num += prod;
        }
        total += ys[j] * num / denom;
    }
    total
}

/// Limits slopes so that each cubic piece is monotone wherever the data are
/// (Hyman); slopes at local extrema are left alone.
fn hyman_filter(slopes: &mut [f64], delta: &[f64]) {
    let n = slopes.len();
    for k in 0..n {
        let (dl, dr) = match k {
            0 => (delta[0], delta[0]),
            _ if k == n - 1 => (delta[n - 2], delta[n - 2]),
            _ => (delta[k - 1], delta[k]),
        };
        if dl * dr <= 0.0 {
            if dl == 0.0 || dr == 0.0 {
                slopes[k] = 0.0;
            }
            continue;
        }
        let bound = 3.0 * dl.abs().min(dr.abs());
        slopes[k] = if slopes[k] * dl <= 0.0 { 0.0 } else { dl.signum() * slopes[k].abs().min(bound) };
    }
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Trigonometric interpolant through `m` samples taken at unit spacing in an
/// index variable `τ` over one period `[0, m)`. Even `m` treats the Nyquist
/// mode as a cosine.
#[derive(Clone, Debug)]
pub struct TrigInterpolator {
    m: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl TrigInterpolator {
    pub fn new(samples: &[f64]) -> Self {
        let (re, im) = crate::fd::dft(samples);
        TrigInterpolator {
            m: samples.len(),
            re,
            im,
        }
    }

    /// Builds from precomputed DFT twiddles (`cos`, `sin` tables of size m×m),
    /// avoiding repeated trigonometric evaluation.
    pub fn with_table(samples: &[f64], table: &DftTable) -> Self {
        let m = samples.len();
        debug_assert_eq!(m, table.m);
        let mut re = vec![0.0; m];
        let mut im = vec![0.0; m];
        for k in 0..=m / 2 {
            let (mut r, mut i) = (0.0, 0.0);
            for (j, &y) in samples.iter().enumerate() {
                let idx = (k * j) % m;
                r += y * table.cos[idx];
                i -= y * table.sin[idx];
            }
            re[k] = r / m as f64;
            im[k] = i / m as f64;
        }
        TrigInterpolator { m, re, im }
    }

    pub fn mean(&self) -> f64 {
        self.re[0]
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.eval_with_derivative(tau).0
    }

    pub fn eval_with_derivative(&self, tau: f64) -> (f64, f64) {
        let m = self.m;
        let w = 2.0 * PI / m as f64;
        let mut v = self.re[0];
        let mut dv = 0.0;
        let (s1, c1) = (w * tau).sin_cos();
        let (mut s, mut c) = (s1, c1);
        let top = if m % 2 == 0 { m / 2 } else { m.div_ceil(2) };
        for k in 1..top {
            let kw = k as f64 * w;
            v += 2.0 * (self.re[k] * c - self.im[k] * s);
            dv += -2.0 * kw * (self.re[k] * s + self.im[k] * c);
            let (sn, cn) = (s * c1 + c * s1, c * c1 - s * s1);
            s = sn;
            c = cn;
        }
        if m % 2 == 0 {
            let half = m / 2;
            let (sn, cn) = (PI * tau).sin_cos();
            v += self.re[half] * cn;
            dv -= self.re[half] * PI * sn;
        }
        (v, dv)
    }
}

/// Cosine/sine tables for an m-point DFT.
#[derive(Clone, Debug)]
pub struct DftTable {
    pub m: usize,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl DftTable {
    pub fn new(m: usize) -> Self {
        let (sin, cos) = (0..m)
            .map(|j| (2.0 * PI * j as f64 / m as f64).sin_cos())
            .unzip();
        DftTable { m, cos, sin }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reproduces_nodes_and_cubic_accuracy() {
        let xs: Vec<f64> = (0..40).map(|i| 0.1 * i as f64 + 0.001 * (i as f64).sin()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (0.7 * x).exp()).collect();
        let p = MonotoneCubic::new(&xs, &ys).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((p.eval(*x) - y).abs() < 1e-14);
        }
        let x = 1.234;
        assert!((p.eval(x) - (0.7f64 * x).exp()).abs() < 1e-5);
        let (_, d) = p.eval_with_derivative(x);
        assert!((d - 0.7 * (0.7f64 * x).exp()).abs() < 1e-3);
    }

    #[test]
    fn sorted_evaluation_matches_pointwise() {
        let xs: Vec<f64> = (0..20).map(|i| (i as f64).powf(1.3)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let p = MonotoneCubic::new(&xs, &ys).unwrap();
        let q: Vec<f64> = (0..200).map(|i| -1.0 + 0.25 * i as f64).collect();
        let a = p.eval_sorted(&q);
        for (qi, ai) in q.iter().zip(a) {
            assert_eq!(p.eval(*qi), ai);
        }
    }

    #[test]
    fn rejects_unsorted_nodes() {
        assert!(MonotoneCubic::new(&[0.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_none());
        assert!(MonotoneCubic::new(&[0.0], &[0.0]).is_none());
    }

    #[test]
    fn trig_interpolant_is_exact_on_band_limited_data() {
        let m = 16;
        let f = |t: f64| 0.3 + (2.0 * PI * t / m as f64).cos() - 0.4 * (6.0 * PI * t / m as f64).sin();
        let samples: Vec<f64> = (0..m).map(|j| f(j as f64)).collect();
        let ti = TrigInterpolator::new(&samples);
        let tab = TrigInterpolator::with_table(&samples, &DftTable::new(m));
        for tau in [0.3, 5.7, 11.11, 15.9] {
            assert!((ti.eval(tau) - f(tau)).abs() < 1e-12);
            assert!((tab.eval(tau) - f(tau)).abs() < 1e-12);
            let h = 1e-6;
            let fd = (f(tau + h) - f(tau - h)) / (2.0 * h);
            assert!((ti.eval_with_derivative(tau).1 - fd).abs() < 1e-7);
        }
    }

    proptest! {
        #[test]
        fn monotone_data_gives_monotone_interpolant(
            steps in proptest::collection::vec(0.0f64..2.0, 3..30),
            gaps in proptest::collection::vec(0.05f64..1.0, 30),
        ) {
            let mut xs = vec![0.0];
            let mut ys = vec![0.0];
            for (k, s) in steps.iter().enumerate() {
                xs.push(xs[k] + gaps[k]);
                ys.push(ys[k] + s);
            }
            let p = MonotoneCubic::new(&xs, &ys).unwrap();
            let (lo, hi) = p.range();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=400 {
                let v = p.eval(lo + (hi - lo) * i as f64 / 400.0);
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }
    }
}
