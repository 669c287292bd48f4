//! External potential descriptors V(x, t).

use serde::Serialize;

use crate::error::{config, Result};
use crate::grid::UnitSystem;
use crate::interp::MonotoneCubic;

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    Constant {
        value: f64,
    },
    /// `½ m ω² x²`.
    Harmonic {
        omega: f64,
    },
    /// Static samples, interpolated by monotone cubic and extended by the end
    /// cubics outside the table.
    Tabulated {
        xs: Vec<f64>,
        values: Vec<f64>,
        #[serde(skip)]
        interp: MonotoneCubic,
    },
}

impl PartialEq for Potential {
    fn eq(&self, other: &Self) -> bool {
        use Potential::*;
        match (self, other) {
            (Zero, Zero) => true,
            (Constant { value: a }, Constant { value: b }) => a == b,
            (Harmonic { omega: a }, Harmonic { omega: b }) => a == b,
            (Tabulated { xs: a, values: u, .. }, Tabulated { xs: b, values: v, .. }) => a == b && u == v,
            _ => false,
        }
    }
}

impl Potential {
    pub fn constant(value: f64) -> Result<Potential> {
        if !value.is_finite() {
            return config("constant potential must be finite");
        }
        Ok(Potential::Constant { value })
    }

    pub fn harmonic(omega: f64) -> Result<Potential> {
        if !(omega.is_finite() && omega > 0.0) {
            return config(format!("harmonic frequency must be positive, got {omega}"));
        }
        Ok(Potential::Harmonic { omega })
    }

    pub fn tabulated(xs: Vec<f64>, values: Vec<f64>) -> Result<Potential> {
        if values.iter().any(|v| !v.is_finite()) {
            return config("tabulated potential values must be finite");
        }
        let Some(interp) = MonotoneCubic::new(&xs, &values) else {
            return config("tabulated potential needs at least two increasing abscissae");
        };
        Ok(Potential::Tabulated { xs, values, interp })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero)
    }

    pub fn value(&self, x: f64, _t: f64, units: &UnitSystem) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Constant { value } => *value,
            Potential::Harmonic { omega } => 0.5 * units.mass * omega * omega * x * x,
            Potential::Tabulated { interp, .. } => interp.eval(x),
        }
    }

    /// `∂V/∂x`.
    pub fn gradient(&self, x: f64, _t: f64, units: &UnitSystem) -> f64 {
        match self {
            Potential::Zero | Potential::Constant { .. } => 0.0,
            Potential::Harmonic { omega } => units.mass * omega * omega * x,
            Potential::Tabulated { interp, .. } => interp.eval_with_derivative(x).1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Potential::Zero => "zero",
            Potential::Constant { .. } => "constant",
            Potential::Harmonic { .. } => "harmonic",
            Potential::Tabulated { .. } => "tabulated",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_and_tabulated_values() {
        let u = UnitSystem::default();
        assert_eq!(Potential::harmonic(1.0).unwrap().value(2.0, 0.0, &u), 2.0);
        let xs: Vec<f64> = (0..41).map(|i| -4.0 + 0.2 * i as f64).collect();
        let vs: Vec<f64> = xs.iter().map(|x| 0.5 * x * x).collect();
        let p = Potential::tabulated(xs, vs).unwrap();
        assert!((p.value(1.23, 0.0, &u) - 0.5 * 1.23 * 1.23).abs() < 1e-3);
        assert!(Potential::harmonic(0.0).is_err());
        assert!(Potential::tabulated(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
    }
}
