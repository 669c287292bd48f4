//! Unit system and uniform spatial grids.

use serde::Serialize;

use crate::error::{config, Result};

pub const MIN_AXIS_POINTS: usize = 8;

/// Action and mass units. Densities carried by the phases are raw reals; no
/// normalisation constant is attached to them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        UnitSystem {
            hbar: 1.0,
            mass: 1.0,
        }
    }
}

impl UnitSystem {
    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        if !(hbar.is_finite() && hbar > 0.0) {
            return config(format!("hbar must be positive and finite, got {hbar}"));
        }
        if !(mass.is_finite() && mass > 0.0) {
            return config(format!("mass must be positive and finite, got {mass}"));
        }
        Ok(UnitSystem { hbar, mass })
    }

    /// ħ/2m, the prefactor of the two-phase velocity closure.
    pub fn half_ratio(&self) -> f64 {
        self.hbar / (2.0 * self.mass)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub periodic: bool,
}

impl Axis {
    pub fn new(min: f64, max: f64, n: usize, periodic: bool) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || max <= min {
            return config(format!("axis extent [{min}, {max}] is empty or not finite"));
        }
        if n < MIN_AXIS_POINTS {
            return config(format!("axis needs at least {MIN_AXIS_POINTS} points, got {n}"));
        }
        Ok(Axis {
            min,
            max,
            n,
            periodic,
        })
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.max - self.min) / self.n as f64
        } else {
            (self.max - self.min) / (self.n - 1) as f64
        }
    }

    pub fn point(&self, i: usize) -> f64 {
        self.min + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    pub fn length(&self) -> f64 {
        self.max - self.min
    }
}

/// A uniform grid in one or two dimensions. Data on the grid is stored
/// row-major with axis 0 outermost.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpatialGrid {
    axes: Vec<Axis>,
}

impl SpatialGrid {
    pub fn line(min: f64, max: f64, n: usize, periodic: bool) -> Result<Self> {
        Ok(SpatialGrid {
            axes: vec![Axis::new(min, max, n, periodic)?],
        })
    }

    pub fn plane(a0: Axis, a1: Axis) -> Self {
        SpatialGrid { axes: vec![a0, a1] }
    }

    pub fn from_axes(axes: Vec<Axis>) -> Result<Self> {
        match axes.len() {
            1 | 2 => Ok(SpatialGrid { axes }),
            d => config(format!("only 1D and 2D grids are supported, got dimension {d}")),
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    /// Coordinates of the flat index `idx`.
    pub fn coords(&self, idx: usize) -> Vec<f64> {
        match self.dim() {
            1 => vec![self.axes[0].point(idx)],
            _ => {
                let n1 = self.axes[1].n;
                vec![self.axes[0].point(idx / n1), self.axes[1].point(idx % n1)]
            }
        }
    }

    /// Sub-grid of a 1D non-periodic grid holding the nodes inside `[lo, hi]`.
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<SpatialGrid> {
        if self.dim() != 1 {
            return config("restrict is only defined for 1D grids");
        }
        let ax = &self.axes[0];
        let h = ax.spacing();
        let tol = 1e-9 * h;
        let first = ((lo - ax.min - tol) / h).ceil().max(0.0) as usize;
        let last = (((hi - ax.min + tol) / h).floor() as isize).min(ax.n as isize - 1);
        if last < first as isize || (last as usize - first + 1) < MIN_AXIS_POINTS {
            return config(format!("window [{lo}, {hi}] holds too few grid nodes"));
        }
        let last = last as usize;
        Ok(SpatialGrid {
            axes: vec![Axis {
                min: ax.point(first),
                max: ax.point(last),
                n: last - first + 1,
                periodic: false,
            }],
        })
    }
}
