//! Schrödinger dynamics as a two-phase conserved flow.
//!
//! The real and imaginary parts of ψ are carried as conserved charges by two
//! families of trajectories; ψ(t) is rebuilt from the trajectory Jacobians.
//! A Crank–Nicolson solver and closed-form solutions serve as references.

pub mod eisenhart;
pub mod error;
pub mod eulerian;
pub mod experiment;
pub mod fd;
pub mod fields;
pub mod flow;
pub mod grid;
pub mod interp;
pub mod lagrangian;
pub mod potential;

pub use error::{Error, Phase, Result};
pub use fields::{RealPairField, StateSpec};
pub use flow::{FlowModel, FlowVariant, VelocityPair};
pub use grid::{Axis, SpatialGrid, UnitSystem};
pub use potential::Potential;
