use std::fmt;

use serde::Serialize;

/// Which of the two conserved phases a quantity belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::One => 0,
            Phase::Two => 1,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }

    pub fn other(self) -> Phase {
        match self {
            Phase::One => Phase::Two,
            Phase::Two => Phase::One,
        }
    }

    pub fn from_number(n: u8) -> Option<Phase> {
        match n {
            1 => Some(Phase::One),
            2 => Some(Phase::Two),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("position {position} at t = {time} lies outside the available domain: {detail}")]
    OutOfDomain {
        time: f64,
        position: f64,
        detail: String,
    },

    #[error("phase {phase} density vanishes near x = {position} at t = {time} (|value| = {value:e})")]
    SingularDensity {
        phase: Phase,
        time: f64,
        position: f64,
        value: f64,
    },

    #[error("phase {phase} trajectories cross at label index {label_index} (t = {time})")]
    CrossingDetected {
        phase: Phase,
        time: f64,
        label_index: usize,
    },

    #[error("sign branch is ambiguous over an extended zero set starting at grid index {start} ({len} points)")]
    BranchAmbiguity { start: usize, len: usize },

    #[error("lifted field violates the s-eigenstate constraint: spread {spread:e} exceeds {limit:e}")]
    ConstraintViolation { spread: f64, limit: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
