//! Elongated Poisson-Voronoi cells above a half-plane and their limiting menhir shape.
//!
//! The crate is organised bottom-up:
//!
//! * [`distributions`]: seeded random streams, Gamma/Beta/order-statistic samplers,
//!   closed-form moments of the stationary shape variable.
//! * [`palm`]: the Palm configuration around a typical vertex at height `lambda`:
//!   quadruplet densities and samplers, cap areas, nuclei positions, initial states.
//! * [`chain`]: the finite and idealized Markov chains of triangle statistics, the
//!   shape perpetuities, the maximal coupling and the kernel discrepancy integrals.
//! * [`geometry`]: limiting branches, the menhir, finite-`lambda` branch
//!   reconstruction, rescaling and Hausdorff distances.
//! * [`oracle`]: brute-force Voronoi cells of the Palm process with a certificate.
//! * [`stats`], [`experiments`], [`export`]: statistical tests, reproducible
//!   experiment drivers and CSV/JSON/SVG output.
//!
//! The Poisson intensity is fixed to 1. A process of intensity `c` maps to this one
//! by scaling space by `sqrt(c)`.

pub mod chain;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod export;
pub mod geometry;
pub mod oracle;
pub mod palm;
pub mod quad;
pub mod stats;
pub mod tolerances;

pub use error::{Error, Result};

use serde::{Deserialize, Serialize};

/// A planar point `[x, y]`.
pub type Point = [f64; 2];

/// Which branch of the cell boundary, walked down from the top vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    /// `-1` for the left branch, `+1` for the right one.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub fn mirror(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}
