//! Wasserstein barycenters of 2D/3D measures on a fixed grid, computed by
//! mirror descent on the log-density.
//!
//! Point clouds are handled by semi-discrete transport ([`semidiscrete`]),
//! histograms by exact discrete transport ([`discrete`]), and the outer loop
//! lives in [`mirror`]. [`gaussian`] runs the same iteration in closed form on
//! covariance matrices.

pub mod discrete;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod measures;
pub mod mirror;
mod power;
pub mod rng;
pub mod semidiscrete;

pub use error::{Error, Result};
pub use measures::{
    BoxDomain, DiscreteMeasure, GaussianMeasure, GridDensity, GridHistogram, InputMeasure, MeasureKind, RegularGrid,
};
pub use mirror::{run_frbary, FrbaryOptions, Schedule, ScheduleKind};
