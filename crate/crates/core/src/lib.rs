//! Interactive SGD for single-index bandits on the unit sphere.
//!
//! The learner plays a_t = √(1-σ²) θ_t + σ Z_t with Z_t uniform on the
//! tangent sphere at θ_t, observes r_t = f(<θ*, a_t>) + noise and takes a
//! spherical gradient step. This crate holds the link catalog, sphere
//! sampling, the update, step-size schedules, the analysis oracles and the
//! experiment runner.

// Negated comparisons are used deliberately so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod linkfn;
pub mod quadrature;
pub mod report;
pub mod rng;
pub mod runner;
pub mod schedules;
pub mod sphere;
pub mod stats;

pub use analysis::{BoundReport, Check, ConcentrationParams, DriftProxy};
pub use dynamics::{Environment, NoiseModel, Observer, SgdState};
pub use error::{Error, Result};
pub use linkfn::LinkFunction;
pub use rng::{SimRng, StreamKey};
pub use runner::{RunConfig, TrajectoryRecord};
pub use schedules::{Schedule, ScheduleConfig, ScheduleKind};
pub use sphere::{SphereMarginal, UnitVector};
