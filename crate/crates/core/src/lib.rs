//! Feedforward control inputs for multirotors flying with a learned,
//! possibly input-dependent, acceleration-error model.
//!
//! The crate is organised bottom-up:
//!
//! - [`trajgen`]: reference trajectories with analytic derivatives up to snap.
//! - [`errmodel`]: linear-in-features error models with analytic first and
//!   second partials, residual extraction from logs, and least-squares fitting.
//! - [`flatness`]: inversion of the augmented acceleration model into thrust,
//!   attitude, body rates and body angular accelerations (strategies FF1–FF5).
//! - [`sim2d`]: a planar multirotor with configurable disturbances and a
//!   cascaded PD controller.
//! - [`experiment`]: the strategy × disturbance-set × feedback matrix with the
//!   iterative regression protocol and summary tables.

pub mod errmodel;
pub mod error;
pub mod experiment;
pub mod flatness;
pub mod sim2d;
pub mod trajgen;

use nalgebra::{SMatrix, Vector3, Vector6};

pub use error::{Error, Result};
pub use experiment::{CellKey, CellResult, ExperimentConfig, MatrixOutcome, RunMetrics, SummaryTable};
pub use errmodel::{FeatureMap, LinearErrorModel, StateVec, TrainingSample};
pub use flatness::{ff_generate, FlatControl, PhysicalParams, Strategy};
pub use sim2d::{DisturbanceSet, DisturbanceSpec, PlanarInput, PlanarState, RunLog, SimConfig};
pub use trajgen::{PolySegment, Primitive, PrimitiveKind, Trajectory, TrajectoryPoint};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = SMatrix<f64, 3, 3>;
pub type Mat6 = SMatrix<f64, 6, 6>;
pub type Mat3x6 = SMatrix<f64, 3, 6>;
