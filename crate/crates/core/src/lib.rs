//! Magneto-inductive 3D localization.
//!
//! * [`model`]: complex baseband channel model of a coil-to-coil link.
//! * [`emsim`]: thin-wire coil geometry and Neumann mutual inductance, used
//!   to synthesize ground-truth channel data.
//! * [`calib`]: per-anchor essential and full (MAP pose) calibration.
//! * [`locate`]: weighted least-squares position and orientation estimation.
//! * [`crlb`]: Fisher information and position error bounds.
//! * [`harness`]: scenarios, file formats and end-to-end pipelines.

pub mod calib;
pub mod crlb;
pub mod emsim;
pub mod harness;
pub mod lm;
pub mod locate;
pub mod model;
pub mod stats;

pub use calib::{CalibrationError, DataSplit, Deployment, PosePrior};
pub use crlb::{CrlbError, EstimationParameter, NoiseModel};
pub use emsim::{EmsimError, SpiderwebSpec, WirePath};
pub use harness::{CalibrationMode, HarnessError, Scenario, ScenarioConfig};
pub use locate::{LocateError, LocationEstimate, WlsConfig};
pub use model::{Anchor, ChannelVector, CoilSpec, Environment, LinkGeometry, ModelError, Pose};

pub use nalgebra::Vector3;
pub use num_complex::Complex64;
