//! Probabilistic pedestrian-vehicle conflict risk at signalized intersections.
//!
//! The crate covers the whole chain from object tracks to risk scores:
//!
//! * [`traj`]: track data model and CSV ingestion
//! * [`preprocess`]: crosswalk geometry, vehicle maneuver labels, pedestrian
//!   track merging and selection
//! * [`gpr`]: Gaussian-process velocity fields per maneuver cluster
//! * [`maneuver`]: random-forest maneuver probabilities with SMOTE balancing
//! * [`risk`]: conflict points, per-maneuver risk and the probability mixture
//! * [`ssm`]: TTC/PET baselines and detection metrics
//! * [`synth`]: seeded synthetic intersection scenes with known ground truth
//! * [`pipeline`]: the `synth → preprocess → train → risk` commands

pub mod config;
pub mod error;
pub mod geom;
pub mod gpr;
pub mod maneuver;
pub mod pipeline;
pub mod preprocess;
pub mod risk;
pub mod ssm;
pub mod synth;
pub mod traj;

pub use error::{Error, Result};
