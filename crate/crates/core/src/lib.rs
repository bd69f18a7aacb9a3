//! Particle filtering with selective processing of out-of-sequence
//! measurements.
//!
//! Modules are layered bottom-up: [`mat`] → [`model`] → [`pf`] →
//! [`smooth`] → [`select`] → [`oosm`], with [`sim`] producing scenarios and
//! [`harness`] running Monte-Carlo benchmarks over them.

pub mod harness;
pub mod mat;
pub mod model;
pub mod oosm;
pub mod pf;
pub mod select;
pub mod sim;
pub mod smooth;

pub use mat::{Matrix, Vector};
pub use model::{BearingSensor, CoordinatedTurn, LinearModel, LinearSensor, SensorModel, StateModel};
pub use oosm::{FilterStats, OosmError, OosmFilter, Strategy, WindowStore};
pub use pf::{GaussianSummary, ParticleSet};
pub use select::{CandidateUtility, SelectionConfig};
pub use sim::{Measurement, MeasurementStream, OosmRecord, ScenarioConfig};
pub use smooth::SmoothedWindow;
