//! Digital-clone life-course microsimulation.
//!
//! Personas are sampled from a trait matrix and cloned into four arms (sham
//! or resilience training, delivered at age 6 or 18). Each clone lives ages
//! 6 to 65 under the same yearly random draws; behavioral responses to life
//! events feed back into wealth, well-being and health. The statistics module
//! estimates intervention effects from the resulting panel.

pub mod behavior;
pub mod calibration;
pub mod engine;
pub mod error;
pub mod events;
pub mod mapper;
pub mod outcomes;
pub mod persona;
pub mod report;
pub mod rng;
pub mod state;
pub mod stats;

pub use behavior::{BehavioralTag, PolicyParams};
pub use engine::{run_experiment, BackendKind, RunConfig, RunHandle, RunManifest, SimInputs, Trajectory};
pub use error::{Error, Result, StatsError};
pub use events::EventCatalog;
pub use mapper::{RuleTable, StateDelta, YearMechanics};
pub use outcomes::{Outcome, OutcomeRecord, OutcomeTable};
pub use persona::{Arm, PersonaSpec};
pub use report::{analyze, Analysis};
pub use state::AgentState;
pub use stats::FitResult;
