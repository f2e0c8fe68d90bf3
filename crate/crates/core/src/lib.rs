//! Deterministic subframe-level simulator of a cellular downlink carrying
//! real-time video, with a physical-layer-informed rate controller and
//! end-to-end baselines.

pub mod baselines;
pub mod channel;
pub mod engine;
pub mod experiment;
pub mod metrics;
pub mod occ;
pub mod output;
pub mod packet;
pub mod ran;
pub mod rng;
pub mod scenario;
pub mod sender;

pub use engine::{run, EngineError, RunOutput};
pub use metrics::MetricsReport;
pub use scenario::{ControllerKind, ScenarioConfig};
