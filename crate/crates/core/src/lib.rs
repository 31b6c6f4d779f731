//! Strategy-similarity-aware asynchronous federated learning for intent-based
//! networking policy verification.
//!
//! The crate has four layers:
//!
//! * [`intent`] — strategy tuples, the strategy DSL, and deployed-strategy
//!   satisfaction against telemetry.
//! * [`similarity`] — strategy similarity, resource scoring, and node
//!   selection.
//! * [`fl`] — regression models, local SGD, thresholded asynchronous
//!   aggregation, and the FedAvg / FedAsyn / SemiAsyn baselines.
//! * [`sim`] — a deterministic discrete-event simulator that drives whole
//!   federated runs, plus convergence diagnostics.
//!
//! All real-valued computation is generic over [`Scalar`] (f32 or f64);
//! the `*64` aliases below fix the default experiment precision.

pub mod fl;
pub mod intent;
pub mod rng;
pub mod scalar;
pub mod similarity;
pub mod sim;

pub use scalar::Scalar;

/// f64 aliases for the common entry points.
pub type Goal64 = intent::Goal<f64>;
pub type StrategyTuple64 = intent::StrategyTuple<f64>;
pub type TelemetrySample64 = intent::TelemetrySample<f64>;
pub type NodeProfile64 = similarity::NodeProfile<f64>;
pub type ModelState64 = fl::ModelState<f64>;
pub type LocalDataset64 = fl::LocalDataset<f64>;
pub type ExperimentConfig64 = sim::ExperimentConfig<f64>;
pub type EventTrace64 = sim::EventTrace<f64>;
pub type RunOutput64 = sim::RunOutput<f64>;
