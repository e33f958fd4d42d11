//! Local hidden-state models for bipartite qudit states, fitted by
//! stochastic gradient descent on the mean assemblage trace distance.
//!
//! A state is certified unsteerable for a measurement class when a model
//! with `N_hidden` hidden pairs reproduces its assemblages to within a loss
//! tolerance on held-out measurements. Sweeping the visibility of a state
//! family and reading off where certification stops working estimates the
//! critical visibility.

pub mod error;
pub mod features;
pub mod measurements;
pub mod model;
pub mod quantum;
pub mod states;
pub mod sweep;
pub mod tol;
pub mod trainer;

pub use error::{Error, Result};
pub use measurements::{Measurement, MeasurementClass, MeasurementKind};
pub use model::{init_model, lhs_assemblage, LhsModel, ModelConfig, ResponseMode};
pub use quantum::{quantum_assemblage, trace_distance, DensityMatrix};
pub use states::{family_state, isotropic3, werner, StateFamily, VisibilityState};
pub use sweep::{estimate_threshold, run_sweep, SweepConfig, SweepRecord, ThresholdEstimate};
pub use trainer::{
    batch_loss, certify, compute_gradients, train, Checkpoint, Gradient, TrainConfig, TrainReport,
    Trainer, Verdict,
};
