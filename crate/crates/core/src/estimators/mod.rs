//! Neural estimators of the users' steady-state opinions and clicking
//! behaviour, the offline data protocol that feeds them, and their error
//! bounds.

pub mod bank;
pub mod bounds;
pub mod mlp;
pub mod training;

pub use bank::{EstimatorBank, FittedNet, LocalOpinionBank};
pub use bounds::{
    clicking_error_bound, covering_radius, forward_difference_error_bound,
    modulus_of_continuity, opinion_error_bound, optimal_smoothing, ErrorBound, Modulus,
};
pub use mlp::{Mlp, Optimizer, TrainParams, TrainReport};
pub use training::{collect_training_data, TrainingSet};
