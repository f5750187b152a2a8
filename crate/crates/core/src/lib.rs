//! Design-based off-policy evaluation of capacity-constrained assignment
//! policies.
//!
//! Given logged quasi-random assignments of cases (families) to locations,
//! binary outcomes, and outcome predictions for every location, the crate
//! estimates the average outcome a proposed policy would attain with IPW,
//! AIPW, AIPW-local and model-based estimators, together with
//! randomization-based variances and 95% confidence intervals. It also
//! produces policies (offline optimal and online greedy assignment), pools
//! small locations, and verifies the estimators against exact enumeration
//! and Monte Carlo replication of the assignment design.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which is what the command-line tool uses.

pub mod assignment;
pub mod error;
pub mod estimators;
pub mod io;
pub mod model;
pub mod pooling;
pub mod propensity;
pub mod report;
pub mod scalar;
pub mod scenario;
pub mod simulation;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Dataset = model::EvaluationDataset<f64>;
pub type Predictions = model::PredictionMatrix<f64>;
pub type Propensities = propensity::PropensityModel<f64>;
pub type Pooling = pooling::PoolingMap<f64>;
pub type Problem = assignment::AssignmentProblem<f64>;
pub type Report = estimators::EstimateReport<f64>;
pub type Synthetic = simulation::SyntheticConfig<f64>;
