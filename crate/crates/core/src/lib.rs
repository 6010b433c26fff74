//! Pairwise feedback regression with a frequentist estimate of epistemic
//! uncertainty.
//!
//! A [`FeedbackRegressor`] predicts a Gaussian for `y` given `x` and, when fed
//! one of its own answers, a Gaussian for a second answer. The covariance
//! between the two answers is the epistemic part of the predicted variance;
//! [`uncertainty`] estimates it by Monte Carlo.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod data;
pub mod error;
pub mod experiment;
pub mod feedback;
pub mod losses;
pub mod nn;
pub mod oracle;
pub mod plot;
pub mod train;
pub mod uncertainty;

pub use data::{Triplet, TripletDataset};
pub use error::{Error, Result};
pub use feedback::{FeedbackMode, FeedbackRegressor, ModelBundle};
pub use nn::GaussianPrediction;
pub use uncertainty::{EstimatorConfig, EstimatorForm, UncertaintyReport};
