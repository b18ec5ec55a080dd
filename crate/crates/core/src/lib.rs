//! Predicting expert label disagreement from instance features.
//!
//! Two ways to score how much a panel of experts would disagree about an
//! instance: train a model to predict a binarized disagreement score directly
//! from the features (direct uncertainty prediction), or train a grade
//! classifier on label histograms and post-process its output distribution
//! with a concave uncertainty function (uncertainty via classification).
//! Averaging hidden information before a concave score is applied inflates
//! it, so the classification route systematically overestimates; the direct
//! route is unbiased.
//!
//! The crate provides:
//! - [`uncertainty`]: grade histograms and the disagree / variance / entropy
//!   scores with binarization.
//! - [`worlds`]: synthetic data-generating processes (Gaussian mixtures with
//!   an obscuring map, finite discrete worlds, blurred glyph images) with
//!   seeded, replayable generators and the dataset CSV format.
//! - [`oracle`]: exact enumeration oracles for both predictors, their bias,
//!   and Wasserstein distances with an exact small-support transport solver.
//! - [`learner`]: a small feed-forward network with from-scratch
//!   backpropagation, SGD with momentum, and temperature calibration.
//! - [`eval`]: AUC, Spearman correlation, adjudicated-grade comparisons,
//!   doctor subsampling, and train-size sweeps.

pub mod error;
pub mod eval;
pub mod learner;
pub mod oracle;
pub mod uncertainty;
pub mod util;
pub mod worlds;

pub use error::{Error, Result};
