//! Spectral-library crop classification: Gaussian discriminant analysis
//! over crop or joint crop × growth-stage labels with Bayesian decision
//! rules, a dropout MLP baseline, stratified cross-validation and PCA.
//!
//! Numerical code is generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix it to `f64`, which is what the CLI and reports use.

pub mod analysis;
pub mod classify;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod linalg;
pub mod mlp;
pub mod persist;
pub mod scalar;

pub use error::{Error, ErrorKind, Result};
pub use scalar::Scalar;

pub use dataset::{CropLabel, JointLabel, StageLabel};

pub type Dataset = dataset::Dataset<f64>;
pub type SampleRecord = dataset::SampleRecord<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type ClassGaussian = gaussian::ClassGaussian<f64>;
pub type DiscriminantModel = classify::DiscriminantModel<f64>;
pub type JointPosteriorTable = classify::JointPosteriorTable<f64>;
pub type MlpModel = mlp::MlpModel<f64>;
pub type PcaModel = analysis::PcaModel<f64>;
pub type ScoreTable = analysis::ScoreTable<f64>;
pub type ModelFile = persist::ModelFile<f64>;
