//! Covariate-dependent stable isotope mixing models fitted by fixed-form
//! Gaussian variational Bayes.
//!
//! The usual path is [`load_dataset`] (or [`SimmInput::from_parts`]),
//! [`run_ffvb`], then the post-processing in [`inference`], [`loo`] and
//! [`plot`].

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod datasets;
pub mod design;
pub mod error;
pub mod ffvb;
pub mod geometry;
pub mod inference;
pub mod input;
pub mod likelihood;
pub mod loo;
mod matrix_serde;
pub mod model;
pub mod plot;
pub mod simulation;
pub mod svg;

#[cfg(test)]
mod testutil;

pub use design::{build_design_matrix, CovariateKind, CovariateSpec, CovariateTable, DesignEncoder};
pub use error::{Error, Result};
pub use ffvb::{run_ffvb, FfvbConfig};
pub use geometry::{validate_geometry, GeometryReport};
pub use inference::{predict_proportions, summarize, SummaryKind, SummaryTable};
pub use input::{load_dataset, DatasetFiles, SimmInput, SourceTable};
pub use likelihood::{PriorSpec, ThetaPoint, VarianceMode};
pub use loo::{loo_estimate, pointwise_loglik, LooResult};
pub use model::{Convergence, FittedModel};
pub use simulation::{simulate_dataset, Scenario};
