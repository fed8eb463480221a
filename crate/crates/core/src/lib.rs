//! Random-effects eigenvector spatial filtering (ESF) for spatially varying
//! coefficient (SVC) regression, and its aggregated extension ESF-MA.
//!
//! ESF-MA partitions the sites with k-means, fits one random-effects ESF
//! sub-model per cluster (optionally with distance-decaying overlap between
//! clusters) plus an optional global sub-model on a truncated eigenbasis, and
//! fuses the sub-model coefficient surfaces with generalized
//! product-of-experts weights.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: datasets, distances, minimum-spanning-tree range, k-means.
//! * [`basis`]: exponential connectivity and the Moran eigenvector basis.
//! * [`estimator`]: one sub-model: restricted likelihood, coefficients, fit.
//! * [`aggregate`]: prior/posterior weights, fusion, the full pipeline.
//! * [`simulate`]: synthetic SVC scenarios and accuracy scores.
//! * [`bench`]: Monte Carlo comparison harness over the estimators.

pub mod aggregate;
pub mod basis;
pub mod bench;
mod clock;
mod error;
pub mod estimator;
pub mod geometry;
mod krylov;
mod optim;
pub mod simulate;

pub use aggregate::{
    fit_esfma, fit_reesf, AggregatedFit, ClusterSpec, EsfmaConfig, EstimationWeights, EsfmaPlan, ReesfPlan,
    StageTimings, WeightMatrix, WeightScheme, WeightVariant,
};
pub use basis::{BasisOptions, MoranBasis};
pub use error::{Error, ErrorKind, Result};
pub use estimator::{FitOptions, SubModelDesign, SubModelFit, VarianceParams};
pub use geometry::{ClusterPartition, Coord, Dataset};
pub use simulate::{SimConfig, SimTruth};

/// Re-exported so downstream crates can name matrix types without pinning
/// their own `faer` version.
pub use faer::{Mat, MatRef};
