//! Deep spatial feature reconstruction for partial person re-identification.
//!
//! Feature maps are split into multi-scale blocks; a probe's blocks are
//! sparsely reconstructed from a gallery map's blocks, and the mean residual
//! is the matching distance. Everything numeric is generic over [`Scalar`]
//! (`f32` or `f64`); the aliases below fix the precision.

pub mod config;
pub mod error;
pub mod evaluation;
pub mod feature_maps;
pub mod image;
pub mod learning;
mod linalg;
pub mod matching;
pub mod scalar;
pub mod sparse_solver;
pub mod store;
pub mod synthetic;

pub use error::{DsrError, Result};
pub use scalar::Scalar;

pub type FeatureMapF32 = feature_maps::FeatureMap<f32>;
pub type FeatureMapF64 = feature_maps::FeatureMap<f64>;
pub type BlockSetF64 = feature_maps::BlockSet<f64>;
pub type LassoProblemF64 = sparse_solver::LassoProblem<f64>;
pub type SparseCodeF64 = sparse_solver::SparseCode<f64>;
pub type MatchScoreF64 = matching::MatchScore<f64>;
pub type GalleryEntryF64 = matching::GalleryEntry<f64>;
pub type FcnF32 = learning::Fcn<f32>;
pub type FcnF64 = learning::Fcn<f64>;
pub type GalleryStoreF64 = store::GalleryStore<f64>;
