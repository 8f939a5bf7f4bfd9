//! Differentially private k-means clustering.
//!
//! Four private algorithms share one set of primitives:
//!
//! * [`dplloyd`]: Lloyd iterations with Laplace-noised counts and sums.
//! * [`gkm`]: sample-and-aggregate over disjoint blocks.
//! * [`pgkm`]: genetic search with exponential-mechanism selection.
//! * [`eugkm`]: k-means on a noisy uniform-grid synopsis.
//!
//! [`hybrid`] picks between EUGkM and an EUGkM + one-round DPLloyd pipeline
//! from the closed-form predictors in [`error_models`], and [`harness`]
//! runs repeatable benchmark sweeps over all of them.

pub mod data;
pub mod dplloyd;
pub mod error;
pub mod error_models;
pub mod eugkm;
pub mod gkm;
pub mod harness;
pub mod hybrid;
pub mod kmeans;
pub mod mechanisms;
pub mod pgkm;

pub use data::{Dataset, SyntheticSpec};
pub use error::{DpError, Result};
pub use kmeans::Centroids;
pub use mechanisms::{Budget, Rng};
