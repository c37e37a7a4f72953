//! Point-cloud surface-normal estimation and registration.
//!
//! The crate bundles four things that are usually scattered across separate
//! tools:
//!
//! - [`cloud`] / [`knn`]: point-cloud containers, unit-sphere normalization,
//!   k-NN patch extraction backed by a kd-tree.
//! - [`classical`]: deterministic PCA and order-2 jet normal estimators with a
//!   Jacobi eigen-solver for symmetric 3x3 matrices.
//! - [`model`]: an attention-based normal-estimation network with a learnable
//!   softmax temperature, trained with Adam on a reverse-mode [`autodiff`]
//!   tape.
//! - [`registration`]: point-to-plane ICP with a Levenberg-Marquardt inner
//!   solver that consumes the estimated normals.
//!
//! [`metrics`] provides the unoriented angle error together with RMSE and
//! PGP-alpha summaries, and [`io`] handles the plain-text point/normal file
//! formats, synthetic test shapes, and attention-map export.

pub mod autodiff;
pub mod classical;
pub mod cloud;
pub mod datasets;
mod error;
pub mod io;
pub mod knn;
pub mod metrics;
pub mod model;
pub mod registration;

pub use error::{Error, Result};
