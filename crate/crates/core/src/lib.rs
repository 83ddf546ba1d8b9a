//! Multi-level part instance segmentation with semantic-probability-guided
//! instance feature fusion.
//!
//! The numeric kernels ([`numerics`], [`fusion`], [`cluster`]) are generic
//! over [`Scalar`]; the data, model and metrics layers run in `f64`. The
//! aliases below fix the scalar for pipeline code.

pub mod cluster;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod scalar;

pub use error::{Error, Result};
pub use fusion::FusionMode;
pub use scalar::Scalar;

pub type Real = f64;
pub type Matrix = numerics::Matrix<Real>;
pub type Graph = numerics::Graph<Real>;
pub type ProbMatrix = fusion::ProbMatrix<Real>;
pub type ClusterParams = cluster::ClusterParams<Real>;
