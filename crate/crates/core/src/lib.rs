//! Learning implicit equality-constraint manifolds from on-manifold
//! demonstrations, and planning across sequences of learned and analytic
//! constraint manifolds.
//!
//! The pipeline is: [`lin_geom::local_pca`] on every demonstration point,
//! orthogonal subspace alignment of the normal bases ([`osa`]), off-manifold
//! augmentation along the aligned normals ([`augment`]), and training of the
//! implicit-function network ([`ecomann`]). Trained networks and analytic
//! constraints share the [`planner::ImplicitManifold`] interface so they can
//! be mixed inside the sequential planner.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod ecomann;
pub mod error;
pub mod eval;
pub mod lin_geom;
pub mod osa;
pub mod planner;
pub mod svg;

pub use error::{Error, Result};

/// A point in the ambient configuration space.
pub type Configuration = nalgebra::DVector<f64>;
