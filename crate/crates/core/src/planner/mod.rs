//! Sequential constrained planning over learned and analytic manifolds.

mod manifold;
mod rrt;

pub use manifold::{
    Circle3dConstraint, EndEffectorPlaneConstraint, HyperplaneConstraint, ImplicitManifold,
    Intersection, LearnedManifold, ManifoldKind, ParaboloidConstraint, SphereConstraint,
    UprightOrientationConstraint,
};
pub use rrt::*;
