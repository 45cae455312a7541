//! The common constraint interface and the analytic constraints used by the
//! generators, the metrics and the planner.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::dataset::KinematicChain;
use crate::ecomann::MlpModel;
use crate::Configuration;

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldKind {
    Analytic(String),
    Learned,
}

/// An equality constraint `h(q) = 0` with its Jacobian.
pub trait ImplicitManifold: Send + Sync {
    fn evaluate(&self, q: &Configuration) -> DVector<f64>;
    /// `codim x ambient_dim` matrix of partial derivatives.
    fn jacobian(&self, q: &Configuration) -> DMatrix<f64>;
    fn ambient_dim(&self) -> usize;
    fn codim(&self) -> usize;
    fn kind(&self) -> ManifoldKind;

    fn residual(&self, q: &Configuration) -> f64 {
        self.evaluate(q).norm()
    }
}

impl fmt::Debug for dyn ImplicitManifold + '_ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ImplicitManifold({:?}, d={}, l={})",
            self.kind(),
            self.ambient_dim(),
            self.codim()
        )
    }
}

/// `‖q - c‖² - r²`.
#[derive(Debug, Clone)]
pub struct SphereConstraint {
    pub center: Configuration,
    pub radius: f64,
}

impl SphereConstraint {
    pub fn unit(d: usize) -> Self {
        SphereConstraint {
            center: DVector::zeros(d),
            radius: 1.0,
        }
    }
}

impl ImplicitManifold for SphereConstraint {
    fn evaluate(&self, q: &Configuration) -> DVector<f64> {
        DVector::from_element(1, (q - &self.center).norm_squared() - self.radius * self.radius)
    }

    fn jacobian(&self, q: &Configuration) -> DMatrix<f64> {
        let g = (q - &self.center) * 2.0;
        DMatrix::from_row_slice(1, q.len(), g.as_slice())
    }

    fn ambient_dim(&self) -> usize {
        self.center.len()
    }

    fn codim(&self) -> usize {
        1
    }

    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Analytic("sphere".into())
    }
}

/// Unit circle in the `z = 0` plane of ℝ³: `(x² + y² - 1, z)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Circle3dConstraint;

impl ImplicitManifold for Circle3dConstraint {
    fn evaluate(&self, q: &Configuration) -> DVector<f64> {
        DVector::from_vec(vec![q[0] * q[0] + q[1] * q[1] - 1.0, q[2]])
    }

    fn jacobian(&self, q: &Configuration) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 3, &[2.0 * q[0], 2.0 * q[1], 0.0, 0.0, 0.0, 1.0])
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn codim(&self) -> usize {
        2
    }

    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Analytic("circle3d".into())
    }
}

/// Hyperplane `n·q - offset = 0`.
#[derive(Debug, Clone)]
pub struct HyperplaneConstraint {
    pub normal: Configuration,
    pub offset: f64,
}

impl ImplicitManifold for HyperplaneConstraint {
    fn evaluate(&self, q: &Configuration) -> DVector<f64> {
        DVector::from_element(1, self.normal.dot(q) - self.offset)
    }

    fn jacobian(&self, _q: &Configuration) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, self.normal.len(), self.normal.as_slice())
    }

    fn ambient_dim(&self) -> usize {
        self.normal.len()
    }

    fn codim(&self) -> usize {
        1
    }

    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Analytic("hyperplane".into())
    }
}

/// Vertical paraboloid in ℝ³: `z - opening·(x² + y²) - apex = 0`.
/// `opening = +1` opens upward, `-1` downward.
#[derive(Debug, Clone, Copy)]
pub struct ParaboloidConstraint {
    pub opening: f64,
    pub apex: f64,
}

impl ImplicitManifold for ParaboloidConstraint {
    fn evaluate(&self, q: &Configuration) -> DVector<f64> {
        DVector::from_element(
            1,
            q[2] - self.opening * (q[0] * q[0] + q[1] * q[1]) - self.apex,
        )
    }

    fn jacobian(&self, q: &Configuration) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            1,
            3,
            &[-2.0 * self.opening * q[0], -2.0 * self.opening * q[1], 1.0],
        )
    }

    fn ambient_dim(&self) -> usize {
        3
    }

    fn codim(&self) -> usize {
        1
    }

    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Analytic("paraboloid".into())
    }
}

/// End-effector height of a serial chain: `p_z(fk(q)) = 0`.
#[derive(Debug, Clone)]
pub struct EndEffectorPlaneConstraint {
    pub chain: KinematicChain,
}

impl ImplicitManifold for EndEffectorPlaneConstraint {
    fn evaluate(&self, q: &Configuration) -> DVector<f64> {
        let (p, _) = self.chain.fk_unchecked(q.as_slice());
        DVector::from_element(1, p.z)
    }

    fn jacobian(&self, q: &Configuration) -> DMatrix<f64> {
        let frames = self.chain.joint_frames(q.as_slice());
        let mut j = DMatrix::zeros(1, q.len());
        for (i, (axis, origin)) in frames.joints.iter().enumerate() {
            let dp = axis.cross(&(frames.position - origin));
            j[(0, i)] = dp.z;
        }
        j
    }

    fn ambient_dim(&self) -> usize {
        self.chain.dof()
    }

    fn codim(&self) -> usize {
        1
    }

    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Analytic("plane_arm".into())
    }
}

/// Upright end-effector: the x and y components of the tool z-axis vanish.
#[derive(Debug, Clone)]
pub struct UprightOrientationConstraint {
    pub chain: KinematicChain,
}

impl ImplicitManifold for UprightOrientationConstraint {
    fn evaluate(&self, q: &Configuration) -> DVector<f64> {
        let (_, r) = self.chain.fk_unchecked(q.as_slice());
        DVector::from_vec(vec![r[(0, 2)], r[(1, 2)]])
    }

    fn jacobian(&self, q: &Configuration) -> DMatrix<f64> {
        let frames = self.chain.joint_frames(q.as_slice());
        let z_axis: Vector3<f64> = frames.rotation.column(2).into_owned();
        let mut j = DMatrix::zeros(2, q.len());
        for (i, (axis, _)) in frames.joints.iter().enumerate() {
            let dz = axis.cross(&z_axis);
            j[(0, i)] = dz.x;
            j[(1, i)] = dz.y;
        }
        j
    }

    fn ambient_dim(&self) -> usize {
        self.chain.dof()
    }

    fn codim(&self) -> usize {
        2
    }

    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Analytic("orient_arm".into())
    }
}

/// A trained network used as a constraint.
#[derive(Debug, Clone)]
pub struct LearnedManifold {
    pub model: Arc<MlpModel>,
}

impl LearnedManifold {
    pub fn new(model: MlpModel) -> Self {
        LearnedManifold {
            model: Arc::new(model),
        }
    }
}

impl ImplicitManifold for LearnedManifold {
    fn evaluate(&self, q: &Configuration) -> DVector<f64> {
        DVector::from_vec(self.model.forward_unchecked(q.as_slice()))
    }

    fn jacobian(&self, q: &Configuration) -> DMatrix<f64> {
        self.model.jacobian_unchecked(q.as_slice())
    }

    fn ambient_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn codim(&self) -> usize {
        self.model.output_dim()
    }

    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Learned
    }
}

/// Two constraints stacked; the zero set is their intersection.
pub struct Intersection<'a> {
    pub first: &'a dyn ImplicitManifold,
    pub second: &'a dyn ImplicitManifold,
}

impl ImplicitManifold for Intersection<'_> {
    fn evaluate(&self, q: &Configuration) -> DVector<f64> {
        let a = self.first.evaluate(q);
        let b = self.second.evaluate(q);
        DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
    }

    fn jacobian(&self, q: &Configuration) -> DMatrix<f64> {
        let a = self.first.jacobian(q);
        let b = self.second.jacobian(q);
        let mut j = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
        j.rows_mut(0, a.nrows()).copy_from(&a);
        j.rows_mut(a.nrows(), b.nrows()).copy_from(&b);
        j
    }

    fn ambient_dim(&self) -> usize {
        self.first.ambient_dim()
    }

    fn codim(&self) -> usize {
        self.first.codim() + self.second.codim()
    }

    fn kind(&self) -> ManifoldKind {
        ManifoldKind::Analytic("intersection".into())
    }
}
