//! Damped Gauss-Newton projection onto the zero set of any constraint.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::planner::ImplicitManifold;
use crate::{Configuration, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    pub tol: f64,
    pub max_iters: usize,
    pub step: f64,
    pub damping: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            tol: 1e-3,
            max_iters: 200,
            step: 1.0,
            damping: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub q: Configuration,
    pub converged: bool,
    pub iters: usize,
    pub residual: f64,
}

const MAX_HALVINGS: usize = 10;
const MAX_ESCAPES: usize = 3;
const ESCAPE_SIZE: f64 = 1e-7;

/// `Jᵀ(JJᵀ + λI)⁻¹ h`, or `None` if the damped system cannot be solved.
pub fn damped_step(jac: &DMatrix<f64>, h: &DVector<f64>, damping: f64) -> Option<DVector<f64>> {
    let k = jac.nrows();
    let a = jac * jac.transpose() + DMatrix::identity(k, k) * damping;
    let y = a.cholesky()?.solve(h);
    let step = jac.transpose() * y;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Iterates `q ← q - s·Jᵀ(JJᵀ + λI)⁻¹h(q)` until `‖h(q)‖ ≤ tol`.
///
/// Each step is halved up to ten times until the residual decreases. When
/// no halving helps (for example at a critical point of `h` where the
/// Jacobian loses rank), `q` is nudged by a tiny fixed-seed perturbation, at
/// most three times. The last iterate is returned whether or not the
/// tolerance was met.
pub fn project(
    manifold: &dyn ImplicitManifold,
    q0: &Configuration,
    params: &ProjectionParams,
) -> Result<ProjectionResult> {
    if !(params.tol > 0.0) || !(params.step > 0.0) || !(params.damping > 0.0) {
        return Err(Error::param(
            "ecomann",
            "projection tol, step and damping must be positive",
        ));
    }
    if q0.len() != manifold.ambient_dim() {
        return Err(Error::param(
            "ecomann",
            format!(
                "projection start has dimension {}, manifold expects {}",
                q0.len(),
                manifold.ambient_dim()
            ),
        ));
    }
    let non_finite = |iter: usize| {
        Error::Numerical(format!("projection produced a non-finite iterate at iteration {iter}"))
    };
    let mut q = q0.clone();
    let mut h = manifold.evaluate(&q);
    let mut r = h.norm();
    if !r.is_finite() {
        return Err(non_finite(0));
    }
    let mut escapes = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut iters = 0;
    while r > params.tol && iters < params.max_iters {
        iters += 1;
        let jac = manifold.jacobian(&q);
        let mut accepted = false;
        if let Some(dir) = damped_step(&jac, &h, params.damping) {
            let mut s = params.step;
            for _ in 0..=MAX_HALVINGS {
                let cand = &q - &dir * s;
                let hc = manifold.evaluate(&cand);
                let rc = hc.norm();
                if !rc.is_finite() || cand.iter().any(|v| !v.is_finite()) {
                    return Err(non_finite(iters));
                }
                if rc < r {
                    q = cand;
                    h = hc;
                    r = rc;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
        }
        if !accepted {
            if escapes == MAX_ESCAPES {
                break;
            }
            escapes += 1;
            let mut nudge: DVector<f64> =
                DVector::from_fn(q.len(), |_, _| rng.random_range(-1.0..1.0));
            nudge *= ESCAPE_SIZE / nudge.norm().max(f64::MIN_POSITIVE);
            q += nudge;
            h = manifold.evaluate(&q);
            r = h.norm();
            if !r.is_finite() {
                return Err(non_finite(iters));
            }
        }
    }
    Ok(ProjectionResult {
        converged: r <= params.tol,
        q,
        iters,
        residual: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{Circle3dConstraint, SphereConstraint};

    fn v(x: &[f64]) -> Configuration {
        DVector::from_column_slice(x)
    }

    #[test]
    fn sphere_from_outside_reaches_nearest_point() {
        let p = ProjectionParams {
            tol: 1e-6,
            ..Default::default()
        };
        let res = project(&SphereConstraint::unit(3), &v(&[2.0, 0.0, 0.0]), &p).unwrap();
        assert!(res.converged);
        assert!((res.q - v(&[1.0, 0.0, 0.0])).norm() < 1e-6);
        assert!(res.iters <= 50);
    }

    #[test]
    fn on_manifold_start_takes_zero_iterations() {
        let res = project(
            &SphereConstraint::unit(3),
            &v(&[0.0, 1.0, 0.0]),
            &ProjectionParams::default(),
        )
        .unwrap();
        assert!(res.converged);
        assert_eq!(res.iters, 0);
        assert_eq!(res.q, v(&[0.0, 1.0, 0.0]));
    }

    #[test]
    fn circle_from_degenerate_axis_converges() {
        let p = ProjectionParams {
            tol: 1e-6,
            ..Default::default()
        };
        let res = project(&Circle3dConstraint, &v(&[0.0, 0.0, 1.0]), &p).unwrap();
        assert!(res.converged, "residual {}", res.residual);
        assert!(Circle3dConstraint.residual(&res.q) <= 1e-6);
    }

    #[test]
    fn residual_never_increases_between_iterates() {
        let s = SphereConstraint::unit(3);
        let mut trace = Vec::new();
        let mut q = v(&[0.05, -1.7, 0.9]);
        let p = ProjectionParams {
            max_iters: 1,
            tol: 1e-9,
            ..Default::default()
        };
        for _ in 0..30 {
            let res = project(&s, &q, &p).unwrap();
            trace.push(res.residual);
            q = res.q;
        }
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = ProjectionParams {
            tol: 0.0,
            ..Default::default()
        };
        assert!(project(&SphereConstraint::unit(3), &v(&[2.0, 0.0, 0.0]), &p).is_err());
        assert!(project(
            &SphereConstraint::unit(3),
            &v(&[2.0, 0.0]),
            &ProjectionParams::default()
        )
        .is_err());
    }
}
