//! The five training losses and their gradients with respect to the network
//! output (or Jacobian, for the alignment loss).

use nalgebra::DMatrix;

use super::model::MlpModel;
use crate::lin_geom::LocalFrame;
use crate::{Error, Result};

/// Outputs with a smaller norm are excluded from the fraction loss.
pub const FRACTION_DELTA: f64 = 1e-8;

/// `(‖h‖ - label)²`.
pub fn loss_norm(h: &[f64], norm_label: f64) -> f64 {
    let r = norm(h) - norm_label;
    r * r
}

/// Loss and `∂L/∂h`. At `h = 0` the subgradient `0` is used.
pub fn grad_norm(h: &[f64], norm_label: f64) -> (f64, Vec<f64>) {
    let n = norm(h);
    let r = n - norm_label;
    let g = if n > 0.0 {
        h.iter().map(|v| 2.0 * r * v / n).collect()
    } else {
        vec![0.0; h.len()]
    };
    (r * r, g)
}

/// `‖h₊ + h₋‖²`.
pub fn loss_reflection(h_plus: &[f64], h_minus: &[f64]) -> f64 {
    h_plus.iter().zip(h_minus).map(|(a, b)| (a + b).powi(2)).sum()
}

/// Loss and the gradient, which is identical for both arguments.
pub fn grad_reflection(h_plus: &[f64], h_minus: &[f64]) -> (f64, Vec<f64>) {
    let s: Vec<f64> = h_plus.iter().zip(h_minus).map(|(a, b)| a + b).collect();
    (dot(&s, &s), s.iter().map(|v| 2.0 * v).collect())
}

/// `‖h_far/‖h_far‖ - h_near/‖h_near‖‖²`, or `None` when either norm is
/// below [`FRACTION_DELTA`].
pub fn loss_fraction(h_far: &[f64], h_near: &[f64]) -> Option<f64> {
    grad_fraction(h_far, h_near).map(|(l, _, _)| l)
}

/// Loss with gradients for the far and near outputs.
pub fn grad_fraction(h_far: &[f64], h_near: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let (nf, nn) = (norm(h_far), norm(h_near));
    if nf <= FRACTION_DELTA || nn <= FRACTION_DELTA {
        return None;
    }
    let u: Vec<f64> = h_far.iter().map(|v| v / nf).collect();
    let v: Vec<f64> = h_near.iter().map(|x| x / nn).collect();
    let diff: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
    let loss = dot(&diff, &diff);
    // d(x/‖x‖) = (I - x̂x̂ᵀ)/‖x‖
    let tangential = |unit: &[f64], g: &[f64], n: f64| -> Vec<f64> {
        let c = dot(unit, g);
        g.iter().zip(unit).map(|(gi, ui)| (gi - c * ui) / n).collect()
    };
    let gu: Vec<f64> = diff.iter().map(|x| 2.0 * x).collect();
    let gv: Vec<f64> = diff.iter().map(|x| -2.0 * x).collect();
    Some((loss, tangential(&u, &gu, nf), tangential(&v, &gv, nn)))
}

/// `‖h_a - h_c‖²`.
pub fn loss_similar(h_a: &[f64], h_c: &[f64]) -> f64 {
    h_a.iter().zip(h_c).map(|(a, c)| (a - c).powi(2)).sum()
}

/// Loss and `∂L/∂h_a` (the gradient for `h_c` is its negation).
pub fn grad_similar(h_a: &[f64], h_c: &[f64]) -> (f64, Vec<f64>) {
    let d: Vec<f64> = h_a.iter().zip(h_c).map(|(a, c)| a - c).collect();
    (dot(&d, &d), d.iter().map(|v| 2.0 * v).collect())
}

/// `tr(V Vᵀ P)` with `P = I - Jᵀ(JJᵀ + λI)⁻¹J` and its gradient `∂L/∂J`.
///
/// `normal` is the `d x l` PCA normal basis. If `JJᵀ + λI` cannot be
/// factored, `λ` is raised tenfold up to three times.
pub fn alignment_from_jacobian(
    jac: &DMatrix<f64>,
    normal: &DMatrix<f64>,
    lambda: f64,
) -> Result<(f64, DMatrix<f64>)> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::param("ecomann", "damping must be positive"));
    }
    let m = jac * normal;
    let jjt = jac * jac.transpose();
    let k = jjt.nrows();
    let mut lam = lambda;
    for _ in 0..4 {
        let a = &jjt + DMatrix::identity(k, k) * lam;
        if let Some(chol) = a.clone().cholesky() {
            let a_inv_m = chol.solve(&m);
            if a_inv_m.iter().all(|v| v.is_finite()) {
                let mmt_trace = m.component_mul(&a_inv_m).sum();
                let loss = normal.ncols() as f64 - mmt_trace;
                // B = A⁻¹ M Mᵀ A⁻¹
                let b = &a_inv_m * a_inv_m.transpose();
                let grad = (&b * jac - &a_inv_m * normal.transpose()) * 2.0;
                return Ok((loss, grad));
            }
        }
        lam *= 10.0;
    }
    Err(Error::Numerical(
        "JJᵀ + λI is singular after damping escalation".into(),
    ))
}

/// Alignment loss of the model at `q` against the frame's normal basis.
pub fn loss_alignment(model: &MlpModel, q: &[f64], frame: &LocalFrame, lambda: f64) -> Result<f64> {
    let j = model.jacobian(q)?;
    let v = frame.normal_basis();
    alignment_from_jacobian(&j, &v, lambda).map(|(l, _)| l)
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elementary_loss_values() {
        assert!(loss_norm(&[0.3, 0.4], 0.5).abs() < 1e-15);
        assert!((loss_norm(&[0.6, 0.8], 0.5) - 0.25).abs() < 1e-15);
        assert_eq!(loss_norm(&[0.0], 0.0), 0.0);

        assert!(loss_reflection(&[0.2], &[-0.2]).abs() < 1e-15);
        assert!((loss_reflection(&[0.2], &[0.2]) - 0.16).abs() < 1e-15);
        assert_eq!(loss_reflection(&[1.0, 0.0], &[0.0, 1.0]), 2.0);

        assert!(loss_fraction(&[2.0, 0.0], &[0.5, 0.0]).unwrap().abs() < 1e-15);
        assert_eq!(loss_fraction(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 4.0);
        assert!((loss_fraction(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(loss_fraction(&[0.0, 0.0], &[1.0, 0.0]).is_none());

        assert_eq!(loss_similar(&[0.7, 0.1], &[0.7, 0.1]), 0.0);
        assert_eq!(loss_similar(&[1.0], &[0.0]), 1.0);
        assert!((loss_similar(&[0.3, 0.4], &[0.0, 0.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn fraction_loss_is_scale_invariant() {
        let a = [0.3, -1.2, 0.5];
        let b = [0.9, 0.1, -0.4];
        let base = loss_fraction(&a, &b).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
            assert!((loss_fraction(&scaled, &b).unwrap() - base).abs() < 1e-12);
        }
    }

    fn fd_check(f: &dyn Fn(&[f64]) -> f64, x: &[f64], g: &[f64]) {
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn output_gradients_match_finite_differences() {
        let a = [0.3, -1.2];
        let b = [0.9, 0.4];
        fd_check(&|x| loss_norm(x, 0.7), &a, &grad_norm(&a, 0.7).1);
        fd_check(&|x| loss_reflection(x, &b), &a, &grad_reflection(&a, &b).1);
        fd_check(&|x| loss_similar(x, &b), &a, &grad_similar(&a, &b).1);
        let (_, gf, gn) = grad_fraction(&a, &b).unwrap();
        fd_check(&|x| loss_fraction(x, &b).unwrap(), &a, &gf);
        fd_check(&|x| loss_fraction(&a, x).unwrap(), &b, &gn);
    }

    #[test]
    fn alignment_limits() {
        let j = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        let ez = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let ex = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let (l0, _) = alignment_from_jacobian(&j, &ez, 1e-9).unwrap();
        let (l1, _) = alignment_from_jacobian(&j, &ex, 1e-9).unwrap();
        assert!(l0.abs() < 1e-8);
        assert!((l1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_matches_svd_null_space_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let j = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
            let raw = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
            let v = raw.qr().q();
            let (loss, _) = alignment_from_jacobian(&j, &v, 1e-6).unwrap();
            // null space of J from the full SVD of Jᵀ J
            let (_, vecs) = crate::lin_geom::symmetric_eigen(&(j.transpose() * &j));
            let e_null = vecs.columns(2, 2).into_owned();
            let oracle = (&v * v.transpose() * &e_null).norm_squared();
            assert!((loss - oracle).abs() < 1e-4, "{loss} vs {oracle}");
        }
    }

    #[test]
    fn alignment_jacobian_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let j = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
        let v = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let (_, g) = alignment_from_jacobian(&j, &v, 1e-2).unwrap();
        let h = 1e-6;
        for idx in 0..6 {
            let mut jp = j.clone();
            let mut jm = j.clone();
            jp[idx] += h;
            jm[idx] -= h;
            let fd = (alignment_from_jacobian(&jp, &v, 1e-2).unwrap().0
                - alignment_from_jacobian(&jm, &v, 1e-2).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-6, "{fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn zero_jacobian_escalates_instead_of_failing() {
        let j = DMatrix::zeros(1, 3);
        let v = DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let (l, _) = alignment_from_jacobian(&j, &v, 1e-300).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }
}
