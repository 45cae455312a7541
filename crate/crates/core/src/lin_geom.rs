//! Dense linear algebra and local-geometry primitives: cyclic Jacobi
//! eigendecomposition, brute-force K-nearest neighbors, Local PCA,
//! codimension estimation and the exponential map of skew-symmetric
//! matrices.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use crate::{Configuration, Error, Result};

const MODULE: &str = "lin_geom";

/// Neighborhood size used when none is configured.
pub const DEFAULT_K: usize = 40;

/// Default Local PCA neighborhood size for `n` points in `d` dimensions:
/// [`DEFAULT_K`], raised to at least `d` and capped at `n - 1`.
pub fn default_k(d: usize, n: usize) -> usize {
    DEFAULT_K.max(d).min(n.saturating_sub(1))
}

/// Local PCA output at one data point.
///
/// Columns of `eigvecs` are sorted by non-increasing eigenvalue. The first
/// `d - codim` columns span the estimated tangent space, the remaining
/// `codim` columns the normal space.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub center: Configuration,
    pub eigvecs: DMatrix<f64>,
    pub eigvals: DVector<f64>,
    pub codim: usize,
}

impl LocalFrame {
    pub fn ambient_dim(&self) -> usize {
        self.eigvals.len()
    }

    pub fn tangent_basis(&self) -> DMatrix<f64> {
        let d = self.ambient_dim();
        self.eigvecs.columns(0, d - self.codim).into_owned()
    }

    pub fn normal_basis(&self) -> DMatrix<f64> {
        let d = self.ambient_dim();
        self.eigvecs
            .columns(d - self.codim, self.codim)
            .into_owned()
    }

    pub fn tangent_eigvals(&self) -> &[f64] {
        let d = self.ambient_dim();
        &self.eigvals.as_slice()[..d - self.codim]
    }

    /// Same eigenstructure, different split between tangent and normal space.
    pub fn with_codim(&self, codim: usize) -> Result<LocalFrame> {
        let d = self.ambient_dim();
        if codim == 0 || codim >= d {
            return Err(Error::param(
                MODULE,
                format!("codimension {codim} out of range 1..{d}"),
            ));
        }
        Ok(LocalFrame {
            codim,
            ..self.clone()
        })
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in non-increasing order and the matching orthonormal
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm().max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-17 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let eigvals = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let mut eigvecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigvecs.set_column(dst, &v.column(src));
    }
    (eigvals, eigvecs)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` points closest to `points[query]`, excluding the query
/// itself. Ties are broken by the smaller index.
pub fn knn_search(points: &[Configuration], query: usize, k: usize) -> Result<Vec<usize>> {
    if query >= points.len() {
        return Err(Error::param(
            MODULE,
            format!("query index {query} out of range for {} points", points.len()),
        ));
    }
    if k == 0 || k >= points.len() {
        return Err(Error::param(
            MODULE,
            format!("K = {k} must satisfy 1 <= K < N = {}", points.len()),
        ));
    }
    let q = points[query].as_slice();
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(i, p)| (squared_distance(q, p.as_slice()), i))
        .collect();
    let by_dist_then_index = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    };
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_dist_then_index);
        cand.truncate(k);
    }
    cand.sort_by(by_dist_then_index);
    let mut out = Vec::with_capacity(k);
    out.extend(cand.iter().map(|&(_, i)| i));
    Ok(out)
}

/// K-nearest neighbors of every point.
pub fn knn_all(points: &[Configuration], k: usize) -> Result<Vec<Vec<usize>>> {
    (0..points.len())
        .map(|i| knn_search(points, i, k))
        .collect()
}

/// Intrinsic codimension from a non-increasing spectrum: `d - j*`, where
/// `j*` is the 1-based position of the largest consecutive eigenvalue gap
/// (first one wins on ties). Negative values are clamped to zero first.
pub fn estimate_codim(eigvals: &[f64]) -> usize {
    let d = eigvals.len();
    assert!(d >= 2, "estimate_codim needs at least two eigenvalues");
    let clamped: Vec<f64> = eigvals.iter().map(|&v| v.max(0.0)).collect();
    let mut best_j = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for j in 1..d {
        let gap = clamped[j - 1] - clamped[j];
        if gap > best_gap {
            best_gap = gap;
            best_j = j;
        }
    }
    d - best_j
}

/// Local PCA at `points[center]` over its `k` nearest neighbors.
pub fn local_pca(
    points: &[Configuration],
    center: usize,
    k: usize,
    codim_override: Option<usize>,
) -> Result<LocalFrame> {
    let neighbors = knn_search(points, center, k)?;
    local_pca_with_neighbors(points, center, &neighbors, codim_override)
}

/// Local PCA given a precomputed neighbor list.
pub fn local_pca_with_neighbors(
    points: &[Configuration],
    center: usize,
    neighbors: &[usize],
    codim_override: Option<usize>,
) -> Result<LocalFrame> {
    let q = &points[center];
    let d = q.len();
    let k = neighbors.len();
    if d < 2 {
        return Err(Error::param(MODULE, "ambient dimension must be at least 2"));
    }
    if k < d || k < 2 {
        return Err(Error::param(
            MODULE,
            format!("K = {k} must be at least the ambient dimension {d}"),
        ));
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for &j in neighbors {
        let x = &points[j] - q;
        cov.ger(1.0, &x, &x, 1.0);
    }
    cov /= (k - 1) as f64;
    if cov.trace() <= 1e-24 {
        return Err(Error::RankDeficient(center));
    }
    let (mut eigvals, eigvecs) = symmetric_eigen(&cov);
    eigvals.iter_mut().for_each(|v| *v = v.max(0.0));
    let codim = match codim_override {
        Some(l) if l == 0 || l >= d => {
            return Err(Error::param(
                MODULE,
                format!("codimension override {l} out of range 1..{d}"),
            ))
        }
        Some(l) => l,
        None => estimate_codim(eigvals.as_slice()),
    };
    Ok(LocalFrame {
        center: q.clone(),
        eigvecs,
        eigvals,
        codim,
    })
}

/// Local PCA for every point, each with its own estimated codimension.
pub fn local_frames(points: &[Configuration], k: usize) -> Result<Vec<LocalFrame>> {
    let neighbors = knn_all(points, k)?;
    neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| local_pca_with_neighbors(points, i, nb, None))
        .collect()
}

/// Most frequent codimension over a set of frames; ties go to the smaller value.
pub fn consensus_codim(frames: &[LocalFrame]) -> Option<usize> {
    let max_l = frames.iter().map(|f| f.codim).max()?;
    let mut counts = vec![0usize; max_l + 1];
    for f in frames {
        counts[f.codim] += 1;
    }
    counts
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
}

/// Exponential of a skew-symmetric matrix, landing in SO(l).
pub fn expm_skew(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if n != l.ncols() {
        return Err(Error::param(MODULE, "expm_skew needs a square matrix"));
    }
    if (l + l.transpose()).norm() > 1e-10 {
        return Err(Error::param(MODULE, "expm_skew input is not skew-symmetric"));
    }
    Ok(match n {
        0 => DMatrix::zeros(0, 0),
        1 => DMatrix::identity(1, 1),
        2 => {
            let theta = l[(1, 0)];
            let (s, c) = theta.sin_cos();
            DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
        }
        3 => {
            let w = [l[(2, 1)], l[(0, 2)], l[(1, 0)]];
            let theta2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
            let theta = theta2.sqrt();
            // sin(t)/t and (1 - cos(t))/t^2, with series near zero
            let (a, b) = if theta < 1e-4 {
                (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
            } else {
                (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
            };
            DMatrix::identity(3, 3) + l * a + (l * l) * b
        }
        _ => expm_scaling_squaring(l),
    })
}

fn expm_scaling_squaring(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let norm = l.norm();
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > 0.25 {
        squarings += 1;
    }
    let a = l / 2f64.powi(squarings as i32);
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=20 {
        term = &term * &a / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Skew-symmetric matrix from its strictly-lower-triangular entries, listed
/// row by row: `(1,0), (2,0), (2,1), ...`.
pub fn skew_from_params(l: usize, params: &[f64]) -> DMatrix<f64> {
    assert_eq!(params.len(), l * (l - 1) / 2);
    let mut m = DMatrix::zeros(l, l);
    let mut idx = 0;
    for i in 1..l {
        for j in 0..i {
            m[(i, j)] = params[idx];
            m[(j, i)] = -params[idx];
            idx += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(rows: &[&[f64]]) -> Vec<Configuration> {
        rows.iter().map(|r| DVector::from_row_slice(r)).collect()
    }

    #[test]
    fn knn_nearest_by_distance() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[3.0, 0.0]]);
        assert_eq!(knn_search(&p, 0, 1).unwrap(), vec![1]);
    }

    #[test]
    fn knn_tie_broken_by_index() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        assert_eq!(knn_search(&p, 0, 1).unwrap(), vec![1]);
        let p = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[-1.0, 0.0]]);
        assert_eq!(knn_search(&p, 0, 2).unwrap(), vec![1, 2]);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let p = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[3.0, 0.0]]);
        assert!(knn_search(&p, 0, 0).is_err());
        assert!(knn_search(&p, 0, 3).is_err());
        assert!(knn_search(&p, 5, 1).is_err());
    }

    #[test]
    fn knn_on_circle_matches_angular_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let angles: Vec<f64> = (0..100)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let p: Vec<Configuration> = angles
            .iter()
            .map(|t| DVector::from_vec(vec![t.cos(), t.sin()]))
            .collect();
        for query in [0, 17, 99] {
            // oracle: the 10 smallest arc distances
            let mut arcs: Vec<(f64, usize)> = angles
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != query)
                .map(|(i, t)| {
                    let diff = (t - angles[query]).rem_euclid(std::f64::consts::TAU);
                    (diff.min(std::f64::consts::TAU - diff), i)
                })
                .collect();
            arcs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expect: Vec<usize> = arcs[..10].iter().map(|a| a.1).collect();
            let mut got = knn_search(&p, query, 10).unwrap();
            expect.sort();
            got.sort();
            assert_eq!(got, expect);
        }
    }

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..7 {
            let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let s = &b + b.transpose();
            let (vals, vecs) = symmetric_eigen(&s);
            let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
            assert!((recon - &s).norm() < 1e-10);
            assert!((vecs.transpose() * &vecs - DMatrix::identity(n, n)).norm() < 1e-10);
            for w in vals.as_slice().windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn codim_examples() {
        assert_eq!(estimate_codim(&[2.0, 1.9, 0.01]), 1);
        assert_eq!(estimate_codim(&[2.0, 0.02, 0.01]), 2);
        assert_eq!(estimate_codim(&[1.0, 0.5, 0.0]), 2);
        assert_eq!(estimate_codim(&[1.0, 0.9, -1e-13]), 1);
    }

    #[test]
    fn local_pca_circle_normal_is_radial() {
        let p: Vec<Configuration> = (0..50)
            .map(|i| {
                let t = i as f64 * std::f64::consts::TAU / 50.0;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect();
        for c in [0, 13, 31] {
            let f = local_pca(&p, c, 10, None).unwrap();
            assert_eq!(f.codim, 1);
            let n = f.normal_basis();
            let radial = &p[c] / p[c].norm();
            assert!(n.column(0).dot(&radial).abs() >= 0.99);
            let vtv = f.eigvecs.transpose() * &f.eigvecs;
            assert!((vtv - DMatrix::identity(2, 2)).norm() < 1e-10);
        }
    }

    #[test]
    fn local_pca_flat_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<Configuration> = (0..60)
            .map(|_| {
                DVector::from_vec(vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    0.0,
                ])
            })
            .collect();
        let f = local_pca(&p, 7, 10, None).unwrap();
        assert!(f.eigvals[1] > 0.0);
        let f = f.with_codim(1).unwrap();
        assert!(f.normal_basis()[(2, 0)].abs() > 1.0 - 1e-10);
        assert!(f.eigvals[2].abs() < 1e-14);
        let cross = f.tangent_basis().transpose() * f.normal_basis();
        assert!(cross.norm() < 1e-10);
    }

    #[test]
    fn local_pca_identical_neighbors_is_rank_deficient() {
        let p = pts(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(
            local_pca(&p, 0, 2, None),
            Err(Error::RankDeficient(0))
        ));
    }

    #[test]
    fn local_pca_rejects_small_k() {
        let p = pts(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(local_pca(&p, 0, 2, None).is_err());
    }

    #[test]
    fn expm_quarter_turn() {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let l = DMatrix::from_row_slice(2, 2, &[0.0, -half_pi, half_pi, 0.0]);
        let r = expm_skew(&l).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((r - expect).norm() < 1e-15);
    }

    #[test]
    fn expm_zero_is_identity() {
        for n in 1..6 {
            let r = expm_skew(&DMatrix::zeros(n, n)).unwrap();
            assert!((r - DMatrix::identity(n, n)).norm() < 1e-15);
        }
    }

    fn series_oracle(l: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
        let n = l.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..terms {
            term = &term * l / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn expm_matches_series_for_small_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in [2usize, 3, 4, 5] {
            for _ in 0..10 {
                let params: Vec<f64> = (0..n * (n - 1) / 2)
                    .map(|_| rng.random_range(-0.8..0.8))
                    .collect();
                let l = skew_from_params(n, &params);
                let r = expm_skew(&l).unwrap();
                assert!((&r - series_oracle(&l, 30)).norm() < 1e-9);
                assert!((r.transpose() * &r - DMatrix::identity(n, n)).norm() < 1e-9);
                assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
                let back = expm_skew(&(-&l)).unwrap();
                assert!((&r * back - DMatrix::identity(n, n)).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn expm_rejects_non_skew() {
        let l = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(expm_skew(&l).is_err());
    }

    #[test]
    fn consensus_prefers_majority() {
        let f = LocalFrame {
            center: DVector::zeros(3),
            eigvecs: DMatrix::identity(3, 3),
            eigvals: DVector::from_vec(vec![1.0, 1.0, 0.0]),
            codim: 1,
        };
        let g = f.with_codim(2).unwrap();
        assert_eq!(consensus_codim(&[f.clone(), f.clone(), g.clone()]), Some(1));
        assert_eq!(consensus_codim(&[f, g]), Some(1));
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

        proptest! {
            #[test]
            fn codim_scale_invariant(
                mut vals in proptest::collection::vec(0.0f64..10.0, 2..7),
                c in 0.01f64..100.0,
            ) {
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let scaled: Vec<f64> = vals.iter().map(|v| v * c).collect();
                let l = estimate_codim(&vals);
                prop_assert!(l >= 1 && l < vals.len());
                // exact ties can split under rounding; only compare well-separated gaps
                let mut gaps: Vec<f64> = vals.windows(2).map(|w| w[0] - w[1]).collect();
                gaps.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if gaps.len() < 2 || gaps[0] - gaps[1] > 1e-9 {
                    prop_assert_eq!(l, estimate_codim(&scaled));
                }
            }

            #[test]
            fn knn_matches_full_sort(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let p: Vec<Configuration> = (0..200)
                    .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)))
                    .collect();
                let q = rng.random_range(0..200);
                let mut all: Vec<(f64, usize)> = p
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != q)
                    .map(|(i, x)| ((x - &p[q]).norm_squared(), i))
                    .collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let expect: Vec<usize> = all[..7].iter().map(|a| a.1).collect();
                prop_assert_eq!(knn_search(&p, q, 7).unwrap(), expect);
            }
        }
    }
}
