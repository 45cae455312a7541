//! Off-manifold augmentation along aligned normal directions and the
//! siamese pair lists built over the augmented set.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{format_row, OnManifoldDataset};
use crate::lin_geom::{knn_all, LocalFrame};
use crate::{Configuration, Error, Result};

const MODULE: &str = "augment";

/// `sqrt` of the mean tangent-space eigenvalue over all frames.
pub fn compute_epsilon(frames: &[LocalFrame]) -> Result<f64> {
    let (sum, count) = frames
        .iter()
        .flat_map(|f| f.tangent_eigvals().iter())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return Err(Error::param(MODULE, "epsilon needs at least one frame"));
    }
    Ok((sum / count as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPoint {
    pub point: Configuration,
    pub parent_index: usize,
    /// `0` for the on-manifold point itself.
    pub level: usize,
    /// `+1` for `q + iεu`, `-1` for `q - iεu`, `0` at level 0.
    pub sign: i8,
    /// Which of the parent's random directions this point was built from.
    pub slot: usize,
    /// Unit direction `u` as drawn (before the sign); `None` at level 0.
    pub direction: Option<DVector<f64>>,
    pub norm_label: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SiamesePairs {
    /// `(q + iεu, q - iεu)`.
    pub reflection_pairs: Vec<(usize, usize)>,
    /// `(far, near, ratio)` with `near = q ± ratio·iεu`.
    pub fraction_pairs: Vec<(usize, usize, f64)>,
    pub similar_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub levels: usize,
    pub dirs_per_point: usize,
    /// Neighborhood size for similar pairs.
    pub k: usize,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            levels: 7,
            dirs_per_point: 2,
            k: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugmentedSet {
    /// The first `N` entries are the on-manifold points in dataset order.
    pub points: Vec<AugmentedPoint>,
    pub pairs: SiamesePairs,
    pub epsilon: f64,
    pub num_on_manifold: usize,
    pub rejected: usize,
}

impl AugmentedSet {
    /// Only the on-manifold points, no pairs.
    pub fn on_manifold_only(points: &[Configuration], epsilon: f64) -> Self {
        AugmentedSet {
            points: level_zero(points),
            pairs: SiamesePairs::default(),
            epsilon,
            num_on_manifold: points.len(),
            rejected: 0,
        }
    }

    /// Dataset file format with a trailing level column.
    pub fn to_text(&self, ds: &OnManifoldDataset) -> String {
        let mut s = format!(
            "# name={}_aug d={} N={} l={} gt={} level=last eps={:?}\n",
            ds.name,
            ds.ambient_dim,
            self.points.len(),
            ds.true_codim,
            ds.ground_truth,
            self.epsilon
        );
        for p in &self.points {
            let _ = writeln!(s, "{},{}", format_row(p.point.as_slice()), p.level);
        }
        s
    }
}

fn level_zero(points: &[Configuration]) -> Vec<AugmentedPoint> {
    points
        .iter()
        .enumerate()
        .map(|(i, q)| AugmentedPoint {
            point: q.clone(),
            parent_index: i,
            level: 0,
            sign: 0,
            slot: 0,
            direction: None,
            norm_label: 0.0,
        })
        .collect()
}

/// Whether `parent` is the on-manifold point nearest to `x` (no other point
/// strictly closer).
fn nearest_is_parent(points: &[Configuration], x: &DVector<f64>, parent: usize) -> bool {
    let d_parent = (x - &points[parent]).norm_squared();
    points.iter().enumerate().all(|(j, p)| {
        j == parent || {
            let mut acc = 0.0;
            for (a, b) in x.iter().zip(p.iter()) {
                acc += (a - b) * (a - b);
                if acc >= d_parent {
                    return true;
                }
            }
            acc >= d_parent
        }
    })
}

/// One standard-normal weight vector per slot, shared by every point.
/// Slots parallel to an earlier slot would only repeat its directions up to
/// sign and are dropped, so codimension one always yields a single slot.
fn slot_weights(l: usize, dirs: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(dirs);
    for _ in 0..dirs {
        let w = DVector::from_fn(l, |_, _| rng.sample::<f64, _>(StandardNormal));
        let wn = w.norm();
        let parallel = out
            .iter()
            .any(|o| (o.dot(&w).abs() / (o.norm() * wn)) > 1.0 - 1e-12);
        if wn > 1e-12 && !parallel {
            out.push(w);
        }
    }
    if out.is_empty() {
        out.push(DVector::from_element(l, 1.0));
    }
    out
}

/// Builds `q ± iεu` for `i = 1..levels` and every direction slot, rejects
/// points whose nearest on-manifold point is not their parent, and forms
/// the reflection, fraction (`1/2`, even levels) and similar pair lists.
///
/// Directions are `u = normalize(V_N w)` where the weight vector `w` of a
/// slot is shared by all points. With globally aligned normal bases this
/// orients every slot consistently across the manifold, and the similar
/// pairs between mutual `k`-nearest parents tie the sign of `h` together
/// along the whole neighbor graph.
pub fn augment_dataset(
    points: &[Configuration],
    aligned_normals: &[DMatrix<f64>],
    epsilon: f64,
    params: &AugmentParams,
) -> Result<AugmentedSet> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::param(MODULE, format!("epsilon {epsilon} must be positive")));
    }
    if params.levels == 0 {
        return Err(Error::param(MODULE, "levels must be at least 1"));
    }
    if points.len() != aligned_normals.len() {
        return Err(Error::param(MODULE, "one normal basis per point required"));
    }
    let n = points.len();
    if n < 2 {
        return Err(Error::param(MODULE, "augmentation needs at least 2 points"));
    }
    let l = aligned_normals[0].ncols();
    let k = params.k.clamp(1, n - 1);
    let neighbors = knn_all(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let weights = slot_weights(l, params.dirs_per_point.max(1), &mut rng);
    let slots = weights.len();

    let mut out = level_zero(points);
    let mut rejected = 0;
    let levels = params.levels;
    // slot_index[parent][slot][sign][level-1] -> index into `out`
    let mut index = vec![vec![[vec![None; levels], vec![None; levels]]; slots]; n];
    for (parent, q) in points.iter().enumerate() {
        let v = &aligned_normals[parent];
        for (slot, w) in weights.iter().enumerate() {
            let mut u = v * w;
            let norm = u.norm();
            if norm < 1e-12 {
                u = v.column(0).into_owned();
            } else {
                u /= norm;
            }
            for (si, sign) in [1i8, -1].into_iter().enumerate() {
                for i in 1..=levels {
                    let step = epsilon * i as f64;
                    let x = q + &u * (step * sign as f64);
                    if !nearest_is_parent(points, &x, parent) {
                        rejected += 1;
                        continue;
                    }
                    index[parent][slot][si][i - 1] = Some(out.len());
                    out.push(AugmentedPoint {
                        point: x,
                        parent_index: parent,
                        level: i,
                        sign,
                        slot,
                        direction: Some(u.clone()),
                        norm_label: step,
                    });
                }
            }
        }
    }

    let mut pairs = SiamesePairs::default();
    for per_parent in &index {
        for per_slot in per_parent {
            for i in 0..levels {
                if let (Some(a), Some(b)) = (per_slot[0][i], per_slot[1][i]) {
                    pairs.reflection_pairs.push((a, b));
                }
            }
            for side in per_slot {
                for lvl in (2..=levels).step_by(2) {
                    if let (Some(far), Some(near)) = (side[lvl - 1], side[lvl / 2 - 1]) {
                        pairs.fraction_pairs.push((far, near, 0.5));
                    }
                }
            }
        }
    }
    for a in 0..n {
        for &c in &neighbors[a] {
            if c <= a || !neighbors[c].contains(&a) {
                continue;
            }
            for slot in 0..slots {
                for si in 0..2 {
                    for i in 0..levels {
                        if let (Some(x), Some(y)) = (index[a][slot][si][i], index[c][slot][si][i]) {
                            pairs.similar_pairs.push((x, y));
                        }
                    }
                }
            }
        }
    }
    Ok(AugmentedSet {
        points: out,
        pairs,
        epsilon,
        num_on_manifold: n,
        rejected,
    })
}
