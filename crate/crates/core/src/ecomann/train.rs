//! End-to-end training: Local PCA, alignment, augmentation and minibatch
//! Adam on the weighted sum of the five losses.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{alignment_from_jacobian, grad_fraction, grad_norm, grad_reflection, grad_similar};
use super::model::{Gradients, MlpModel};
use crate::augment::{augment_dataset, compute_epsilon, AugmentParams, AugmentedSet};
use crate::dataset::OnManifoldDataset;
use crate::lin_geom::{consensus_codim, default_k, local_frames, LocalFrame};
use crate::osa::{osa_align, OsaParams, OsaResult};
use crate::{Configuration, Error, Result};

const MODULE: &str = "ecomann";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub norm: f64,
    pub reflection: f64,
    pub fraction: f64,
    pub similar: f64,
    pub alignment: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            norm: 1.0,
            reflection: 1.0,
            fraction: 1.0,
            similar: 1.0,
            alignment: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    pub disable_augmentation: bool,
    pub disable_osa: bool,
    pub disable_reflection: bool,
    pub disable_fraction: bool,
    pub disable_similar: bool,
    pub disable_alignment: bool,
}

impl Ablation {
    pub fn without_siamese() -> Self {
        Ablation {
            disable_reflection: true,
            disable_fraction: true,
            disable_similar: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Tikhonov damping in the alignment loss.
    pub lambda: f64,
    pub ablation: Ablation,
    pub levels: usize,
    pub dirs_per_point: usize,
    /// Nearest-neighbor count linking parents into similar pairs.
    pub similar_k: usize,
    /// Local PCA neighborhood; `None` uses [`default_k`].
    pub k: Option<usize>,
    /// Forces the codimension instead of the per-point consensus.
    pub codim: Option<usize>,
    pub osa: OsaParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            lr: 1e-3,
            epochs: 100,
            batch_size: 128,
            seed: 0,
            lambda: 1e-3,
            ablation: Ablation::default(),
            levels: 7,
            dirs_per_point: 2,
            similar_k: 6,
            k: None,
            codim: None,
            osa: OsaParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if !(self.lr > 0.0) {
            return Err(Error::param(MODULE, "learning rate must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::param(MODULE, "lambda must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::param(MODULE, "batch size and epochs must be positive"));
        }
        if [w.norm, w.reflection, w.fraction, w.similar, w.alignment]
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::param(MODULE, "loss weights must be finite and >= 0"));
        }
        if self.similar_k == 0 || self.dirs_per_point == 0 {
            return Err(Error::param(MODULE, "similar_k and dirs_per_point must be positive"));
        }
        if self.levels == 0 {
            return Err(Error::param(MODULE, "levels must be at least 1"));
        }
        Ok(())
    }
}

/// Everything computed from the data before optimization starts.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Local frames, all split at the common codimension.
    pub frames: Vec<LocalFrame>,
    pub codim: usize,
    /// Normal bases used for augmentation (aligned unless OSA is disabled).
    pub normals: Vec<DMatrix<f64>>,
    pub epsilon: f64,
    pub augmented: AugmentedSet,
    pub osa: Option<OsaResult>,
}

/// Local PCA at every point with `k` neighbors, all split at `codim` or,
/// when `None`, at the most common per-point estimate.
pub fn common_frames(
    points: &[Configuration],
    k: usize,
    codim: Option<usize>,
) -> Result<(Vec<LocalFrame>, usize)> {
    let raw = local_frames(points, k)?;
    let codim = match codim {
        Some(l) => l,
        None => consensus_codim(&raw).ok_or_else(|| Error::param(MODULE, "empty dataset"))?,
    };
    let frames = raw
        .iter()
        .map(|f| f.with_codim(codim))
        .collect::<Result<_>>()?;
    Ok((frames, codim))
}

pub fn prepare(ds: &OnManifoldDataset, cfg: &TrainConfig) -> Result<Prepared> {
    cfg.validate()?;
    let d = ds.ambient_dim;
    let n = ds.len();
    let k = cfg.k.unwrap_or_else(|| default_k(d, n));
    if n <= k {
        return Err(Error::param(MODULE, format!("need more than K = {k} points, got {n}")));
    }
    let (frames, codim) = common_frames(&ds.points, k, cfg.codim)?;
    let epsilon = compute_epsilon(&frames)?;
    let (normals, osa) = if cfg.ablation.disable_osa {
        (frames.iter().map(|f| f.normal_basis()).collect(), None)
    } else {
        let res = osa_align(&ds.points, &frames, &cfg.osa)?;
        (res.aligned.clone(), Some(res))
    };
    let augmented = if cfg.ablation.disable_augmentation {
        AugmentedSet::on_manifold_only(&ds.points, epsilon)
    } else {
        augment_dataset(
            &ds.points,
            &normals,
            epsilon,
            &AugmentParams {
                levels: cfg.levels,
                dirs_per_point: cfg.dirs_per_point,
                k: cfg.similar_k,
                seed: cfg.seed,
            },
        )?
    };
    Ok(Prepared {
        frames,
        codim,
        normals,
        epsilon,
        augmented,
        osa,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: MlpModel,
    /// Mean weighted loss per epoch.
    pub history: Vec<f64>,
    pub prepared: Prepared,
}

pub fn train(ds: &OnManifoldDataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    let prepared = prepare(ds, cfg)?;
    let (model, history) = train_prepared(&prepared, ds.ambient_dim, cfg)?;
    Ok(TrainOutput {
        model,
        history,
        prepared,
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut idx = 0;
        for (layer, (gw, gb)) in model
            .layers_mut()
            .iter_mut()
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            for (p, g) in layer
                .weights
                .iter_mut()
                .chain(layer.bias.iter_mut())
                .zip(gw.iter().chain(gb.iter()))
            {
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                idx += 1;
            }
        }
    }
}

fn chunk<T>(items: &[T], c: usize, steps: usize) -> &[T] {
    let m = items.len();
    &items[c * m / steps..(c + 1) * m / steps]
}

/// Optimizes a fresh `d-36-24-18-10-l` network on prepared data.
pub fn train_prepared(
    prep: &Prepared,
    d: usize,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<f64>)> {
    cfg.validate()?;
    let mut model = MlpModel::ecomann(d, prep.codim, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(model.num_params(), cfg.lr);
    let mut grads = Gradients::zero_like(&model);
    let mut frac_grads = Gradients::zero_like(&model);
    let mut tr = model.new_trace();
    let mut tr2 = model.new_trace();

    let aug = &prep.augmented;
    let ab = &cfg.ablation;
    let w = &cfg.weights;
    let mut norm_idx: Vec<usize> = (0..aug.points.len()).collect();
    let mut align_idx: Vec<usize> = if ab.disable_alignment || w.alignment == 0.0 {
        Vec::new()
    } else {
        (0..aug.num_on_manifold).collect()
    };
    let keep = |flag: bool, weight: f64| !flag && weight > 0.0;
    let mut refl = if keep(ab.disable_reflection, w.reflection) {
        aug.pairs.reflection_pairs.clone()
    } else {
        Vec::new()
    };
    let mut frac = if keep(ab.disable_fraction, w.fraction) {
        aug.pairs.fraction_pairs.clone()
    } else {
        Vec::new()
    };
    let mut sim = if keep(ab.disable_similar, w.similar) {
        aug.pairs.similar_pairs.clone()
    } else {
        Vec::new()
    };
    if w.norm == 0.0 {
        norm_idx.clear();
    }
    let normal_bases: Vec<DMatrix<f64>> = prep.frames.iter().map(|f| f.normal_basis()).collect();
    let steps = aug.points.len().div_ceil(cfg.batch_size).max(1);
    let x = |i: usize| aug.points[i].point.as_slice();

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        norm_idx.shuffle(&mut rng);
        align_idx.shuffle(&mut rng);
        refl.shuffle(&mut rng);
        frac.shuffle(&mut rng);
        sim.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for c in 0..steps {
            grads.clear();
            let mut step_loss = 0.0;

            let part = chunk(&norm_idx, c, steps);
            if !part.is_empty() {
                let s = w.norm / part.len() as f64;
                for &i in part {
                    model.forward_into(x(i), &mut tr);
                    let (l, g) = grad_norm(tr.output(), aug.points[i].norm_label);
                    step_loss += s * l;
                    model.backward(&mut tr, &g, &mut grads, s);
                }
            }

            let part = chunk(&align_idx, c, steps);
            if !part.is_empty() {
                let s = w.alignment / part.len() as f64;
                for &i in part {
                    model.forward_tangent_into(x(i), &mut tr);
                    let j = DMatrix::from_row_slice(prep.codim, d, tr.jacobian());
                    let (l, gj) = alignment_from_jacobian(&j, &normal_bases[i], cfg.lambda)?;
                    step_loss += s * l;
                    let gj_rows: Vec<f64> = gj.transpose().as_slice().to_vec();
                    model.backward_tangent(&mut tr, None, &gj_rows, &mut grads, s);
                }
            }

            let part = chunk(&refl, c, steps);
            if !part.is_empty() {
                let s = w.reflection / part.len() as f64;
                for &(a, b) in part {
                    model.forward_into(x(a), &mut tr);
                    model.forward_into(x(b), &mut tr2);
                    let (l, g) = grad_reflection(tr.output(), tr2.output());
                    step_loss += s * l;
                    model.backward(&mut tr, &g, &mut grads, s);
                    model.backward(&mut tr2, &g, &mut grads, s);
                }
            }

            let part = chunk(&frac, c, steps);
            if !part.is_empty() {
                frac_grads.clear();
                let mut valid = 0usize;
                let mut total = 0.0;
                for &(f, n, _) in part {
                    model.forward_into(x(f), &mut tr);
                    model.forward_into(x(n), &mut tr2);
                    if let Some((l, gf, gn)) = grad_fraction(tr.output(), tr2.output()) {
                        valid += 1;
                        total += l;
                        model.backward(&mut tr, &gf, &mut frac_grads, 1.0);
                        model.backward(&mut tr2, &gn, &mut frac_grads, 1.0);
                    }
                }
                if valid > 0 {
                    let s = w.fraction / valid as f64;
                    step_loss += s * total;
                    grads.add_scaled(&frac_grads, s);
                }
            }

            let part = chunk(&sim, c, steps);
            if !part.is_empty() {
                let s = w.similar / part.len() as f64;
                for &(a, b) in part {
                    model.forward_into(x(a), &mut tr);
                    model.forward_into(x(b), &mut tr2);
                    let (l, g) = grad_similar(tr.output(), tr2.output());
                    step_loss += s * l;
                    model.backward(&mut tr, &g, &mut grads, s);
                    model.backward(&mut tr2, &g, &mut grads, -s);
                }
            }

            if !step_loss.is_finite() {
                return Err(Error::Diverged(epoch));
            }
            adam.step(&mut model, &grads);
            epoch_loss += step_loss;
        }
        let mean = epoch_loss / steps as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        history.push(mean);
    }
    Ok((model, history))
}
