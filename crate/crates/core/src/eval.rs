//! Accuracy and success-rate metrics, the ablation table and the
//! augmentation-level and noise studies.

use std::fmt::Write as _;
use std::sync::Mutex;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{add_noise, GroundTruth, OnManifoldDataset};
use crate::ecomann::{project, train, Ablation, MlpModel, ProjectionParams, TrainConfig};
use crate::planner::{ImplicitManifold, LearnedManifold};
use crate::{Configuration, Error, Result};

/// Distance-like residual of `q` to the ground-truth manifold: `|‖q‖ - 1|`
/// for the sphere, the exact distance to the circle, `|p_z|` for the planar
/// arm task and `‖(R_xz, R_yz)‖` for the upright-orientation task.
pub fn gt_residual(gt: GroundTruth, q: &Configuration) -> Result<f64> {
    let c = gt
        .constraint()
        .ok_or_else(|| Error::Eval("ground truth 'none' has no residual".into()))?;
    if q.len() != c.ambient_dim() {
        return Err(Error::Eval(format!(
            "point has dimension {}, ground truth '{gt}' expects {}",
            q.len(),
            c.ambient_dim()
        )));
    }
    Ok(match gt {
        GroundTruth::Sphere => (q.norm() - 1.0).abs(),
        GroundTruth::Circle3D => {
            let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
            ((r - 1.0).powi(2) + q[2] * q[2]).sqrt()
        }
        _ => c.residual(q),
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn metric_mu(points: &[Configuration], gt: GroundTruth) -> Result<(f64, f64)> {
    let r: Vec<f64> = points
        .iter()
        .map(|q| gt_residual(gt, q))
        .collect::<Result<_>>()?;
    Ok(mean_std(&r))
}

/// Axis-aligned sampling region.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn cube(d: usize, half_width: f64) -> Self {
        SampleBox {
            lo: vec![-half_width; d],
            hi: vec![half_width; d],
        }
    }

    /// `[-1.5, 1.5]ᵈ` for geometric data, `[-π, π]ᵈ` for joint spaces.
    pub fn for_ground_truth(gt: GroundTruth, d: usize) -> Self {
        if gt.is_arm() {
            Self::cube(d, std::f64::consts::PI)
        } else {
            Self::cube(d, 1.5)
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Configuration {
        DVector::from_iterator(
            self.dim(),
            self.lo
                .iter()
                .zip(&self.hi)
                .map(|(&a, &b)| if a < b { rng.random_range(a..b) } else { a }),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub n_samples: usize,
    pub threshold: f64,
    pub seed: u64,
    pub projection: ProjectionParams,
    /// `None` picks [`SampleBox::for_ground_truth`].
    pub sample_box: Option<SampleBox>,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            n_samples: 1000,
            threshold: 0.1,
            seed: 0,
            projection: ProjectionParams::default(),
            sample_box: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessRate {
    pub percent: f64,
    pub residuals: Vec<f64>,
    pub projected: Vec<Configuration>,
}

/// Projects `n` uniform samples with `manifold` and reports the percentage
/// whose ground-truth residual is at most `threshold`. A projection that
/// errors counts as a failure.
pub fn metric_p(
    manifold: &dyn ImplicitManifold,
    gt: GroundTruth,
    params: &EvalParams,
) -> Result<SuccessRate> {
    let d = manifold.ambient_dim();
    let bx = params
        .sample_box
        .clone()
        .unwrap_or_else(|| SampleBox::for_ground_truth(gt, d));
    if bx.dim() != d {
        return Err(Error::Eval("sample box dimension mismatch".into()));
    }
    if params.n_samples == 0 {
        return Err(Error::Eval("need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut residuals = Vec::with_capacity(params.n_samples);
    let mut projected = Vec::with_capacity(params.n_samples);
    let mut ok = 0usize;
    for _ in 0..params.n_samples {
        let q0 = bx.sample(&mut rng);
        let (q, r) = match project(manifold, &q0, &params.projection) {
            Ok(res) => {
                let r = gt_residual(gt, &res.q)?;
                (res.q, r)
            }
            Err(Error::Numerical(_)) => (q0, f64::INFINITY),
            Err(e) => return Err(e),
        };
        if r <= params.threshold {
            ok += 1;
        }
        residuals.push(r);
        projected.push(q);
    }
    Ok(SuccessRate {
        percent: 100.0 * ok as f64 / params.n_samples as f64,
        residuals,
        projected,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Residual of the training points after projection with the model.
    pub mu_train: (f64, f64),
    /// Residual of the projected random samples.
    pub mu_test: (f64, f64),
    pub p: f64,
    pub n_samples: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "P,mu_train_mean,mu_train_std,mu_test_mean,mu_test_std,n_samples,threshold,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?},{},{:?},{}",
            self.p,
            self.mu_train.0,
            self.mu_train.1,
            self.mu_test.0,
            self.mu_test.1,
            self.n_samples,
            self.threshold,
            self.seed
        )
    }
}

fn finite_mean_std(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    mean_std(&finite)
}

/// Full report for a trained model against the ground truth of `train_set`.
pub fn evaluate_model(
    model: &MlpModel,
    train_points: &[Configuration],
    gt: GroundTruth,
    params: &EvalParams,
) -> Result<EvalReport> {
    let m = LearnedManifold::new(model.clone());
    evaluate_manifold(&m, train_points, gt, params)
}

pub fn evaluate_manifold(
    manifold: &dyn ImplicitManifold,
    train_points: &[Configuration],
    gt: GroundTruth,
    params: &EvalParams,
) -> Result<EvalReport> {
    let mut train_res = Vec::with_capacity(train_points.len());
    for q in train_points {
        match project(manifold, q, &params.projection) {
            Ok(res) => train_res.push(gt_residual(gt, &res.q)?),
            Err(Error::Numerical(_)) => train_res.push(f64::INFINITY),
            Err(e) => return Err(e),
        }
    }
    let sr = metric_p(manifold, gt, params)?;
    Ok(EvalReport {
        mu_train: finite_mean_std(&train_res),
        mu_test: finite_mean_std(&sr.residuals),
        p: sr.percent,
        n_samples: params.n_samples,
        threshold: params.threshold,
        seed: params.seed,
    })
}

/// The seven rows of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationRow {
    NoAblation,
    NoAugmentation,
    NoOsa,
    NoSiamese,
    NoReflection,
    NoFraction,
    NoSimilar,
}

impl AblationRow {
    pub const ALL: [AblationRow; 7] = [
        AblationRow::NoAblation,
        AblationRow::NoAugmentation,
        AblationRow::NoOsa,
        AblationRow::NoSiamese,
        AblationRow::NoReflection,
        AblationRow::NoFraction,
        AblationRow::NoSimilar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::NoAblation => "no_ablation",
            AblationRow::NoAugmentation => "wo_data_augmentation",
            AblationRow::NoOsa => "wo_osa",
            AblationRow::NoSiamese => "wo_siamese_losses",
            AblationRow::NoReflection => "wo_reflection",
            AblationRow::NoFraction => "wo_fraction",
            AblationRow::NoSimilar => "wo_similar",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        let a = &mut cfg.ablation;
        match self {
            AblationRow::NoAblation => {}
            AblationRow::NoAugmentation => a.disable_augmentation = true,
            AblationRow::NoOsa => a.disable_osa = true,
            AblationRow::NoSiamese => {
                let keep = *a;
                *a = Ablation {
                    disable_augmentation: keep.disable_augmentation,
                    disable_osa: keep.disable_osa,
                    disable_alignment: keep.disable_alignment,
                    ..Ablation::without_siamese()
                };
            }
            AblationRow::NoReflection => a.disable_reflection = true,
            AblationRow::NoFraction => a.disable_fraction = true,
            AblationRow::NoSimilar => a.disable_similar = true,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub dataset: String,
    pub row: AblationRow,
    pub reports: Vec<EvalReport>,
    pub seed: u64,
}

impl AblationResult {
    pub fn p(&self) -> (f64, f64) {
        mean_std(&self.reports.iter().map(|r| r.p).collect::<Vec<_>>())
    }

    pub fn mu_train(&self) -> (f64, f64) {
        mean_std(&self.reports.iter().map(|r| r.mu_train.0).collect::<Vec<_>>())
    }

    pub fn mu_test(&self) -> (f64, f64) {
        mean_std(&self.reports.iter().map(|r| r.mu_test.0).collect::<Vec<_>>())
    }
}

pub const ABLATION_CSV_HEADER: &str =
    "dataset,row,P_mean,P_std,mu_train_mean,mu_train_std,mu_test_mean,mu_test_std,seed";

pub fn ablation_csv(rows: &[AblationResult]) -> String {
    let mut s = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        let (pm, ps) = r.p();
        let (tm, ts) = r.mu_train();
        let (em, es) = r.mu_test();
        let _ = writeln!(
            s,
            "{},{},{pm:?},{ps:?},{tm:?},{ts:?},{em:?},{es:?},{}",
            r.dataset,
            r.row.name(),
            r.seed
        );
    }
    s
}

/// Runs `jobs` on up to `available_parallelism` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.unwrap())
        .collect()
}

/// Train-and-evaluate for one configuration; repeat `r` trains with seed
/// `config.seed + r` and evaluates with `eval.seed + r`.
pub fn train_and_evaluate(
    ds: &OnManifoldDataset,
    config: &TrainConfig,
    eval: &EvalParams,
    repeat: usize,
) -> Result<EvalReport> {
    let mut cfg = config.clone();
    cfg.seed = config.seed.wrapping_add(repeat as u64);
    let mut ep = eval.clone();
    ep.seed = eval.seed.wrapping_add(repeat as u64);
    let out = train(ds, &cfg)?;
    evaluate_model(&out.model, &ds.points, ds.ground_truth, &ep)
}

pub fn run_rows(
    ds: &OnManifoldDataset,
    base: &TrainConfig,
    rows: &[AblationRow],
    repeats: usize,
    eval: &EvalParams,
) -> Result<Vec<AblationResult>> {
    if repeats == 0 {
        return Err(Error::Eval("repeats must be at least 1".into()));
    }
    let jobs: Vec<(AblationRow, usize)> = rows
        .iter()
        .flat_map(|&r| (0..repeats).map(move |k| (r, k)))
        .collect();
    let reports = par_map(&jobs, |&(row, k)| train_and_evaluate(ds, &row.apply(base), eval, k));
    let mut it = reports.into_iter();
    rows.iter()
        .map(|&row| {
            let reports = (&mut it).take(repeats).collect::<Result<Vec<_>>>()?;
            Ok(AblationResult {
                dataset: ds.name.clone(),
                row,
                reports,
                seed: base.seed,
            })
        })
        .collect()
}

/// Trains one model per ablation row and repeat.
pub fn run_ablation(
    ds: &OnManifoldDataset,
    base: &TrainConfig,
    repeats: usize,
    eval: &EvalParams,
) -> Result<Vec<AblationResult>> {
    run_rows(ds, base, &AblationRow::ALL, repeats, eval)
}

/// One training per entry of `levels`, in order (duplicates are kept).
pub fn run_level_study(
    ds: &OnManifoldDataset,
    levels: &[usize],
    config: &TrainConfig,
    eval: &EvalParams,
) -> Result<Vec<(usize, EvalReport)>> {
    let reports = par_map(levels, |&lv| {
        let cfg = TrainConfig {
            levels: lv,
            ..config.clone()
        };
        train_and_evaluate(ds, &cfg, eval, 0)
    });
    levels
        .iter()
        .zip(reports)
        .map(|(&lv, r)| r.map(|r| (lv, r)))
        .collect()
}

pub fn level_study_csv(dataset: &str, rows: &[(usize, EvalReport)]) -> String {
    let mut s = format!("dataset,levels,{}\n", EvalReport::CSV_HEADER);
    for (lv, r) in rows {
        let _ = writeln!(s, "{dataset},{lv},{}", r.csv_row());
    }
    s
}

/// Trains on `ds` corrupted by `N(0, sigma²)` noise; the noisy copy for
/// repeat `r` uses seed `noise_seed + r`. Metrics use the clean ground truth.
pub fn run_noise_study(
    ds: &OnManifoldDataset,
    sigma: f64,
    noise_seed: u64,
    repeats: usize,
    config: &TrainConfig,
    eval: &EvalParams,
) -> Result<Vec<EvalReport>> {
    if repeats == 0 {
        return Err(Error::Eval("repeats must be at least 1".into()));
    }
    let idx: Vec<usize> = (0..repeats).collect();
    par_map(&idx, |&r| {
        let noisy = add_noise(ds, sigma, noise_seed.wrapping_add(r as u64))?;
        train_and_evaluate(&noisy, config, eval, r)
    })
    .into_iter()
    .collect()
}

pub fn noise_study_csv(dataset: &str, sigma: f64, rows: &[EvalReport]) -> String {
    let mut s = format!("dataset,sigma,repeat,{}\n", EvalReport::CSV_HEADER);
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(s, "{dataset},{sigma:?},{i},{}", r.csv_row());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_circle3d, gen_plane_arm, gen_sphere};
    use crate::planner::SphereConstraint;

    fn v(x: &[f64]) -> Configuration {
        DVector::from_column_slice(x)
    }

    #[test]
    fn mu_of_exact_points_is_zero() {
        let (m, s) = metric_mu(&[v(&[1.0, 0.0, 0.0]), v(&[0.0, 0.0, -1.0])], GroundTruth::Sphere)
            .unwrap();
        assert_eq!((m, s), (0.0, 0.0));
        assert!(metric_mu(&[v(&[1.0, 0.0, 0.0])], GroundTruth::None).is_err());
    }

    #[test]
    fn mu_uses_euclidean_distance() {
        let (m, s) = metric_mu(&[v(&[1.1, 0.0, 0.0]), v(&[0.0, 0.9, 0.0])], GroundTruth::Sphere)
            .unwrap();
        assert!((m - 0.1).abs() < 1e-12);
        assert!(s.abs() < 1e-12);
        let r = gt_residual(GroundTruth::Circle3D, &v(&[0.0, 2.0, 1.0])).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn generators_have_negligible_residual() {
        for ds in [
            gen_sphere(200, 1),
            gen_circle3d(200, 1),
            gen_plane_arm(100, 1).unwrap(),
        ] {
            assert!(metric_mu(&ds.points, ds.ground_truth).unwrap().0 <= 1e-6);
        }
    }

    #[test]
    fn analytic_sphere_projects_every_sample() {
        let p = EvalParams {
            n_samples: 300,
            ..Default::default()
        };
        let sr = metric_p(&SphereConstraint::unit(3), GroundTruth::Sphere, &p).unwrap();
        assert_eq!(sr.percent, 100.0);
    }

    #[test]
    fn infinite_threshold_always_succeeds() {
        let model = MlpModel::ecomann(3, 1, 2).unwrap();
        let p = EvalParams {
            n_samples: 50,
            threshold: f64::INFINITY,
            ..Default::default()
        };
        let sr = metric_p(&LearnedManifold::new(model), GroundTruth::Sphere, &p).unwrap();
        assert_eq!(sr.percent, 100.0);
    }

    #[test]
    fn ablation_rows_set_expected_flags() {
        let base = TrainConfig::default();
        assert_eq!(AblationRow::NoAblation.apply(&base), base);
        assert!(AblationRow::NoAugmentation.apply(&base).ablation.disable_augmentation);
        assert!(AblationRow::NoOsa.apply(&base).ablation.disable_osa);
        let s = AblationRow::NoSiamese.apply(&base).ablation;
        assert!(s.disable_reflection && s.disable_fraction && s.disable_similar);
        assert!(!s.disable_alignment && !s.disable_osa);
        assert!(AblationRow::NoSimilar.apply(&base).ablation.disable_similar);
    }

    #[test]
    fn single_repeat_has_zero_spread_and_csv_header() {
        let ds = gen_sphere(80, 2);
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let eval = EvalParams {
            n_samples: 20,
            ..Default::default()
        };
        let rows = run_rows(&ds, &cfg, &[AblationRow::NoAblation], 1, &eval).unwrap();
        assert_eq!(rows[0].p().1, 0.0);
        let csv = ablation_csv(&rows);
        assert!(csv.starts_with(ABLATION_CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
        // identical to a plain train + evaluate with the same seeds
        let plain = train_and_evaluate(&ds, &cfg, &eval, 0).unwrap();
        assert_eq!(rows[0].reports[0], plain);
    }

    #[test]
    fn level_study_keeps_duplicates() {
        let ds = gen_sphere(60, 4);
        let cfg = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        let eval = EvalParams {
            n_samples: 10,
            ..Default::default()
        };
        let rows = run_level_study(&ds, &[3], &cfg, &eval).unwrap();
        assert_eq!(rows.len(), 1);
        let rows = run_level_study(&ds, &[2, 2], &cfg, &eval).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].1, rows[1].1);
    }
}
