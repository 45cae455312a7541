//! On-manifold datasets with known ground-truth constraints, the fixed
//! serial chains behind the arm datasets, and the dataset text format.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ecomann::{project, ProjectionParams};
use crate::planner::{
    Circle3dConstraint, EndEffectorPlaneConstraint, ImplicitManifold, SphereConstraint,
    UprightOrientationConstraint,
};
use crate::{Configuration, Error, Result};

const MODULE: &str = "dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroundTruth {
    Sphere,
    Circle3D,
    PlaneArm3R,
    Orient6R,
    None,
}

impl GroundTruth {
    pub fn as_str(self) -> &'static str {
        match self {
            GroundTruth::Sphere => "sphere",
            GroundTruth::Circle3D => "circle3d",
            GroundTruth::PlaneArm3R => "plane",
            GroundTruth::Orient6R => "orient",
            GroundTruth::None => "none",
        }
    }

    /// The analytic constraint `h̄`, if one is known.
    pub fn constraint(self) -> Option<Box<dyn ImplicitManifold>> {
        match self {
            GroundTruth::Sphere => Some(Box::new(SphereConstraint::unit(3))),
            GroundTruth::Circle3D => Some(Box::new(Circle3dConstraint)),
            GroundTruth::PlaneArm3R => Some(Box::new(EndEffectorPlaneConstraint {
                chain: KinematicChain::plane_arm_3r(),
            })),
            GroundTruth::Orient6R => Some(Box::new(UprightOrientationConstraint {
                chain: KinematicChain::orient_6r(),
            })),
            GroundTruth::None => None,
        }
    }

    pub fn ambient_dim(self) -> Option<usize> {
        match self {
            GroundTruth::Sphere | GroundTruth::Circle3D | GroundTruth::PlaneArm3R => Some(3),
            GroundTruth::Orient6R => Some(6),
            GroundTruth::None => None,
        }
    }

    pub fn is_arm(self) -> bool {
        matches!(self, GroundTruth::PlaneArm3R | GroundTruth::Orient6R)
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroundTruth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sphere" => Ok(GroundTruth::Sphere),
            "circle3d" | "circle" => Ok(GroundTruth::Circle3D),
            "plane" | "planearm3r" => Ok(GroundTruth::PlaneArm3R),
            "orient" | "orient6r" => Ok(GroundTruth::Orient6R),
            "none" => Ok(GroundTruth::None),
            other => Err(Error::param(MODULE, format!("unknown ground truth '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnManifoldDataset {
    pub name: String,
    pub points: Vec<Configuration>,
    pub ambient_dim: usize,
    pub true_codim: usize,
    pub ground_truth: GroundTruth,
}

impl OnManifoldDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest `‖h̄(q)‖` over all rows.
    pub fn max_constraint_residual(&self) -> Option<f64> {
        let c = self.ground_truth.constraint()?;
        Some(self.points.iter().map(|q| c.residual(q)).fold(0.0, f64::max))
    }
}

/// Serial chain of revolute joints. Each joint rotates about its axis
/// (expressed in the parent frame) and is followed by a fixed link offset.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub joint_axes: Vec<Unit<Vector3<f64>>>,
    pub link_offsets: Vec<Vector3<f64>>,
}

/// World-frame joint axes and origins plus the end-effector pose.
#[derive(Debug, Clone)]
pub struct ChainFrames {
    pub joints: Vec<(Vector3<f64>, Vector3<f64>)>,
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl KinematicChain {
    pub fn new(axes: &[Vector3<f64>], offsets: &[Vector3<f64>]) -> Result<Self> {
        if axes.len() != offsets.len() || axes.is_empty() {
            return Err(Error::param(
                MODULE,
                "a chain needs one link offset per joint axis",
            ));
        }
        if axes.iter().any(|a| a.norm() < 1e-12) {
            return Err(Error::param(MODULE, "joint axes must be nonzero"));
        }
        Ok(KinematicChain {
            joint_axes: axes.iter().map(|a| Unit::new_normalize(*a)).collect(),
            link_offsets: offsets.to_vec(),
        })
    }

    /// Three revolute joints (z, y, y), links of 0.5 along x.
    pub fn plane_arm_3r() -> Self {
        let x = Vector3::new(0.5, 0.0, 0.0);
        Self::new(&[Vector3::z(), Vector3::y(), Vector3::y()], &[x, x, x]).unwrap()
    }

    /// Six revolute joints (z, y, y, z, y, x), links of 0.3 along x.
    pub fn orient_6r() -> Self {
        let x = Vector3::new(0.3, 0.0, 0.0);
        Self::new(
            &[
                Vector3::z(),
                Vector3::y(),
                Vector3::y(),
                Vector3::z(),
                Vector3::y(),
                Vector3::x(),
            ],
            &[x; 6],
        )
        .unwrap()
    }

    pub fn dof(&self) -> usize {
        self.joint_axes.len()
    }

    /// End-effector position and orientation.
    pub fn fk(&self, q: &[f64]) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        if q.len() != self.dof() {
            return Err(Error::param(
                MODULE,
                format!("configuration has {} values, chain has {} joints", q.len(), self.dof()),
            ));
        }
        Ok(self.fk_unchecked(q))
    }

    pub(crate) fn fk_unchecked(&self, q: &[f64]) -> (Vector3<f64>, Matrix3<f64>) {
        let f = self.joint_frames(q);
        (f.position, f.rotation)
    }

    pub fn joint_frames(&self, q: &[f64]) -> ChainFrames {
        let mut rotation = Matrix3::identity();
        let mut position = Vector3::zeros();
        let mut joints = Vec::with_capacity(self.dof());
        for ((axis, offset), &angle) in self.joint_axes.iter().zip(&self.link_offsets).zip(q) {
            joints.push((rotation * axis.into_inner(), position));
            rotation *= Rotation3::from_axis_angle(axis, angle).into_inner();
            position += rotation * offset;
        }
        ChainFrames {
            joints,
            position,
            rotation,
        }
    }
}

fn sampler(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform points on the unit sphere in ℝ³.
pub fn gen_sphere(n: usize, seed: u64) -> OnManifoldDataset {
    let mut rng = sampler(seed);
    let points = (0..n)
        .map(|_| loop {
            let g = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = g.norm();
            if norm > 1e-8 {
                break g / norm;
            }
        })
        .collect();
    OnManifoldDataset {
        name: "sphere".into(),
        points,
        ambient_dim: 3,
        true_codim: 1,
        ground_truth: GroundTruth::Sphere,
    }
}

/// Unit circle in the `z = 0` plane with uniform angle.
pub fn gen_circle3d(n: usize, seed: u64) -> OnManifoldDataset {
    let mut rng = sampler(seed);
    let points = (0..n)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            DVector::from_vec(vec![t.cos(), t.sin(), 0.0])
        })
        .collect();
    OnManifoldDataset {
        name: "circle3d".into(),
        points,
        ambient_dim: 3,
        true_codim: 2,
        ground_truth: GroundTruth::Circle3D,
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w.is_finite() {
        w
    } else {
        a
    }
}

/// Projection sampling: uniform joint samples pushed onto the constraint,
/// keeping only converged ones.
fn gen_by_projection(
    constraint: &dyn ImplicitManifold,
    n: usize,
    seed: u64,
) -> Result<Vec<Configuration>> {
    let mut rng = sampler(seed);
    let d = constraint.ambient_dim();
    let params = ProjectionParams {
        tol: 1e-9,
        max_iters: 100,
        ..ProjectionParams::default()
    };
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 10 * n + 100 {
            return Err(Error::Generation(format!(
                "only {} of {} projections converged (more than 90% failed)",
                out.len(),
                attempts - 1
            )));
        }
        let q0 = DVector::from_fn(d, |_, _| {
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)
        });
        let Ok(res) = project(constraint, &q0, &params) else {
            continue;
        };
        if !res.converged {
            continue;
        }
        let wrapped = res.q.map(wrap_angle);
        if constraint.residual(&wrapped) <= 1e-6 {
            out.push(wrapped);
        }
    }
    Ok(out)
}

/// 3R arm configurations whose end effector lies in the `z = 0` plane.
pub fn gen_plane_arm(n: usize, seed: u64) -> Result<OnManifoldDataset> {
    let c = EndEffectorPlaneConstraint {
        chain: KinematicChain::plane_arm_3r(),
    };
    Ok(OnManifoldDataset {
        name: "plane".into(),
        points: gen_by_projection(&c, n, seed)?,
        ambient_dim: 3,
        true_codim: 1,
        ground_truth: GroundTruth::PlaneArm3R,
    })
}

/// 6R arm configurations with an upright end-effector z-axis.
pub fn gen_orient(n: usize, seed: u64) -> Result<OnManifoldDataset> {
    let c = UprightOrientationConstraint {
        chain: KinematicChain::orient_6r(),
    };
    Ok(OnManifoldDataset {
        name: "orient".into(),
        points: gen_by_projection(&c, n, seed)?,
        ambient_dim: 6,
        true_codim: 2,
        ground_truth: GroundTruth::Orient6R,
    })
}

/// Generate by ground-truth id.
pub fn generate(gt: GroundTruth, n: usize, seed: u64) -> Result<OnManifoldDataset> {
    match gt {
        GroundTruth::Sphere => Ok(gen_sphere(n, seed)),
        GroundTruth::Circle3D => Ok(gen_circle3d(n, seed)),
        GroundTruth::PlaneArm3R => gen_plane_arm(n, seed),
        GroundTruth::Orient6R => gen_orient(n, seed),
        GroundTruth::None => Err(Error::param(MODULE, "no generator for ground truth 'none'")),
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise to every coordinate.
pub fn add_noise(ds: &OnManifoldDataset, sigma: f64, seed: u64) -> Result<OnManifoldDataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param(MODULE, format!("noise sigma {sigma} must be >= 0")));
    }
    let mut out = ds.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = sampler(seed);
    for q in &mut out.points {
        for v in q.iter_mut() {
            *v += sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out.name = format!("{}_noise{}", ds.name, sigma);
    Ok(out)
}

pub fn format_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn save_dataset(ds: &OnManifoldDataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        f,
        "# name={} d={} N={} l={} gt={}",
        ds.name,
        ds.ambient_dim,
        ds.points.len(),
        ds.true_codim,
        ds.ground_truth
    )?;
    for q in &ds.points {
        writeln!(f, "{}", format_row(q.as_slice()))?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<OnManifoldDataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, &path.display().to_string())
}

/// Parses a `key=value` header line such as the dataset or model header.
pub(crate) fn parse_header_fields<'a>(
    line: &'a str,
    source: &str,
) -> Result<Vec<(&'a str, &'a str)>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(source, 1, "header must start with '#'"))?;
    body.split_whitespace()
        .map(|tok| {
            tok.split_once('=')
                .ok_or_else(|| Error::parse(source, 1, format!("malformed header field '{tok}'")))
        })
        .collect()
}

pub fn parse_dataset(text: &str, source: &str) -> Result<OnManifoldDataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(source, 1, "empty file"))?;
    let fields = parse_header_fields(header, source)?;
    let get = |key: &str| {
        fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::parse(source, 1, format!("header is missing '{key}'")))
    };
    let int = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::parse(source, 1, format!("header field '{key}' is not an integer")))
    };
    let name = get("name")?.to_string();
    let d = int("d")?;
    let n = int("N")?;
    let l = int("l")?;
    let gt: GroundTruth = get("gt")?
        .parse()
        .map_err(|_| Error::parse(source, 1, "unknown ground truth in header"))?;
    if d == 0 {
        return Err(Error::parse(source, 1, "d must be positive"));
    }

    let mut points = Vec::with_capacity(n);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(source, lineno, format!("bad number '{tok}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != d {
            return Err(Error::parse(
                source,
                lineno,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(source, lineno, "non-finite value"));
        }
        points.push(DVector::from_vec(values));
    }
    if points.len() != n {
        return Err(Error::parse(
            source,
            1,
            format!("header declares N={n} rows, file has {}", points.len()),
        ));
    }
    Ok(OnManifoldDataset {
        name,
        points,
        ambient_dim: d,
        true_codim: l,
        ground_truth: gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_rows_are_unit_and_deterministic() {
        let a = gen_sphere(300, 4);
        assert!(a.points.iter().all(|q| (q.norm() - 1.0).abs() <= 1e-12));
        assert_eq!(a, gen_sphere(300, 4));
        assert_ne!(a, gen_sphere(300, 5));
    }

    #[test]
    fn sphere_mean_is_near_origin() {
        let ds = gen_sphere(5000, 1);
        let mean = ds.points.iter().fold(DVector::zeros(3), |acc, q| acc + q) / 5000.0;
        assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean}");
    }

    #[test]
    fn circle_rows_exact() {
        let ds = gen_circle3d(1000, 2);
        assert_eq!(ds.len(), 1000);
        assert_eq!((ds.ambient_dim, ds.true_codim), (3, 2));
        for q in &ds.points {
            assert_eq!(q[2], 0.0);
            assert!((q[0] * q[0] + q[1] * q[1] - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn circle_angles_are_uniform() {
        let ds = gen_circle3d(1000, 7);
        let mut bins = [0usize; 8];
        for q in &ds.points {
            let t = q[1].atan2(q[0]).rem_euclid(std::f64::consts::TAU);
            bins[((t / std::f64::consts::TAU * 8.0) as usize).min(7)] += 1;
        }
        // multinomial: mean 125, sd sqrt(1000 * 1/8 * 7/8) ≈ 10.46
        for b in bins {
            assert!((b as f64 - 125.0).abs() <= 3.0 * 10.46, "{bins:?}");
        }
    }

    #[test]
    fn fk_reference_poses() {
        let arm = KinematicChain::plane_arm_3r();
        let (p, _) = arm.fk(&[0.0, 0.0, 0.0]).unwrap();
        assert!((p - Vector3::new(1.5, 0.0, 0.0)).norm() < 1e-15);
        let (p, _) = arm.fk(&[std::f64::consts::PI, 0.0, 0.0]).unwrap();
        assert!((p - Vector3::new(-1.5, 0.0, 0.0)).norm() < 1e-12);
        let orient = KinematicChain::orient_6r();
        let (p, r) = orient.fk(&[0.0; 6]).unwrap();
        assert!((r - Matrix3::identity()).norm() < 1e-15);
        let sum: Vector3<f64> = orient.link_offsets.iter().sum();
        assert!((p - sum).norm() < 1e-15);
        assert!(arm.fk(&[0.0; 2]).is_err());
    }

    #[test]
    fn plane_arm_dataset_on_manifold() {
        let ds = gen_plane_arm(200, 3).unwrap();
        assert_eq!((ds.ambient_dim, ds.true_codim, ds.len()), (3, 1, 200));
        assert!(ds.max_constraint_residual().unwrap() <= 1e-6);
        assert_eq!(gen_plane_arm(50, 3).unwrap().points[..], ds.points[..50]);
    }

    #[test]
    fn base_yaw_configuration_is_kept_by_projection() {
        let c = EndEffectorPlaneConstraint {
            chain: KinematicChain::plane_arm_3r(),
        };
        let q0 = DVector::from_vec(vec![0.7, 0.0, 0.0]);
        let res = project(&c, &q0, &ProjectionParams::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.iters, 0);
        assert_eq!(res.q, q0);
    }

    #[test]
    fn orient_dataset_on_manifold() {
        let c = UprightOrientationConstraint {
            chain: KinematicChain::orient_6r(),
        };
        assert_eq!(c.evaluate(&DVector::zeros(6)).as_slice(), &[0.0, 0.0]);
        let ds = gen_orient(100, 8).unwrap();
        assert_eq!((ds.ambient_dim, ds.true_codim), (6, 2));
        assert!(ds.max_constraint_residual().unwrap() <= 1e-6);
    }

    #[test]
    fn noise_behaviour() {
        let ds = gen_sphere(2000, 1);
        assert_eq!(add_noise(&ds, 0.0, 3).unwrap().points, ds.points);
        let noisy = add_noise(&ds, 0.01, 3).unwrap();
        assert_eq!(noisy.points, add_noise(&ds, 0.01, 3).unwrap().points);
        assert_eq!(noisy.ground_truth, GroundTruth::Sphere);
        // radial component of isotropic noise: E|N(0, s²)| = s·sqrt(2/π) ≈ 0.008
        let mean_dev = noisy
            .points
            .iter()
            .map(|q| (q.norm() - 1.0).abs())
            .sum::<f64>()
            / 2000.0;
        assert!(mean_dev < 0.03 && mean_dev > 0.004, "{mean_dev}");
        assert!(add_noise(&ds, -1.0, 3).is_err());
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let ds = gen_sphere(50, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let text = "# name=x d=3 N=2 l=1 gt=sphere\n1,0,0\n0,1\n";
        match parse_dataset(text, "f") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "# name=x d=3 N=1 l=1 gt=sphere\n1,0,0,4\n";
        match parse_dataset(text, "f") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "# name=x d=3 N=1 l=1 gt=sphere\n1,NaN,0\n";
        assert!(matches!(parse_dataset(text, "f"), Err(Error::Parse { line: 2, .. })));
        let text = "name=x d=3 N=1 l=1 gt=sphere\n1,0,0\n";
        assert!(matches!(parse_dataset(text, "f"), Err(Error::Parse { line: 1, .. })));
    }
}
