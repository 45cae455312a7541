//! Run configuration: a flat `key = value` map checked against a registry.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::ecomann::{Ablation, LossWeights, ProjectionParams, TrainConfig};
use crate::eval::{EvalParams, SampleBox};
use crate::osa::OsaParams;
use crate::planner::RrtParams;
use crate::{Error, Result};

/// Environment variable consulted for every seed key not set explicitly.
pub const SEED_ENV: &str = "ECOMANN_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Float,
    UInt,
    Bool,
    /// A non-negative integer or `auto`.
    OptUInt,
    /// Comma-separated non-negative integers.
    UIntList,
}

impl ValueKind {
    fn name(self) -> &'static str {
        match self {
            ValueKind::Float => "float",
            ValueKind::UInt => "uint",
            ValueKind::Bool => "bool",
            ValueKind::OptUInt => "uint|auto",
            ValueKind::UIntList => "uint list",
        }
    }

    fn check(self, value: &str) -> std::result::Result<(), String> {
        let ok = match self {
            ValueKind::Float => value.parse::<f64>().is_ok_and(f64::is_finite),
            ValueKind::UInt => value.parse::<u64>().is_ok(),
            ValueKind::Bool => matches!(value, "true" | "false"),
            ValueKind::OptUInt => value == "auto" || value.parse::<u64>().is_ok(),
            ValueKind::UIntList => {
                !value.is_empty() && value.split(',').all(|v| v.trim().parse::<u64>().is_ok())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("expected {}, got {value:?}", self.name()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: ValueKind,
    pub default: &'static str,
    pub help: &'static str,
}

const fn spec(
    key: &'static str,
    kind: ValueKind,
    default: &'static str,
    help: &'static str,
) -> KeySpec {
    KeySpec {
        key,
        kind,
        default,
        help,
    }
}

use ValueKind::{Bool, Float, OptUInt, UInt, UIntList};

pub const REGISTRY: &[KeySpec] = &[
    spec("data.n", UInt, "1000", "points generated per dataset"),
    spec("data.seed", UInt, "0", "dataset generator seed"),
    spec("train.lr", Float, "0.001", "Adam learning rate"),
    spec("train.epochs", UInt, "100", "training epochs"),
    spec("train.batch_size", UInt, "128", "minibatch size"),
    spec("train.seed", UInt, "0", "model and shuffling seed"),
    spec("train.lambda", Float, "0.001", "damping of JJᵀ in the alignment loss"),
    spec("train.k", OptUInt, "auto", "local PCA neighborhood size"),
    spec("train.codim", OptUInt, "auto", "forced codimension"),
    spec("train.w_norm", Float, "1", "weight of the norm loss"),
    spec("train.w_refl", Float, "1", "weight of the reflection loss"),
    spec("train.w_frac", Float, "1", "weight of the fraction loss"),
    spec("train.w_sim", Float, "1", "weight of the similarity loss"),
    spec("train.w_align", Float, "1", "weight of the alignment loss"),
    spec("train.disable_augmentation", Bool, "false", "train on on-manifold points only"),
    spec("train.disable_osa", Bool, "false", "augment along unaligned normals"),
    spec("train.disable_reflection", Bool, "false", "drop the reflection loss"),
    spec("train.disable_fraction", Bool, "false", "drop the fraction loss"),
    spec("train.disable_similar", Bool, "false", "drop the similarity loss"),
    spec("train.disable_alignment", Bool, "false", "drop the alignment loss"),
    spec("augment.levels", UInt, "7", "augmentation levels per direction"),
    spec("augment.dirs_per_point", UInt, "2", "normal directions per point"),
    spec("augment.similar_k", UInt, "6", "neighbor count linking parents into similar pairs"),
    spec("osa.h", UInt, "1", "initial neighbor count of the alignment graph"),
    spec("osa.iters", UInt, "200", "rotation fitting iterations per edge"),
    spec("osa.lr", Float, "0.1", "rotation fitting step size"),
    spec("eval.n_samples", UInt, "1000", "samples projected for P"),
    spec("eval.threshold", Float, "0.1", "success threshold for P"),
    spec("eval.seed", UInt, "0", "sampling seed for P"),
    spec("eval.box_half_width", Float, "0", "sampling cube half width; 0 picks per ground truth"),
    spec("eval.repeats", UInt, "3", "repeats per ablation row or study entry"),
    spec("eval.levels", UIntList, "1,2,3,4,5,6,7", "levels of the level study"),
    spec("eval.noise_sigma", Float, "0.01", "noise of the noise study"),
    spec("eval.noise_seed", UInt, "0", "noise seed of the noise study"),
    spec("projection.tol", Float, "0.001", "projection residual tolerance"),
    spec("projection.max_iters", UInt, "200", "projection iteration cap"),
    spec("projection.step", Float, "1", "projection step scale"),
    spec("projection.damping", Float, "0.000001", "projection damping"),
    spec("planner.step", Float, "0.2", "RRT* extension length"),
    spec("planner.rewire_radius", Float, "0.5", "RRT* rewire radius"),
    spec("planner.max_nodes", UInt, "5000", "RRT* node budget per stage"),
    spec("planner.goal_bias", Float, "0.1", "probability of extending toward the next manifold"),
    spec("planner.on_manifold_tol", Float, "0.05", "waypoint residual tolerance"),
    spec("planner.reach_tol", Float, "0.02", "residual that counts as reaching the next manifold"),
    spec("planner.seed", UInt, "0", "planner seed"),
];

const SEED_KEYS: &[&str] = &["data.seed", "train.seed", "eval.seed", "planner.seed"];

fn lookup(key: &str) -> Option<&'static KeySpec> {
    REGISTRY.iter().find(|s| s.key == key)
}

/// One line per registry key, for `--help`.
pub fn registry_help() -> String {
    let mut s = String::from("Config keys (key = value):\n");
    for k in REGISTRY {
        let _ = writeln!(s, "  {:<30} {:<10} [{}] {}", k.key, k.kind.name(), k.default, k.help);
    }
    let _ = writeln!(s, "Seed keys fall back to ${SEED_ENV} when unset.");
    s
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new() -> Self {
        RunConfig::default()
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = RunConfig::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                source_name: source.to_string(),
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                source_name: source.to_string(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = lookup(key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        spec.kind
            .check(value)
            .map_err(|m| Error::Config(format!("{key}: {m}")))?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn raw(&self, key: &str) -> Result<String> {
        let spec = lookup(key).ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
        if let Some(v) = self.values.get(key) {
            return Ok(v.clone());
        }
        if SEED_KEYS.contains(&key) {
            if let Ok(v) = std::env::var(SEED_ENV) {
                spec.kind
                    .check(v.trim())
                    .map_err(|m| Error::Config(format!("{SEED_ENV}: {m}")))?;
                return Ok(v.trim().to_string());
            }
        }
        Ok(spec.default.to_string())
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parsed(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parsed(key)
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        let v = self.raw(key)?;
        if v == "auto" {
            Ok(None)
        } else {
            self.parsed(key).map(Some)
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        let v = self.raw(key)?;
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
            })
            .collect()
    }

    /// Explicitly set keys, one `key = value` line each.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            weights: LossWeights {
                norm: self.f64("train.w_norm")?,
                reflection: self.f64("train.w_refl")?,
                fraction: self.f64("train.w_frac")?,
                similar: self.f64("train.w_sim")?,
                alignment: self.f64("train.w_align")?,
            },
            lr: self.f64("train.lr")?,
            epochs: self.usize("train.epochs")?,
            batch_size: self.usize("train.batch_size")?,
            seed: self.u64("train.seed")?,
            lambda: self.f64("train.lambda")?,
            ablation: Ablation {
                disable_augmentation: self.bool("train.disable_augmentation")?,
                disable_osa: self.bool("train.disable_osa")?,
                disable_reflection: self.bool("train.disable_reflection")?,
                disable_fraction: self.bool("train.disable_fraction")?,
                disable_similar: self.bool("train.disable_similar")?,
                disable_alignment: self.bool("train.disable_alignment")?,
            },
            levels: self.usize("augment.levels")?,
            dirs_per_point: self.usize("augment.dirs_per_point")?,
            similar_k: self.usize("augment.similar_k")?,
            k: self.opt_usize("train.k")?,
            codim: self.opt_usize("train.codim")?,
            osa: self.osa_params()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn osa_params(&self) -> Result<OsaParams> {
        Ok(OsaParams {
            h: self.usize("osa.h")?,
            iters: self.usize("osa.iters")?,
            lr: self.f64("osa.lr")?,
        })
    }

    pub fn projection_params(&self) -> Result<ProjectionParams> {
        Ok(ProjectionParams {
            tol: self.f64("projection.tol")?,
            max_iters: self.usize("projection.max_iters")?,
            step: self.f64("projection.step")?,
            damping: self.f64("projection.damping")?,
        })
    }

    /// `d` is needed only when an explicit sampling box is configured.
    pub fn eval_params(&self, d: usize) -> Result<EvalParams> {
        let hw = self.f64("eval.box_half_width")?;
        Ok(EvalParams {
            n_samples: self.usize("eval.n_samples")?,
            threshold: self.f64("eval.threshold")?,
            seed: self.u64("eval.seed")?,
            projection: self.projection_params()?,
            sample_box: (hw > 0.0).then(|| SampleBox::cube(d, hw)),
        })
    }

    pub fn rrt_params(&self) -> Result<RrtParams> {
        Ok(RrtParams {
            step: self.f64("planner.step")?,
            rewire_radius: self.f64("planner.rewire_radius")?,
            max_nodes: self.usize("planner.max_nodes")?,
            goal_bias: self.f64("planner.goal_bias")?,
        })
    }
}
