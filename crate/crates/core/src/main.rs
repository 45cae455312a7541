use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use ecomann::config::{registry_help, RunConfig};
use ecomann::dataset::{add_noise, generate, load_dataset, save_dataset, GroundTruth, OnManifoldDataset};
use ecomann::ecomann::{load_model, common_frames, save_model, train};
use ecomann::eval::{
    ablation_csv, evaluate_model, level_study_csv, noise_study_csv, run_ablation,
    run_level_study, run_noise_study, EvalReport,
};
use ecomann::lin_geom::default_k;
use ecomann::osa::osa_align;
use ecomann::planner::{
    hourglass_problem, sequential_plan, validate_path, ImplicitManifold, LearnedManifold,
};
use ecomann::svg::{plot_slice, Slice};
use ecomann::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "ecomann", version, about = "Learn constraint manifolds and plan on them")]
#[command(after_help = registry_help())]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an on-manifold dataset.
    GenData {
        /// sphere, circle3d, plane or orient.
        kind: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Standard deviation of added Gaussian noise.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch loss CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Compute P, μ_train and μ_test of a model against a ground truth.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gt: String,
        /// Training data for μ_train; the metric is skipped without it.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Ablation table on a dataset.
    Ablate(StudyArgs),
    /// P as a function of the augmentation level count.
    LevelStudy(StudyArgs),
    /// Train on noisy data and evaluate against the clean ground truth.
    NoiseStudy(StudyArgs),
    /// Run subspace alignment and report per-edge losses.
    OsaCheck {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        out: OutArg,
    },
    /// Plan a scenario; `hourglass` is built in.
    Plan {
        scenario: String,
        /// Learned sphere for the middle stage; the analytic sphere otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// SVG contour plot of `h` on a 2D slice.
    PlotSlice {
        #[arg(long, conflicts_with = "gt", required_unless_present = "gt")]
        model: Option<PathBuf>,
        #[arg(long)]
        gt: Option<String>,
        /// Dataset drawn as a scatter on top.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1])]
        axes: Vec<usize>,
        #[arg(long, default_value_t = 1.5)]
        half_width: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2])]
        levels: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Debug)]
struct OutArg {
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn write(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => fs::write(p, text).map_err(Error::from),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, v: Option<T>) -> Result<()> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

fn ground_truth_of(ds: &OnManifoldDataset) -> Result<GroundTruth> {
    match ds.ground_truth {
        GroundTruth::None => Err(Error::Eval(format!(
            "dataset {} has no ground truth to evaluate against",
            ds.name
        ))),
        gt => Ok(gt),
    }
}

fn report_csv(name: &str, r: &EvalReport) -> String {
    format!("dataset,{}\n{name},{}\n", EvalReport::CSV_HEADER, r.csv_row())
}

fn load_manifold(model: Option<&Path>, gt: Option<&str>) -> Result<Box<dyn ImplicitManifold>> {
    if let Some(p) = model {
        return Ok(Box::new(LearnedManifold::new(load_model(p)?)));
    }
    let gt: GroundTruth = gt.unwrap_or("none").parse()?;
    gt.constraint()
        .ok_or_else(|| Error::Config("plot needs --model or an analytic --gt".into()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = run_config(&cli)?;
    match cli.command {
        Command::GenData {
            kind,
            n,
            seed,
            noise,
            out,
        } => {
            set_opt(&mut cfg, "data.n", n)?;
            set_opt(&mut cfg, "data.seed", seed)?;
            let gt: GroundTruth = kind.parse()?;
            let seed = cfg.u64("data.seed")?;
            let mut ds = generate(gt, cfg.usize("data.n")?, seed)?;
            if noise > 0.0 {
                ds = add_noise(&ds, noise, seed.wrapping_add(1))?;
            }
            save_dataset(&ds, &out)?;
            eprintln!("wrote {} points to {}", ds.len(), out.display());
        }
        Command::Train {
            data,
            out,
            seed,
            epochs,
            history,
        } => {
            set_opt(&mut cfg, "train.seed", seed)?;
            set_opt(&mut cfg, "train.epochs", epochs)?;
            let ds = load_dataset(&data)?;
            let tc = cfg.train_config()?;
            let res = train(&ds, &tc)?;
            save_model(&res.model, &out)?;
            if let Some(h) = history {
                let mut s = String::from("epoch,loss\n");
                for (i, l) in res.history.iter().enumerate() {
                    s.push_str(&format!("{},{l:?}\n", i + 1));
                }
                fs::write(h, s)?;
            }
            eprintln!(
                "trained on {} points (codim {}, {} augmented); final loss {:?}",
                ds.len(),
                res.prepared.codim,
                res.prepared.augmented.points.len(),
                res.history.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Eval {
            model,
            gt,
            data,
            out,
        } => {
            let gt: GroundTruth = gt.parse()?;
            let model = load_model(&model)?;
            let points = match data {
                Some(p) => load_dataset(&p)?.points,
                None => Vec::new(),
            };
            let ep = cfg.eval_params(model.input_dim())?;
            let r = evaluate_model(&model, &points, gt, &ep)?;
            out.write(&report_csv(gt.as_str(), &r))?;
        }
        Command::Ablate(a) => {
            let ds = load_dataset(&a.data)?;
            ground_truth_of(&ds)?;
            let rows = run_ablation(
                &ds,
                &cfg.train_config()?,
                cfg.usize("eval.repeats")?,
                &cfg.eval_params(ds.ambient_dim)?,
            )?;
            a.out.write(&ablation_csv(&rows))?;
        }
        Command::LevelStudy(a) => {
            let ds = load_dataset(&a.data)?;
            ground_truth_of(&ds)?;
            let rows = run_level_study(
                &ds,
                &cfg.usize_list("eval.levels")?,
                &cfg.train_config()?,
                &cfg.eval_params(ds.ambient_dim)?,
            )?;
            a.out.write(&level_study_csv(&ds.name, &rows))?;
        }
        Command::NoiseStudy(a) => {
            let ds = load_dataset(&a.data)?;
            ground_truth_of(&ds)?;
            let sigma = cfg.f64("eval.noise_sigma")?;
            let rows = run_noise_study(
                &ds,
                sigma,
                cfg.u64("eval.noise_seed")?,
                cfg.usize("eval.repeats")?,
                &cfg.train_config()?,
                &cfg.eval_params(ds.ambient_dim)?,
            )?;
            a.out.write(&noise_study_csv(&ds.name, sigma, &rows))?;
        }
        Command::OsaCheck { data, out } => {
            let ds = load_dataset(&data)?;
            let tc = cfg.train_config()?;
            let k = tc.k.unwrap_or_else(|| default_k(ds.ambient_dim, ds.len()));
            let (frames, codim) = common_frames(&ds.points, k, tc.codim)?;
            let res = osa_align(&ds.points, &frames, &tc.osa)?;
            let losses = res.edge_losses();
            let good = losses.iter().filter(|&&l| l <= 0.1).count();
            eprintln!(
                "codim {codim}, H {}: {good}/{} edges with alignment loss <= 0.1",
                res.h_used,
                losses.len()
            );
            out.write(&res.edges_csv())?;
        }
        Command::Plan {
            scenario,
            model,
            seed,
            out,
        } => {
            if scenario != "hourglass" {
                return Err(Error::Config(format!(
                    "unknown scenario {scenario:?}; available: hourglass"
                )));
            }
            set_opt(&mut cfg, "planner.seed", seed)?;
            let sphere: Option<Arc<dyn ImplicitManifold>> = match model {
                Some(p) => Some(Arc::new(LearnedManifold::new(load_model(&p)?))),
                None => None,
            };
            let mut problem = hourglass_problem(sphere, cfg.u64("planner.seed")?);
            problem.rrt = cfg.rrt_params()?;
            problem.on_manifold_tol = cfg.f64("planner.on_manifold_tol")?;
            problem.reach_tol = cfg.f64("planner.reach_tol")?;
            let path = sequential_plan(&problem)?;
            let report = validate_path(&path, &problem)?;
            if !report.ok() {
                return Err(Error::Planning(format!("path failed validation: {report:?}")));
            }
            eprintln!(
                "cost {:.4}, {} waypoints, {} nodes, max residual per stage {:?}",
                path.total_cost,
                path.num_waypoints(),
                path.nodes_explored,
                report.max_residual_per_stage
            );
            out.write(&path.to_csv())?;
        }
        Command::PlotSlice {
            model,
            gt,
            data,
            axes,
            half_width,
            levels,
            out,
        } => {
            let m = load_manifold(model.as_deref(), gt.as_deref())?;
            if axes.len() != 2 {
                return Err(Error::Config("--axes expects two indices".into()));
            }
            let slice = Slice::new(m.ambient_dim(), (axes[0], axes[1]), half_width)?;
            let points = match data {
                Some(p) => load_dataset(&p)?.points,
                None => Vec::new(),
            };
            fs::write(&out, plot_slice(m.as_ref(), &slice, &levels, &points)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
