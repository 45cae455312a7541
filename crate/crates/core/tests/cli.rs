use std::path::Path;
use std::process::{Command, Output};

use ecomann::config::REGISTRY;

fn ecomann(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecomann"))
        .args(args)
        .env_remove("ECOMANN_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = ecomann(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "s.csv");
    ok(&["gen-data", "sphere", "--n", "500", "--seed", "1", "--out", &data]);
    let text = std::fs::read_to_string(&data).unwrap();
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 500);

    let m1 = p(dir.path(), "m1.txt");
    let m2 = p(dir.path(), "m2.txt");
    let hist = p(dir.path(), "h.csv");
    for m in [&m1, &m2] {
        ok(&[
            "train", "--data", &data, "--out", m, "--seed", "1", "--epochs", "2", "--history", &hist,
        ]);
    }
    let a = std::fs::read(&m1).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(&m2).unwrap());
    assert_eq!(std::fs::read_to_string(&hist).unwrap().lines().count(), 3);

    let out = ok(&[
        "eval", "--model", &m1, "--gt", "sphere", "--data", &data, "--set", "eval.n_samples=50",
    ]);
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), row.len());
    for col in ["P", "mu_train_mean", "mu_test_mean"] {
        let i = header.iter().position(|h| *h == col).unwrap();
        assert!(row[i].parse::<f64>().is_ok(), "{col} = {}", row[i]);
    }

    let svg = p(dir.path(), "slice.svg");
    ok(&["plot-slice", "--model", &m1, "--data", &data, "--out", &svg]);
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn osa_check_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let data = p(dir.path(), "s.csv");
    ok(&["gen-data", "sphere", "--n", "200", "--seed", "2", "--out", &data]);
    let out = ok(&["osa-check", "--data", &data, "--set", "train.codim=1"]);
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("edge_a,edge_c,chosen_orientation,loss"));
    assert_eq!(csv.lines().count(), 200);

    let path = p(dir.path(), "path.csv");
    ok(&["plan", "hourglass", "--seed", "1", "--out", &path]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("stage,index,q1,q2,q3"));
    assert!(text.lines().count() > 3);
    let again = p(dir.path(), "path2.csv");
    ok(&["plan", "hourglass", "--seed", "1", "--out", &again]);
    assert_eq!(text, std::fs::read_to_string(&again).unwrap());
}

#[test]
fn help_lists_every_registry_key() {
    let out = ok(&["--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for k in REGISTRY {
        assert!(help.contains(k.key), "missing {}", k.key);
    }
}

#[test]
fn exit_codes() {
    assert_eq!(ecomann(&[]).status.code(), Some(2));
    assert_eq!(ecomann(&["gen-data"]).status.code(), Some(2));
    assert_eq!(ecomann(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "x.csv");
    let r = ecomann(&["gen-data", "sphere", "--out", &out, "--set", "train.nope=1"]);
    assert_eq!(r.status.code(), Some(2));
    let r = ecomann(&["gen-data", "sphere", "--out", &out, "--set", "data.n=many"]);
    assert_eq!(r.status.code(), Some(2));
    let r = ecomann(&["plan", "maze"]);
    assert_eq!(r.status.code(), Some(2));

    let missing = p(dir.path(), "missing.csv");
    let r = ecomann(&["train", "--data", &missing, "--out", &out]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("io:"));
    let r = ecomann(&["gen-data", "torus", "--out", &out]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("dataset:"));
}

#[test]
fn config_file_and_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = p(dir.path(), "run.cfg");
    std::fs::write(&cfg, "# small run\ndata.n = 50\n").unwrap();
    let a = p(dir.path(), "a.csv");
    let b = p(dir.path(), "b.csv");
    let c = p(dir.path(), "c.csv");
    ok(&["--config", &cfg, "gen-data", "circle3d", "--out", &a]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 51);

    let with_env = |out: &str, seed: &str| {
        let r = Command::new(env!("CARGO_BIN_EXE_ecomann"))
            .args(["--config", &cfg, "gen-data", "circle3d", "--out", out])
            .env("ECOMANN_SEED", seed)
            .output()
            .unwrap();
        assert!(r.status.success());
    };
    with_env(&b, "0");
    with_env(&c, "9");
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert_ne!(text, std::fs::read_to_string(&c).unwrap());
}
