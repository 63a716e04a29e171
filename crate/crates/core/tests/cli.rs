use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixprobit::archive::Archive;

const CONFIG: &str = r#"
seed = 11

[prior]
max_components = 2

[chain]
pilot_burnin = 10
pilot_length = 20
warmup = 10
sampling = 20
thin = 1
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mixprobit"));
    c.env_remove("MIXPROBIT_SEED");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(w.path("run.toml"), CONFIG).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, name: &str, function: &str, seed: &str) -> PathBuf {
        let out = self.path(name);
        let status = run(bin()
            .args(["simulate", "--function", function, "--n", "120", "--seed", seed, "--out"])
            .arg(&out))
        .status;
        assert!(status.success());
        out
    }

    fn fit(&self, data: &Path, name: &str) -> (PathBuf, Output) {
        let out = self.path(name);
        let output = run(bin()
            .arg("--config")
            .arg(self.path("run.toml"))
            .args(["fit", "--data"])
            .arg(data)
            .arg("--out")
            .arg(&out)
            .arg("--trace")
            .arg(self.path(&format!("{name}.ndjson"))));
        (out, output)
    }
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn simulate_fit_predict_evaluate_round_trip() {
    let ws = Workspace::new();
    let data = ws.simulate("train.csv", "c", "3");
    let (model, out) = ws.fit(&data, "model.json");
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Pr(r = 1 | w)") && stdout.contains("jump acceptance"));

    let archive = Archive::load(&model).unwrap();
    assert_eq!(archive.draws.len(), 20);
    let trace = fs::read_to_string(ws.path("model.json.ndjson")).unwrap();
    assert_eq!(trace.lines().count(), 20);
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["r"].as_u64().unwrap() >= 1);
    }

    // Predicting at the training covariates reproduces the stored fit.
    let pred = ws.path("pred.csv");
    assert!(run(bin().args(["predict", "--model"]).arg(&model).arg("--data").arg(&data).arg("--out").arg(&pred))
        .status
        .success());
    let prob = csv_column(&pred, "prob");
    assert_eq!(prob.len(), 120);
    for (p, f) in prob.iter().zip(&archive.fitted_probs) {
        assert!((p - f).abs() < 1e-10);
    }
    let (low, high) = (csv_column(&pred, "low"), csv_column(&pred, "high"));
    assert!((0..120).all(|i| low[i] <= prob[i] && prob[i] <= high[i]));

    let metrics = ws.path("metrics.csv");
    assert!(run(bin()
        .args(["evaluate", "--data"])
        .arg(&data)
        .arg("--estimate")
        .arg(&pred)
        .arg("--baseline")
        .arg(&pred)
        .arg("--out")
        .arg(&metrics))
    .status
    .success());
    let text = fs::read_to_string(&metrics).unwrap();
    for key in ["askld", "ase", "pct_delta_ase,0", "ecp", "auc"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
    assert!(ws.path("metrics.roc.csv").exists());
}

#[test]
fn seeded_runs_repeat_and_flag_beats_environment() {
    let ws = Workspace::new();
    let a = ws.simulate("a.csv", "a", "9");
    let b = ws.simulate("b.csv", "a", "9");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let env_only = ws.path("env.csv");
    assert!(run(bin()
        .env("MIXPROBIT_SEED", "9")
        .args(["simulate", "--function", "a", "--n", "120", "--out"])
        .arg(&env_only))
    .status
    .success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&env_only).unwrap());

    let flag_wins = ws.path("flag.csv");
    assert!(run(bin()
        .env("MIXPROBIT_SEED", "10")
        .args(["simulate", "--function", "a", "--n", "120", "--seed", "9", "--out"])
        .arg(&flag_wins))
    .status
    .success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&flag_wins).unwrap());

    let (m1, _) = ws.fit(&a, "m1.json");
    let (m2, _) = ws.fit(&a, "m2.json");
    let (d1, d2) = (Archive::load(&m1).unwrap(), Archive::load(&m2).unwrap());
    assert_eq!(d1.draws, d2.draws);
    assert_eq!(d1.fitted_probs, d2.fitted_probs);
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let ws = Workspace::new();
    assert_eq!(run(bin().arg("bogus")).status.code(), Some(1));
    assert_eq!(
        run(bin().args(["simulate", "--function", "z", "--out"]).arg(ws.path("x.csv"))).status.code(),
        Some(1)
    );
    let bad_seed = run(bin()
        .env("MIXPROBIT_SEED", "not-a-number")
        .args(["simulate", "--out"])
        .arg(ws.path("x.csv")));
    assert_eq!(bad_seed.status.code(), Some(1));

    fs::write(ws.path("typo.toml"), "[chain]\nwarmpu = 3\n").unwrap();
    let typo = run(bin()
        .arg("--config")
        .arg(ws.path("typo.toml"))
        .args(["simulate", "--out"])
        .arg(ws.path("x.csv")));
    assert_eq!(typo.status.code(), Some(1));

    let missing = run(bin().args(["fit", "--data"]).arg(ws.path("nope.csv")).arg("--out").arg(ws.path("m.json")));
    assert_eq!(missing.status.code(), Some(2));

    fs::write(ws.path("bad.csv"), "x1,w\n0.1,1\n0.2,3\n").unwrap();
    let bad = run(bin().args(["fit", "--data"]).arg(ws.path("bad.csv")).arg("--out").arg(ws.path("m.json")));
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line 3"));

    fs::write(ws.path("old.json"), r#"{"format": "mixprobit-archive", "version": 99}"#).unwrap();
    fs::write(ws.path("pts.csv"), "x1\n0.5\n").unwrap();
    let old = run(bin()
        .args(["predict", "--model"])
        .arg(ws.path("old.json"))
        .arg("--data")
        .arg(ws.path("pts.csv"))
        .arg("--out")
        .arg(ws.path("p.csv")));
    assert_eq!(old.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&old.stderr).contains("version"));
}
