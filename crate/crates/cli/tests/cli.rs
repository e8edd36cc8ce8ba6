use std::path::Path;
use std::process::{Command, Output};

use bitr::data::load_dataset;
use bitr::model_file::load_model;
use bitr::simulation::{oracle_policy, ScenarioSpec, ScenarioTag};
use bitr_cli::plot::{count_regions, decision_grid};

const QUICK: [&str; 10] = [
    "--set", "replications=3", "--set", "n_test=200", "--set", "epochs=20", "--set", "tau=[5.0, 5.0]", "--set", "trees=20",
];

fn bitr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitr")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--output", dir.to_str().unwrap()];
    args.extend(QUICK);
    args.extend(extra);
    bitr(&args)
}

#[test]
fn simulate_smoke_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("OTIA main")).collect();
    assert_eq!(lines.len(), 3);
    for l in lines {
        let v: f64 = l.rsplit("mean=").next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.starts_with("OTIA ")).count(), 3);
    assert!(dir.path().join("report.csv").exists());
}

#[test]
fn simulate_is_deterministic_across_runs_and_jobs() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let extra = ["--set", "scenario=case2", "--set", "c1=1", "--set", "c2=1"];
    assert_eq!(code(&simulate(a.path(), &extra)), 0);
    assert_eq!(code(&simulate(b.path(), &extra)), 0);
    let mut with_jobs = extra.to_vec();
    with_jobs.extend(["--jobs", "2"]);
    assert_eq!(code(&simulate(c.path(), &with_jobs)), 0);
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("report.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
}

#[test]
fn invalid_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), &["--set", "unknown_key=1"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown_key"), "{}", stderr(&out));

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "scenario = \"main\"\nreplications = 0\n").unwrap();
    let out = bitr(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&bitr(&["simulate", "--config", "/nonexistent/run.toml"])), 2);
}

#[test]
fn replication_failures_exit_with_runtime_code() {
    let dir = tempfile::tempdir().unwrap();
    // arms of about four rows cannot fill five cross-validation folds
    let out = simulate(dir.path(), &["--set", "n=12", "--set", "copulas=[\"clayton\", \"frank\"]"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("replications failed"));
}

fn generate(dir: &Path, n: usize) -> std::path::PathBuf {
    let path = dir.join("train.csv");
    let n = format!("n={n}");
    let out = bitr(&["generate", "--out", path.to_str().unwrap(), "--set", &n, "--set", "tau=[5.0, 5.0]", "--set", "seed=3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    path
}

#[test]
fn fit_then_decide_reproduces_in_memory_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), 1000);
    let model = dir.path().join("model.json");
    let out = bitr(&["fit", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--set", "epochs=40"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    for a in 0..3 {
        assert!(stdout.contains(&format!("arm {a} outcome 1: beta=")));
        assert!(stdout.contains(&format!("arm {a} copula: ")));
    }

    // decide on the training covariates
    let d = load_dataset(&data).unwrap();
    let covs = dir.path().join("x.csv");
    let mut text = String::from("x1,x2\n");
    for o in d.iter() {
        text += &format!("{},{}\n", o.x[0], o.x[1]);
    }
    std::fs::write(&covs, text).unwrap();
    let decisions = dir.path().join("decisions.csv");
    let out = bitr(&["decide", "--model", model.to_str().unwrap(), "--covariates", covs.to_str().unwrap(), "--out", decisions.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let loaded = load_model(&model).unwrap();
    let mut rdr = csv::Reader::from_path(&decisions).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["x1", "x2", "arm", "p0", "p1", "p2"]);
    let mut rows = 0;
    for (rec, o) in rdr.records().zip(d.iter()) {
        let rec = rec.unwrap();
        let arm: usize = rec[2].parse().unwrap();
        let probs: Vec<f64> = (3..6).map(|i| rec[i].parse().unwrap()).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert_eq!(arm, bitr::policy::argmax(&probs));
        assert_eq!(arm, loaded.decide(&o.x));
        assert_eq!(probs, loaded.policy(&o.x));
        rows += 1;
    }
    assert_eq!(rows, 1000);
}

#[test]
fn fit_reports_missing_column_and_single_arm() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y1,y2,d1,a,x1\n1.0,2.0,1,0,0.5\n").unwrap();
    let model = dir.path().join("m.json");
    let out = bitr(&["fit", "--data", bad.to_str().unwrap(), "--model", model.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("d2"), "{}", stderr(&out));

    let single = dir.path().join("single.csv");
    let mut text = String::from("y1,y2,d1,d2,a,x1\n");
    for i in 0..30 {
        text += &format!("{},{},1,1,0,{}\n", 1.0 + i as f64, 2.0 + i as f64, i as f64 / 10.0);
    }
    std::fs::write(&single, text).unwrap();
    let out = bitr(&["fit", "--data", single.to_str().unwrap(), "--model", model.to_str().unwrap()]);
    assert_ne!(code(&out), 0);
    assert!(!model.exists());
}

#[test]
fn decide_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), 200);
    let model = dir.path().join("model.json");
    assert_eq!(code(&bitr(&["fit", "--data", data.to_str().unwrap(), "--model", model.to_str().unwrap(), "--set", "epochs=5"])), 0);
    let covs = dir.path().join("x3.csv");
    std::fs::write(&covs, "x1,x2,x3\n0.1,0.2,0.3\n").unwrap();
    let out = bitr(&["decide", "--model", model.to_str().unwrap(), "--covariates", covs.to_str().unwrap()]);
    assert_eq!(code(&out), 2);

    let plot = dir.path().join("fit.svg");
    let out = bitr(&["plot", "--out", plot.to_str().unwrap(), "--scenario", "main", "--model", model.to_str().unwrap(), "--grid", "40"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = std::fs::read_to_string(&plot).unwrap();
    assert!(svg.contains(">truth<") && svg.contains(">prediction<"));
}

#[test]
fn oracle_plot_has_three_regions() {
    let spec = ScenarioSpec::new(ScenarioTag::Main, [1.0, 1.0]);
    let grid = decision_grid(100, |x| oracle_policy(&spec, x));
    assert_eq!(count_regions(&grid), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truth.svg");
    let out = bitr(&["plot", "--out", path.to_str().unwrap(), "--scenario", "main"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = std::fs::read_to_string(&path).unwrap();
    assert!(svg.starts_with("<?xml version=\"1.0\""));
    assert!(svg.contains("<svg xmlns=\"http://www.w3.org/2000/svg\""));
    assert_eq!(svg.matches("<rect x=").count(), 100 * 100 + 3 + 1);
}

#[test]
fn plot_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.svg");
    let p = path.to_str().unwrap();
    assert_eq!(code(&bitr(&["plot", "--out", p, "--scenario", "main", "--grid", "0"])), 2);
    assert_eq!(code(&bitr(&["plot", "--out", p])), 2);
    assert_eq!(code(&bitr(&["plot", "--out", p, "--scenario", "case7"])), 2);
    assert_eq!(code(&bitr(&["no-such-command"])), 2);
}
