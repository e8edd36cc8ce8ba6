//! Command-line front end: simulation studies, fitting on CSV data, batch decisions and plots.

pub mod config;
pub mod plot;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bitr::data::{load_covariates, load_dataset, save_dataset};
use bitr::model_file::{load_model, save_model};
use bitr::pipeline::{fit_pipeline, FittedModel};
use bitr::simulation::{
    generate_dataset, oracle_policy, resolve_tau, run_replications, write_report_csv, write_summary, ScenarioSpec,
    ScenarioTag,
};
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "bitr", version, about = "Individualized treatment rules for bivariate survival outcomes")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set n=400`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo study on a simulated scenario.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Worker threads for replications.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write one simulated training set as CSV.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the joint survival model and policy on a CSV dataset.
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Model file to write.
        #[arg(long)]
        model: PathBuf,
    },
    /// Recommend an arm for each row of a covariate CSV.
    Decide {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        covariates: PathBuf,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decision-region SVG for a scenario's true rule and/or a fitted model.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Draw the true rule of this scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Cells per axis.
        #[arg(long, default_value_t = 100)]
        grid: usize,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] bitr::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    /// 0 success, 1 runtime or statistical failure, 2 usage or input error.
    pub fn exit_code(&self) -> i32 {
        use bitr::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(e) => match e.root() {
                E::Io(_)
                | E::Parse { .. }
                | E::MissingColumn(_)
                | E::Validation(_)
                | E::Shape { .. }
                | E::Unsupported(_)
                | E::ModelFile(_) => 2,
                _ => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_context(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { cfg, jobs, output } => {
            let run = RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?;
            simulate(&run, jobs, output.as_deref().unwrap_or(&run.output), &mut std::io::stdout())
        }
        Command::Generate { cfg, out } => {
            let run = RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?;
            let spec = scenario_spec(&run)?;
            save_dataset(&generate_dataset(&spec, spec.seed)?, &out)?;
            Ok(())
        }
        Command::Fit { cfg, data, model } => {
            let run = RunConfig::load(cfg.config.as_deref(), &cfg.overrides)?;
            fit(&run, &data, &model, &mut std::io::stdout())
        }
        Command::Decide { model, covariates, out } => match out {
            Some(path) => {
                let file = fs::File::create(&path).map_err(io_context(format!("cannot create {}", path.display())))?;
                decide(&model, &covariates, std::io::BufWriter::new(file))
            }
            None => decide(&model, &covariates, std::io::stdout().lock()),
        },
        Command::Plot { out, model, scenario, grid } => plot(&out, model.as_deref(), scenario.as_deref(), grid),
    }
}

/// Scenario with the configured size, seed and resolved censoring scales.
pub fn scenario_spec(run: &RunConfig) -> CliResult<ScenarioSpec> {
    let tag = run.scenario_tag()?;
    let dependence = run.dependence_kind()?;
    let tau = resolve_tau(tag, run.tau_source()?, dependence, run.seed)?;
    Ok(ScenarioSpec {
        n: run.n,
        seed: run.seed,
        dependence,
        target: (run.target[0], run.target[1]),
        ..ScenarioSpec::new(tag, tau)
    })
}

pub fn simulate(run: &RunConfig, jobs: usize, out_dir: &Path, out: &mut dyn Write) -> CliResult<()> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let spec = scenario_spec(run)?;
    log::info!("{} n={} tau=({:.4}, {:.4}) seed={}", spec.tag, spec.n, spec.tau[0], spec.tau[1], spec.seed);
    let opts = run.simulation(jobs);
    let mut reports = Vec::new();
    for c in run.weight_configs() {
        let rep = run_replications(&spec, c, &opts)?;
        log::info!("{} c={c}: mean OTIA {:.4} ({:.1}s)", spec.tag, rep.mean_otia, rep.total_runtime().as_secs_f64());
        reports.push(rep);
    }
    fs::create_dir_all(out_dir).map_err(io_context(format!("cannot create {}", out_dir.display())))?;
    let mut csv = Vec::new();
    write_report_csv(&reports, &mut csv)?;
    let mut summary = Vec::new();
    write_summary(&reports, &mut summary)?;
    fs::write(out_dir.join("report.csv"), &csv).map_err(io_context("cannot write report.csv"))?;
    fs::write(out_dir.join("summary.txt"), &summary).map_err(io_context("cannot write summary.txt"))?;
    for rep in &reports {
        writeln!(out, "OTIA {} c={} mean={:.4}", rep.scenario, rep.c, rep.mean_otia).map_err(io_context("stdout"))?;
    }
    Ok(())
}

pub fn fit(run: &RunConfig, data: &Path, model_path: &Path, out: &mut dyn Write) -> CliResult<()> {
    let mut d = load_dataset(data)?;
    if let Some(k) = run.k {
        d = d.with_k(k)?;
    }
    let model = fit_pipeline(&d, &run.pipeline())?;
    save_model(&model, model_path)?;
    let w = |e| CliError::Io { context: "stdout".into(), source: e };
    for arm in &model.joint.arms {
        let a = arm.copula.arm;
        for m in [&arm.first, &arm.second] {
            writeln!(out, "arm {a} outcome {}: beta={:?} gamma={:.6}", m.outcome, m.beta, m.gamma).map_err(w)?;
        }
        writeln!(out, "arm {a} copula: {} theta={:.6}", arm.copula.family, arm.copula.theta).map_err(w)?;
    }
    Ok(())
}

pub fn decide(model_path: &Path, covariates: &Path, out: impl Write) -> CliResult<()> {
    let model = load_model(model_path)?;
    let xs = load_covariates(covariates)?;
    let p = model.network.input_dim();
    if let Some(x) = xs.iter().find(|x| x.len() != p) {
        return Err(bitr::Error::Shape { expected: p, got: x.len() }.into());
    }
    write_decisions(&model, &xs, out)
}

/// CSV of `x1..xp, arm, p0..pK`.
pub fn write_decisions(model: &FittedModel, xs: &[Vec<f64>], out: impl Write) -> CliResult<()> {
    let p = model.network.input_dim();
    let arms = model.network.n_actions();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
    header.push("arm".into());
    header.extend((0..arms).map(|a| format!("p{a}")));
    let csv_err = |e: csv::Error| CliError::Io { context: "writing decisions".into(), source: std::io::Error::other(e) };
    w.write_record(&header).map_err(csv_err)?;
    for x in xs {
        let pi = model.policy(x);
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        row.push(model.decide(x).to_string());
        row.extend(pi.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_context("writing decisions"))?;
    Ok(())
}

pub fn plot(out: &Path, model: Option<&Path>, scenario: Option<&str>, grid: usize) -> CliResult<()> {
    if grid == 0 {
        return Err(CliError::Usage("grid must have at least one cell per axis".into()));
    }
    let mut panels = Vec::new();
    let mut n_arms = 0;
    if let Some(tag) = scenario {
        let tag: ScenarioTag = tag.parse()?;
        let spec = ScenarioSpec::new(tag, [1.0, 1.0]);
        n_arms = spec.k() + 1;
        panels.push(("truth", plot::decision_grid(grid, |x| oracle_policy(&spec, x))));
    }
    if let Some(path) = model {
        let m = load_model(path)?;
        if m.network.input_dim() != 2 {
            return Err(bitr::Error::Unsupported(format!("plots need p = 2, model has p = {}", m.network.input_dim())).into());
        }
        n_arms = n_arms.max(m.network.n_actions());
        panels.push(("prediction", plot::decision_grid(grid, |x| m.decide(x))));
    }
    if panels.is_empty() {
        return Err(CliError::Usage("nothing to plot: pass --scenario and/or --model".into()));
    }
    fs::write(out, plot::render_svg(&panels, n_arms)).map_err(io_context(format!("cannot write {}", out.display())))?;
    Ok(())
}
