//! Simulation scenarios with known truth, the OTIA metric, and the Monte Carlo driver.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::copula::{clayton_conditional_inverse, link_value, CopulaFamily};
use crate::data::{Dataset, Observation, Outcome, WeightConfig};
use crate::error::{Error, Result};
use crate::normal;
use crate::pipeline::{fit_pipeline, PipelineConfig};
use crate::policy::argmax;
use crate::rng::{derive_seed, stream_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioTag {
    /// Quadratic mean shift in `x₂`, unit-variance errors.
    Main,
    /// Heteroscedastic errors with `σ_j = |x_j|`.
    Case1,
    /// Homoscedastic unit-variance errors.
    Case2,
}

impl ScenarioTag {
    pub const ALL: [ScenarioTag; 3] = [ScenarioTag::Main, ScenarioTag::Case1, ScenarioTag::Case2];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioTag::Main => "main",
            ScenarioTag::Case1 => "case1",
            ScenarioTag::Case2 => "case2",
        }
    }
}

impl fmt::Display for ScenarioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "main" => Ok(ScenarioTag::Main),
            "case1" => Ok(ScenarioTag::Case1),
            "case2" => Ok(ScenarioTag::Case2),
            _ => Err(Error::Validation(format!("unknown scenario '{s}' (expected main, case1 or case2)"))),
        }
    }
}

/// How the two outcomes' errors are coupled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dependence {
    /// Clayton copula with the arm's θ.
    #[default]
    Clayton,
    Independent,
}

/// True coefficients, indexed `[arm][outcome]`.
pub const BETA: [[[f64; 2]; 2]; 3] = [
    [[1.5, 1.0], [1.0, 1.5]],
    [[-1.5, 1.0], [-1.0, 1.5]],
    [[0.0, -2.0], [0.0, -2.0]],
];
pub const THETA: [f64; 3] = [2.0, 2.5, 3.0];
pub const COVARIATE_RANGE: (f64, f64) = (-2.8, 2.8);

/// Smallest error scale treated as continuous; below it the margin is a point mass.
pub const MIN_SIGMA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub tag: ScenarioTag,
    pub n: usize,
    pub beta: [[[f64; 2]; 2]; 3],
    pub theta: [f64; 3],
    pub covariate_range: (f64, f64),
    pub target: (f64, f64),
    /// Censoring scale per outcome: `C_j ~ U(−τ_j, 2τ_j)` on the log scale.
    pub tau: [f64; 2],
    pub dependence: Dependence,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Scenario with the default protocol and the given censoring scales.
    pub fn new(tag: ScenarioTag, tau: [f64; 2]) -> Self {
        ScenarioSpec {
            tag,
            n: 200,
            beta: BETA,
            theta: THETA,
            covariate_range: COVARIATE_RANGE,
            target: (1.0, 1.0),
            tau,
            dependence: Dependence::Clayton,
            seed: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn p(&self) -> usize {
        2
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.covariate_range;
        if !(lo < hi) {
            return Err(Error::Validation(format!("empty covariate range ({lo}, {hi})")));
        }
        if self.n == 0 {
            return Err(Error::Validation("n must be positive".into()));
        }
        if self.tau.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Validation(format!("censoring scales must be positive, got {:?}", self.tau)));
        }
        if self.theta.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Validation(format!("Clayton θ must be positive, got {:?}", self.theta)));
        }
        if !(self.target.0 > 0.0 && self.target.1 > 0.0) {
            return Err(Error::Validation("target times must be positive".into()));
        }
        Ok(())
    }

    /// Mean of `log T_j(a)` given `x`.
    pub fn mean(&self, x: &[f64], a: usize, j: Outcome) -> f64 {
        let b = &self.beta[a][j.index()];
        let lin = b[0] * x[0] + b[1] * x[1];
        match self.tag {
            ScenarioTag::Main => lin + x[1] * x[1],
            ScenarioTag::Case1 | ScenarioTag::Case2 => lin,
        }
    }

    /// Error standard deviation of `log T_j` given `x`.
    pub fn sigma(&self, x: &[f64], j: Outcome) -> f64 {
        match self.tag {
            ScenarioTag::Case1 => x[j.index()].abs(),
            ScenarioTag::Main | ScenarioTag::Case2 => 1.0,
        }
    }

    /// True marginal survival `P(T_j(a) > t | x)`.
    pub fn marginal_survival(&self, t: f64, x: &[f64], a: usize, j: Outcome) -> f64 {
        let mean = self.mean(x, a, j);
        let sigma = self.sigma(x, j);
        let log_t = t.ln();
        if sigma < MIN_SIGMA {
            return if log_t < mean { 1.0 } else { 0.0 };
        }
        normal::sf((log_t - mean) / sigma)
    }
}

/// Draws covariates for one subject.
fn draw_x(spec: &ScenarioSpec, rng: &mut impl Rng) -> Vec<f64> {
    let (lo, hi) = spec.covariate_range;
    vec![rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

/// Latent log failure times `(log T_1(a), log T_2(a))`.
pub fn draw_log_times(spec: &ScenarioSpec, x: &[f64], a: usize, rng: &mut impl Rng) -> [f64; 2] {
    // (u, v) are the survival ranks S_j(T_j); the error is −σ Φ⁻¹(u)
    let u: f64 = rng.gen_range(f64::EPSILON..1.0);
    let w: f64 = rng.gen_range(f64::EPSILON..1.0);
    let v = match spec.dependence {
        Dependence::Clayton => clayton_conditional_inverse(u, w, spec.theta[a]),
        Dependence::Independent => w,
    };
    let z = [-normal::quantile(u), -normal::quantile(v)];
    let mut out = [0.0; 2];
    for j in Outcome::ALL {
        out[j.index()] = spec.mean(x, a, j) + spec.sigma(x, j) * z[j.index()];
    }
    out
}

/// Simulated training data.
pub fn generate_dataset(spec: &ScenarioSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_arms = spec.k() + 1;
    let obs = (0..spec.n)
        .map(|_| {
            let x = draw_x(spec, &mut rng);
            let a = rng.gen_range(0..n_arms);
            let lt = draw_log_times(spec, &x, a, &mut rng);
            let mut y = [0.0; 2];
            let mut delta = [false; 2];
            for j in 0..2 {
                let tau = spec.tau[j];
                let c = rng.gen_range(-tau..2.0 * tau);
                y[j] = lt[j].min(c).exp();
                delta[j] = lt[j] <= c;
            }
            Observation {
                y1: y[0],
                y2: y[1],
                delta1: delta[0],
                delta2: delta[1],
                x,
                a,
            }
        })
        .collect();
    Dataset::new(obs, spec.p(), spec.k())
}

/// Covariates only, for test sets.
pub fn generate_covariates(spec: &ScenarioSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| draw_x(spec, &mut rng)).collect()
}

pub const PILOT_SIZE: usize = 50_000;
pub const TARGET_CENSORING: f64 = 0.5;
const CALIBRATION_TOL: f64 = 0.01;

/// Latent log times of a pilot sample, plus the standardized censoring draws.
struct Pilot {
    log_t: Vec<[f64; 2]>,
    unit: Vec<[f64; 2]>,
}

impl Pilot {
    fn new(spec: &ScenarioSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pilot = Pilot { log_t: Vec::with_capacity(PILOT_SIZE), unit: Vec::with_capacity(PILOT_SIZE) };
        for _ in 0..PILOT_SIZE {
            let x = draw_x(spec, &mut rng);
            let a = rng.gen_range(0..spec.k() + 1);
            pilot.log_t.push(draw_log_times(spec, &x, a, &mut rng));
            pilot.unit.push([rng.gen(), rng.gen()]);
        }
        pilot
    }

    /// Fraction censored for outcome `j` when `C = τ(3U − 1)`.
    fn rate(&self, j: usize, tau: f64) -> f64 {
        let censored = self
            .log_t
            .iter()
            .zip(&self.unit)
            .filter(|(t, u)| t[j] > tau * (3.0 * u[j] - 1.0))
            .count();
        censored as f64 / self.log_t.len() as f64
    }
}

/// Empirical censoring rate per outcome on a fresh pilot sample.
pub fn censoring_rates(spec: &ScenarioSpec, seed: u64) -> [f64; 2] {
    let pilot = Pilot::new(spec, seed);
    [pilot.rate(0, spec.tau[0]), pilot.rate(1, spec.tau[1])]
}

/// Censoring scales giving a marginal censoring rate of 50% per outcome.
pub fn calibrate_tau(spec: &ScenarioSpec) -> Result<[f64; 2]> {
    let pilot = Pilot::new(spec, derive_seed(spec.seed, 0xCA1B));
    let mut tau = [0.0; 2];
    for (j, slot) in tau.iter_mut().enumerate() {
        *slot = calibrate_one(&pilot, j).map_err(|e| e.context(format!("{} outcome {}", spec.tag, j + 1)))?;
    }
    Ok(tau)
}

fn calibrate_one(pilot: &Pilot, j: usize) -> Result<f64> {
    let target = TARGET_CENSORING;
    let mut lo = 1e-4;
    let r_lo = pilot.rate(j, lo);
    if r_lo < target {
        if target - r_lo <= CALIBRATION_TOL {
            return Ok(lo);
        }
        return Err(Error::Calibration(format!(
            "censoring rate {r_lo:.3} at the smallest scale is already below {target}"
        )));
    }
    let mut hi = 1.0;
    while pilot.rate(j, hi) > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Calibration(format!("no scale up to {hi:e} reaches censoring rate {target}")));
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if pilot.rate(j, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    let achieved = pilot.rate(j, tau);
    if (achieved - target).abs() > CALIBRATION_TOL {
        return Err(Error::Calibration(format!("bisection ended at rate {achieved:.4}")));
    }
    Ok(tau)
}

/// Where a scenario's censoring scales come from.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauSource {
    /// Calibrated on the main scenario and shared by all scenarios.
    #[default]
    Reference,
    /// Calibrated on the scenario itself.
    Own,
    Fixed([f64; 2]),
}

/// Censoring scales for `tag` under `source`.
pub fn resolve_tau(tag: ScenarioTag, source: TauSource, dependence: Dependence, seed: u64) -> Result<[f64; 2]> {
    let base = |tag| ScenarioSpec {
        dependence,
        seed,
        ..ScenarioSpec::new(tag, [1.0, 1.0])
    };
    match source {
        TauSource::Reference => calibrate_tau(&base(ScenarioTag::Main)),
        TauSource::Own => calibrate_tau(&base(tag)),
        TauSource::Fixed(tau) => Ok(tau),
    }
}

/// True `S(t1, t2 | x, a)`.
pub fn true_joint_survival(spec: &ScenarioSpec, t1: f64, t2: f64, x: &[f64], a: usize) -> f64 {
    let u = spec.marginal_survival(t1, x, a, Outcome::First);
    let v = spec.marginal_survival(t2, x, a, Outcome::Second);
    match spec.dependence {
        Dependence::Clayton => link_value(CopulaFamily::Clayton, u, v, spec.theta[a]),
        Dependence::Independent => u * v,
    }
}

/// True survival of every arm at the target times.
pub fn true_survival_vector(spec: &ScenarioSpec, x: &[f64]) -> Vec<f64> {
    (0..=spec.k())
        .map(|a| true_joint_survival(spec, spec.target.0, spec.target.1, x, a))
        .collect()
}

/// Optimal arm under the true model; ties go to the smallest index.
pub fn oracle_policy(spec: &ScenarioSpec, x: &[f64]) -> usize {
    argmax(&true_survival_vector(spec, x))
}

/// Fraction of decisions matching the oracle.
pub fn compute_otia(decisions: &[usize], oracle: &[usize]) -> Result<f64> {
    if decisions.len() != oracle.len() {
        return Err(Error::Shape { expected: oracle.len(), got: decisions.len() });
    }
    if decisions.is_empty() {
        return Err(Error::Precondition("no decisions to score".into()));
    }
    let hits = decisions.iter().zip(oracle).filter(|(d, o)| d == o).count();
    Ok(hits as f64 / decisions.len() as f64)
}

/// Driver settings shared by all replications.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationOptions {
    pub replications: usize,
    pub n_test: usize,
    pub pipeline: PipelineConfig,
    /// Worker threads; 1 runs replications in order on the calling thread.
    pub jobs: usize,
    /// Largest tolerated failure fraction.
    pub max_failure_rate: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            replications: 100,
            n_test: 1000,
            pipeline: PipelineConfig::default(),
            jobs: 1,
            max_failure_rate: 0.1,
        }
    }
}

/// Estimates `[arm][outcome][coefficient]`.
pub type BetaTable = [[[f64; 2]; 2]; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationResult {
    pub index: usize,
    pub seed: u64,
    pub otia: f64,
    pub beta: BetaTable,
    pub families: [CopulaFamily; 3],
    pub thetas: [f64; 3],
    pub runtime: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationFailure {
    pub index: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationReport {
    pub scenario: ScenarioTag,
    pub c: WeightConfig,
    pub n: usize,
    pub n_test: usize,
    pub tau: [f64; 2],
    pub truth: BetaTable,
    pub results: Vec<ReplicationResult>,
    pub failures: Vec<ReplicationFailure>,
    pub mean_otia: f64,
    /// `|mean(β̂ − β)|`.
    pub bias: BetaTable,
    /// Sample standard deviation over successful replications (divisor R − 1).
    pub ssd: BetaTable,
}

impl ReplicationReport {
    pub fn total_runtime(&self) -> Duration {
        self.results.iter().map(|r| r.runtime).sum()
    }
}

/// Seed of replication `r`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, r as u64)
}

/// One pass of the full method on fresh train/test data.
pub fn run_one(spec: &ScenarioSpec, c: WeightConfig, opts: &SimulationOptions, index: usize) -> Result<ReplicationResult> {
    let start = Instant::now();
    let seed = replication_seed(spec.seed, index);
    let train = generate_dataset(spec, stream_seed(seed, Stream::TrainData, 0))?;
    let test_x = generate_covariates(spec, opts.n_test, stream_seed(seed, Stream::TestData, 0));
    let cfg = PipelineConfig { c, seed, ..opts.pipeline.clone() };
    let model = fit_pipeline(&train, &cfg)?;
    let decisions: Vec<usize> = test_x.iter().map(|x| model.decide(x)).collect();
    let oracle: Vec<usize> = test_x.iter().map(|x| oracle_policy(spec, x)).collect();
    let otia = compute_otia(&decisions, &oracle)?;
    let mut beta = [[[0.0; 2]; 2]; 3];
    let mut families = [CopulaFamily::Clayton; 3];
    let mut thetas = [0.0; 3];
    for (a, arm) in model.joint.arms.iter().enumerate().take(3) {
        beta[a][0].copy_from_slice(&arm.first.beta[..2]);
        beta[a][1].copy_from_slice(&arm.second.beta[..2]);
        families[a] = arm.copula.family;
        thetas[a] = arm.copula.theta;
    }
    Ok(ReplicationResult {
        index,
        seed,
        otia,
        beta,
        families,
        thetas,
        runtime: start.elapsed(),
    })
}

/// Monte Carlo evaluation of one weight configuration.
pub fn run_replications(spec: &ScenarioSpec, c: WeightConfig, opts: &SimulationOptions) -> Result<ReplicationReport> {
    spec.validate()?;
    if opts.replications == 0 {
        return Err(Error::Precondition("need at least one replication".into()));
    }
    if spec.k() != 2 || spec.p() != 2 {
        return Err(Error::Unsupported("scenarios are defined for K = 2 and p = 2".into()));
    }
    let run = |r: usize| run_one(spec, c, opts, r);
    let outcomes: Vec<Result<ReplicationResult>> = if opts.jobs <= 1 {
        (0..opts.replications).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
        pool.install(|| (0..opts.replications).into_par_iter().map(run).collect())
    };

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(res) => results.push(res),
            Err(e) => {
                log::warn!("{} {c} replication {r} failed: {e}", spec.tag);
                failures.push(ReplicationFailure {
                    index: r,
                    seed: replication_seed(spec.seed, r),
                    message: e.to_string(),
                });
            }
        }
    }
    if failures.len() as f64 > opts.max_failure_rate * opts.replications as f64 || results.is_empty() {
        return Err(Error::TooManyFailures { failed: failures.len(), total: opts.replications });
    }

    let m = results.len() as f64;
    let mean_otia = results.iter().map(|r| r.otia).sum::<f64>() / m;
    let mut bias = [[[0.0; 2]; 2]; 3];
    let mut ssd = [[[0.0; 2]; 2]; 3];
    for a in 0..3 {
        for j in 0..2 {
            for k in 0..2 {
                let est: Vec<f64> = results.iter().map(|r| r.beta[a][j][k]).collect();
                let mean = est.iter().sum::<f64>() / m;
                bias[a][j][k] = (mean - spec.beta[a][j][k]).abs();
                ssd[a][j][k] = if results.len() > 1 {
                    (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
                } else {
                    0.0
                };
            }
        }
    }
    Ok(ReplicationReport {
        scenario: spec.tag,
        c,
        n: spec.n,
        n_test: opts.n_test,
        tau: spec.tau,
        truth: spec.beta,
        results,
        failures,
        mean_otia,
        bias,
        ssd,
    })
}

pub const REPORT_HEADER: &str = "kind,scenario,c1,c2,replication,seed,arm,outcome,coefficient,value,truth";

/// Long-format CSV: one row per replication and coefficient, OTIA rows, failures, then summaries.
pub fn write_report_csv<W: Write>(reports: &[ReplicationReport], mut w: W) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for rep in reports {
        let (c1, c2) = (rep.c.c1, rep.c.c2);
        let tag = rep.scenario;
        for res in &rep.results {
            writeln!(w, "otia,{tag},{c1},{c2},{},{},,,,{},", res.index, res.seed, res.otia)?;
            for a in 0..3 {
                for j in 0..2 {
                    for k in 0..2 {
                        writeln!(
                            w,
                            "estimate,{tag},{c1},{c2},{},{},{a},{},{},{},{}",
                            res.index,
                            res.seed,
                            j + 1,
                            k + 1,
                            res.beta[a][j][k],
                            rep.truth[a][j][k]
                        )?;
                    }
                }
            }
        }
        for f in &rep.failures {
            writeln!(w, "failure,{tag},{c1},{c2},{},{},,,,,", f.index, f.seed)?;
        }
        writeln!(w, "mean_otia,{tag},{c1},{c2},,,,,,{},", rep.mean_otia)?;
        for (kind, table) in [("bias", &rep.bias), ("ssd", &rep.ssd)] {
            for a in 0..3 {
                for j in 0..2 {
                    for k in 0..2 {
                        writeln!(
                            w,
                            "{kind},{tag},{c1},{c2},,,{a},{},{},{},{}",
                            j + 1,
                            k + 1,
                            table[a][j][k],
                            rep.truth[a][j][k]
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Human-readable summary: OTIA line per configuration and the bias/SSD table.
pub fn write_summary<W: Write>(reports: &[ReplicationReport], mut w: W) -> Result<()> {
    for rep in reports {
        writeln!(
            w,
            "OTIA {} c={} mean={:.4} replications={} failures={}",
            rep.scenario,
            rep.c,
            rep.mean_otia,
            rep.results.len(),
            rep.failures.len()
        )?;
    }
    if let Some(first) = reports.first() {
        writeln!(w)?;
        writeln!(w, "scenario {} n={} n_test={} tau=({:.4}, {:.4})", first.scenario, first.n, first.n_test, first.tau[0], first.tau[1])?;
        write!(w, "{:<6}{:<8}{:<6}", "arm", "outcome", "coef")?;
        for rep in reports {
            write!(w, "{:>22}", format!("{} bias/ssd", rep.c))?;
        }
        writeln!(w)?;
        for a in 0..3 {
            for j in 0..2 {
                for k in 0..2 {
                    write!(w, "{:<6}{:<8}{:<6}", a, j + 1, format!("b{}{}", j + 1, k + 1))?;
                    for rep in reports {
                        write!(w, "{:>22}", format!("{:.4} / {:.4}", rep.bias[a][j][k], rep.ssd[a][j][k]))?;
                    }
                    writeln!(w)?;
                }
            }
        }
        for rep in reports {
            for f in &rep.failures {
                writeln!(w, "failed {} replication {}: {}", rep.c, f.index, f.message)?;
            }
        }
    }
    Ok(())
}
