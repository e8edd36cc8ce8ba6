//! Censoring-survival estimators used as IPCW denominators.
//!
//! Both estimators are fit on the log-time scale with `δ_j = 0` treated as the event,
//! and evaluated as right-continuous step functions clamped below at a floor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Outcome};
use crate::error::{Error, Result};

pub const DEFAULT_FLOOR: f64 = 0.02;

/// Anything that returns the probability of remaining uncensored past time `t` given `x`.
pub trait CensoringSurvival: Send + Sync {
    /// `t` is on the natural time scale.
    fn eval(&self, t: f64, x: &[f64]) -> f64;
}

impl<F> CensoringSurvival for F
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self(t, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CensoringKind {
    #[default]
    KaplanMeier,
    CoxPh,
}

/// Fitted censoring distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CensoringFit {
    KaplanMeier {
        /// Log-scale jump times, ascending.
        times: Vec<f64>,
        /// Survival just after each jump; non-increasing.
        surv: Vec<f64>,
    },
    CoxPh {
        coef: Vec<f64>,
        /// Log-scale event times of the Breslow step function, ascending.
        times: Vec<f64>,
        cum_hazard: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CensoringModel {
    pub fit: CensoringFit,
    pub floor: f64,
}

impl CensoringModel {
    pub fn kind(&self) -> CensoringKind {
        match self.fit {
            CensoringFit::KaplanMeier { .. } => CensoringKind::KaplanMeier,
            CensoringFit::CoxPh { .. } => CensoringKind::CoxPh,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    /// Unclamped survival on the log-time scale.
    pub fn raw_log_scale(&self, log_t: f64, x: &[f64]) -> f64 {
        match &self.fit {
            CensoringFit::KaplanMeier { times, surv } => match step_index(times, log_t) {
                Some(i) => surv[i],
                None => 1.0,
            },
            CensoringFit::CoxPh { coef, times, cum_hazard } => {
                let h = step_index(times, log_t).map_or(0.0, |i| cum_hazard[i]);
                (-h * dot(coef, x).exp()).exp()
            }
        }
    }
}

impl CensoringSurvival for CensoringModel {
    fn eval(&self, t: f64, x: &[f64]) -> f64 {
        eval_g(self, t, x)
    }
}

/// Clamped censoring survival `Ĝ(t, x)` in `[floor, 1]`. Kaplan–Meier models ignore `x`.
pub fn eval_g(m: &CensoringModel, t: f64, x: &[f64]) -> f64 {
    m.raw_log_scale(t.ln(), x).clamp(m.floor, 1.0)
}

/// Index of the last jump at or before `t`.
fn step_index(times: &[f64], t: f64) -> Option<usize> {
    let k = times.partition_point(|&s| s <= t);
    k.checked_sub(1)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// `(log time, censored?)` for every row, sorted by time with failures first among ties.
fn sorted_log_times(arm: &Dataset, j: Outcome) -> Vec<(f64, bool, usize)> {
    let mut rows: Vec<(f64, bool, usize)> = arm
        .iter()
        .enumerate()
        .map(|(i, o)| (o.log_y(j), !o.delta(j), i))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    rows
}

/// Reverse Kaplan–Meier estimate of the censoring survival for outcome `j`.
pub fn fit_km_censoring(arm: &Dataset, j: Outcome) -> Result<CensoringModel> {
    if arm.is_empty() {
        return Err(Error::InsufficientData("empty arm".into()));
    }
    if arm.iter().all(|o| !o.delta(j)) {
        return Err(Error::Degenerate(format!("outcome {j}: every observation is censored")));
    }
    let rows = sorted_log_times(arm, j);
    let n = rows.len();
    let mut times = Vec::new();
    let mut surv = Vec::new();
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = rows[i].0;
        let mut end = i;
        while end < n && rows[end].0 == t {
            end += 1;
        }
        // failures at t leave the risk set before censorings at t
        let failures = rows[i..end].iter().filter(|r| !r.1).count();
        let censorings = end - i - failures;
        if censorings > 0 {
            let at_risk = (n - i - failures) as f64;
            s *= 1.0 - censorings as f64 / at_risk;
            times.push(t);
            surv.push(s);
        }
        i = end;
    }
    Ok(CensoringModel {
        fit: CensoringFit::KaplanMeier { times, surv },
        floor: DEFAULT_FLOOR,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions { max_iter: 50, tol: 1e-9 }
    }
}

struct CoxData {
    /// Sorted by time ascending.
    times: Vec<f64>,
    censored: Vec<bool>,
    x: Vec<Vec<f64>>,
}

impl CoxData {
    fn new(arm: &Dataset, j: Outcome) -> Self {
        let rows = sorted_log_times(arm, j);
        let obs = arm.observations();
        CoxData {
            times: rows.iter().map(|r| r.0).collect(),
            censored: rows.iter().map(|r| r.1).collect(),
            x: rows.iter().map(|r| obs[r.2].x.clone()).collect(),
        }
    }

    /// Walks tied censoring-event groups from the latest time backwards, maintaining the
    /// risk-set sums of `w`, `w x` and `w x xᵀ` with `w = exp(coefᵀx − shift)`.
    fn for_each_event_group(&self, coef: &[f64], mut f: impl FnMut(&EventGroup<'_>)) {
        let p = coef.len();
        let n = self.times.len();
        let shift = self.x.iter().map(|x| dot(coef, x)).fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![vec![0.0; p]; p];
        let add = |x: &[f64], s0: &mut f64, s1: &mut [f64], s2: &mut [Vec<f64>]| {
            let w = (dot(coef, x) - shift).exp();
            *s0 += w;
            for a in 0..p {
                s1[a] += w * x[a];
                for b in 0..p {
                    s2[a][b] += w * x[a] * x[b];
                }
            }
        };
        let mut end = n;
        while end > 0 {
            let t = self.times[end - 1];
            let mut start = end;
            while start > 0 && self.times[start - 1] == t {
                start -= 1;
            }
            // censorings at t are at risk; failures at t have already left
            let mut events = 0;
            let mut xsum = vec![0.0; p];
            for idx in start..end {
                if self.censored[idx] {
                    add(&self.x[idx], &mut s0, &mut s1, &mut s2);
                    events += 1;
                    for a in 0..p {
                        xsum[a] += self.x[idx][a];
                    }
                }
            }
            if events > 0 {
                f(&EventGroup {
                    time: t,
                    events,
                    xsum: &xsum,
                    s0,
                    s1: &s1,
                    s2: &s2,
                    shift,
                });
            }
            for idx in start..end {
                if !self.censored[idx] {
                    add(&self.x[idx], &mut s0, &mut s1, &mut s2);
                }
            }
            end = start;
        }
    }

    /// Log partial likelihood (Breslow ties), score and information.
    fn derivatives(&self, coef: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = coef.len();
        let mut ll = 0.0;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        self.for_each_event_group(coef, |g| {
            let d = g.events as f64;
            ll += dot(coef, g.xsum) - d * (g.s0.ln() + g.shift);
            for a in 0..p {
                let mean_a = g.s1[a] / g.s0;
                score[a] += g.xsum[a] - d * mean_a;
                for b in 0..p {
                    info[(a, b)] += d * (g.s2[a][b] / g.s0 - mean_a * g.s1[b] / g.s0);
                }
            }
        });
        (ll, score, info)
    }

    fn breslow(&self, coef: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut groups = Vec::new();
        self.for_each_event_group(coef, |g| {
            groups.push((g.time, g.events as f64 * (-g.shift).exp() / g.s0))
        });
        groups.reverse();
        let mut acc = 0.0;
        let times = groups.iter().map(|g| g.0).collect();
        let cum = groups
            .iter()
            .map(|g| {
                acc += g.1;
                acc
            })
            .collect();
        (times, cum)
    }
}

struct EventGroup<'a> {
    time: f64,
    events: usize,
    xsum: &'a [f64],
    s0: f64,
    s1: &'a [f64],
    s2: &'a [Vec<f64>],
    shift: f64,
}

/// Cox model for the censoring time with coefficients fixed at `coef` and a Breslow baseline.
pub fn cox_with_coefficients(arm: &Dataset, j: Outcome, coef: Vec<f64>) -> Result<CensoringModel> {
    if coef.len() != arm.p() {
        return Err(Error::Shape { expected: arm.p(), got: coef.len() });
    }
    let data = CoxData::new(arm, j);
    let (times, cum_hazard) = data.breslow(&coef);
    Ok(CensoringModel {
        fit: CensoringFit::CoxPh { coef, times, cum_hazard },
        floor: DEFAULT_FLOOR,
    })
}

pub fn fit_cox_censoring(arm: &Dataset, j: Outcome) -> Result<CensoringModel> {
    fit_cox_censoring_with(arm, j, CoxOptions::default())
}

/// Newton–Raphson maximization of the censoring-time partial likelihood.
pub fn fit_cox_censoring_with(arm: &Dataset, j: Outcome, opts: CoxOptions) -> Result<CensoringModel> {
    let p = arm.p();
    if arm.len() < p + 2 {
        return Err(Error::InsufficientData(format!(
            "Cox fit needs at least p + 2 = {} rows, got {}",
            p + 2,
            arm.len()
        )));
    }
    let data = CoxData::new(arm, j);
    if !data.censored.iter().any(|&c| c) {
        return cox_with_coefficients(arm, j, vec![0.0; p]);
    }
    let mut coef = vec![0.0; p];
    let (mut ll, mut score, mut info) = data.derivatives(&coef);
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let chol = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Rank(format!("outcome {j}: censoring information matrix is singular")))?;
        let step = chol.solve(&score);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + scale * s).collect();
            let (cll, cscore, cinfo) = data.derivatives(&cand);
            if cll.is_finite() && cll >= ll - 1e-12 {
                accepted = Some((cand, cll, cscore, cinfo));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, cll, cscore, cinfo)) = accepted else {
            return Err(Error::Convergence(format!("outcome {j}: step halving failed")));
        };
        let delta = (cll - ll).abs();
        let max_step = step.iter().map(|s| (s * scale).abs()).fold(0.0, f64::max);
        coef = cand;
        ll = cll;
        score = cscore;
        info = cinfo;
        if coef.iter().any(|c| c.abs() > 1e3) {
            return Err(Error::Convergence(format!("outcome {j}: coefficients diverging")));
        }
        if delta < opts.tol || max_step < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence(format!(
            "outcome {j}: no convergence after {} iterations",
            opts.max_iter
        )));
    }
    cox_with_coefficients(arm, j, coef)
}

/// Log partial likelihood of the censoring Cox model; exposed for diagnostics and tests.
pub fn cox_log_partial_likelihood(arm: &Dataset, j: Outcome, coef: &[f64]) -> f64 {
    CoxData::new(arm, j).derivatives(coef).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arm_from(rows: &[(f64, bool, f64)]) -> Dataset {
        let obs = rows
            .iter()
            .map(|&(y, d, x)| Observation {
                y1: y,
                y2: 1.0,
                delta1: d,
                delta2: true,
                x: vec![x],
                a: 0,
            })
            .collect();
        Dataset::new(obs, 1, 0).unwrap()
    }

    #[test]
    fn km_without_censoring_is_one() {
        let arm = arm_from(&[(1.0, true, 0.0), (2.0, true, 0.0), (5.0, true, 1.0)]);
        let m = fit_km_censoring(&arm, Outcome::First).unwrap();
        for t in [0.1, 1.0, 3.0, 100.0] {
            assert_eq!(eval_g(&m, t, &[0.0]), 1.0);
        }
    }

    #[test]
    fn km_hand_computed_product_limit() {
        // log times 1, 2, 3 with the first and last censored
        let e = std::f64::consts::E;
        let arm = arm_from(&[(e, false, 0.0), (e * e, true, 0.0), (e.powi(3), false, 0.0)]);
        let m = fit_km_censoring(&arm, Outcome::First).unwrap();
        let CensoringFit::KaplanMeier { times, surv } = &m.fit else { panic!() };
        assert_eq!(times.len(), 2);
        assert!((times[0] - 1.0).abs() < 1e-12 && (times[1] - 3.0).abs() < 1e-12);
        assert!((surv[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(eval_g(&m, (0.5f64).exp(), &[0.0]), 1.0);
        assert!((eval_g(&m, (2.0f64).exp(), &[0.0]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((eval_g(&m, (1.0f64).exp(), &[0.0]) - 2.0 / 3.0).abs() < 1e-15);
        // G hits zero after t = 3 and is floored
        assert_eq!(eval_g(&m, (3.5f64).exp(), &[0.0]), DEFAULT_FLOOR);
    }

    #[test]
    fn km_all_censored_is_degenerate() {
        let arm = arm_from(&[(1.0, false, 0.0), (2.0, false, 0.0)]);
        assert!(matches!(fit_km_censoring(&arm, Outcome::First), Err(Error::Degenerate(_))));
    }

    #[test]
    fn floor_clamps_exactly() {
        let m = CensoringModel {
            fit: CensoringFit::KaplanMeier { times: vec![0.0], surv: vec![0.001] },
            floor: 0.02,
        };
        assert_eq!(eval_g(&m, 5.0, &[]), 0.02);
    }

    fn toy_cox() -> Dataset {
        // censoring events (delta = false) with an interior partial-likelihood optimum
        arm_from(&[
            (1.0, false, 1.0),
            (2.0, false, 0.0),
            (3.0, false, 1.0),
            (4.0, false, 0.0),
            (2.5, true, 0.5),
        ])
    }

    #[test]
    fn cox_matches_grid_search() {
        let arm = toy_cox();
        let m = fit_cox_censoring(&arm, Outcome::First).unwrap();
        let CensoringFit::CoxPh { coef, .. } = &m.fit else { panic!() };
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut r = -5.0;
        while r <= 5.0 {
            let ll = cox_log_partial_likelihood(&arm, Outcome::First, &[r]);
            if ll > best.0 {
                best = (ll, r);
            }
            r += 1e-5;
        }
        assert!((coef[0] - best.1).abs() < 1e-4, "newton {} grid {}", coef[0], best.1);
    }

    #[test]
    fn cox_zero_coefficients_give_baseline() {
        let arm = toy_cox();
        let m = cox_with_coefficients(&arm, Outcome::First, vec![0.0]).unwrap();
        for t in [0.5, 1.5, 2.2, 3.3, 10.0] {
            let g0 = eval_g(&m, t, &[0.0]);
            assert_eq!(g0, eval_g(&m, t, &[7.0]));
        }
        // Nelson–Aalen with unit weights: first jump 1/5
        assert!((m.raw_log_scale(1.0f64.ln(), &[3.0]) - (-0.2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn cox_covariate_independent_censoring_has_small_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let obs: Vec<Observation> = (0..2000)
            .map(|_| {
                let x = vec![rng.gen_range(-2.8..2.8), rng.gen_range(-2.8..2.8)];
                let t: f64 = rng.gen_range(-3.0..3.0);
                let c: f64 = rng.gen_range(-2.0..4.0);
                Observation {
                    y1: t.min(c).exp(),
                    y2: 1.0,
                    delta1: t <= c,
                    delta2: true,
                    x,
                    a: 0,
                }
            })
            .collect();
        let arm = Dataset::new(obs, 2, 0).unwrap();
        let m = fit_cox_censoring(&arm, Outcome::First).unwrap();
        let CensoringFit::CoxPh { coef, .. } = &m.fit else { panic!() };
        assert!(coef.iter().all(|c| c.abs() < 0.1), "{coef:?}");
    }

    #[test]
    fn cox_too_small_arm() {
        let arm = arm_from(&[(1.0, false, 1.0), (2.0, true, 0.0)]);
        assert!(fit_cox_censoring(&arm, Outcome::First).is_err());
    }

    #[test]
    fn eval_is_non_increasing_for_both_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<Observation> = (0..300)
            .map(|_| {
                let x = vec![rng.gen_range(-1.0..1.0)];
                let t: f64 = rng.gen_range(-2.0..2.0) + x[0];
                let c: f64 = rng.gen_range(-2.0..3.0);
                Observation {
                    y1: t.min(c).exp(),
                    y2: 1.0,
                    delta1: t <= c,
                    delta2: true,
                    x,
                    a: 0,
                }
            })
            .collect();
        let arm = Dataset::new(obs, 1, 0).unwrap();
        for m in [fit_km_censoring(&arm, Outcome::First).unwrap(), fit_cox_censoring(&arm, Outcome::First).unwrap()] {
            for x in [-1.0, 0.0, 0.8] {
                let mut prev = 1.0;
                for k in 0..200 {
                    let t = (-3.0 + k as f64 * 0.035).exp();
                    let g = eval_g(&m, t, &[x]);
                    assert!(g <= prev + 1e-15 && g >= m.floor);
                    prev = g;
                }
            }
        }
    }
}
