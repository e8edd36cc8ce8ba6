//! Adaptive prediction-powered (APP) estimation of the lognormal AFT margins.
//!
//! For outcome `j` and arm `a` the estimating equation averages, over the full sample,
//!
//! ```text
//! ψ(β) = I(A=a)/κ · x δ/Ĝ(y,x) (log y − xᵀβ)
//!      + c1 I(A=a)/κ · x (f(x) − xᵀβ)
//!      + c2 I(A≠a)/(1−κ) · x (f(x) − xᵀβ)
//! ```
//!
//! which is linear in β, so the root is `β̂ = M⁻¹ v` with `M` and `v` the
//! corresponding averaged Gram matrix and moment vector.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::censoring::CensoringSurvival;
use crate::data::{Dataset, Observation, Outcome, WeightConfig};
use crate::error::{Error, Result};
use crate::forest::Regressor;
use crate::normal;
use crate::Scalar;

/// Condition number above which the estimating equation is treated as singular.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub outcome: Outcome,
    pub arm: usize,
    pub c: WeightConfig,
}

impl MarginalFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        dot(&self.beta, x)
    }

    /// `S_j(t | x)`.
    pub fn survival(&self, t: f64, x: &[f64]) -> f64 {
        marginal_survival(t, x, self)
    }

    /// Log density of the fitted lognormal at `t`.
    pub fn log_density(&self, t: f64, x: &[f64]) -> f64 {
        let z = (t.ln() - self.linear_predictor(x)) / self.gamma;
        -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - self.gamma.ln() - t.ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmProbability {
    pub kappa: f64,
    pub arm: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Empirical frequency `n_a / n` of arm `a`.
pub fn estimate_kappa(d: &Dataset, a: usize) -> Result<ArmProbability> {
    let n = d.len();
    let n_a = d.iter().filter(|o| o.a == a).count();
    if n_a == 0 || n_a == n {
        return Err(Error::Positivity { arm: a, n_a, n });
    }
    Ok(ArmProbability {
        kappa: n_a as f64 / n as f64,
        arm: a,
    })
}

/// Score contribution of a single observation.
#[allow(clippy::too_many_arguments)]
pub fn app_score(
    beta: &[f64],
    f: &dyn Regressor,
    g: &dyn CensoringSurvival,
    kappa: f64,
    obs: &Observation,
    j: Outcome,
    a: usize,
    c: WeightConfig,
) -> Vec<f64> {
    let x = &obs.x;
    let fitted = dot(beta, x);
    let mut scale = 0.0;
    if obs.a == a {
        if obs.delta(j) {
            scale += (obs.log_y(j) - fitted) / (g.eval(obs.y(j), x) * kappa);
        }
        if c.c1 != 0.0 {
            scale += c.c1 * (f.predict(x) - fitted) / kappa;
        }
    } else if c.c2 != 0.0 {
        scale += c.c2 * (f.predict(x) - fitted) / (1.0 - kappa);
    }
    x.iter().map(|v| v * scale).collect()
}

/// `(1/n) Σ ψ(β; O_i)` over the full dataset.
#[allow(clippy::too_many_arguments)]
pub fn averaged_app_score(
    beta: &[f64],
    d: &Dataset,
    j: Outcome,
    a: usize,
    f: &dyn Regressor,
    g: &dyn CensoringSurvival,
    kappa: f64,
    c: WeightConfig,
) -> Vec<f64> {
    let mut total = vec![0.0; d.p()];
    for o in d.iter() {
        for (t, s) in total.iter_mut().zip(app_score(beta, f, g, kappa, o, j, a, c)) {
            *t += s;
        }
    }
    let n = d.len() as f64;
    total.iter().map(|t| t / n).collect()
}

/// Averaged Gram matrix `M` and moment vector `v` of the estimating equation.
pub fn app_normal_equations(
    d: &Dataset,
    j: Outcome,
    a: usize,
    f: &dyn Regressor,
    g: &dyn CensoringSurvival,
    kappa: f64,
    c: WeightConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = d.p();
    let mut m = DMatrix::zeros(p, p);
    let mut v = DVector::zeros(p);
    for o in d.iter() {
        let x = &o.x;
        // ψ = x (r - xᵀβ) · weight, summing weight into M and weight·r into v
        let mut push = |weight: f64, response: f64| {
            for r in 0..p {
                v[r] += weight * x[r] * response;
                for s in 0..p {
                    m[(r, s)] += weight * x[r] * x[s];
                }
            }
        };
        if o.a == a {
            if o.delta(j) {
                push(1.0 / (g.eval(o.y(j), x) * kappa), o.log_y(j));
            }
            if c.c1 != 0.0 {
                push(c.c1 / kappa, f.predict(x));
            }
        } else if c.c2 != 0.0 {
            push(c.c2 / (1.0 - kappa), f.predict(x));
        }
    }
    let n = d.len() as f64;
    (m / n, v / n)
}

/// Root of the APP estimating equation via a rank-revealing (SVD) solve.
pub fn solve_app_beta(
    d: &Dataset,
    j: Outcome,
    a: usize,
    f: &dyn Regressor,
    g: &dyn CensoringSurvival,
    kappa: &ArmProbability,
    c: WeightConfig,
) -> Result<Vec<f64>> {
    if !(kappa.kappa > 0.0 && kappa.kappa < 1.0) {
        return Err(Error::Precondition(format!("kappa must lie in (0, 1), got {}", kappa.kappa)));
    }
    let (m, v) = app_normal_equations(d, j, a, f, g, kappa.kappa, c);
    let singular = |reason: String| Error::Singular { c1: c.c1, c2: c.c2, reason };
    let svd = m.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || !smax.is_finite() || smax / smin > MAX_CONDITION {
        return Err(singular(format!("condition number {:.3e} exceeds {MAX_CONDITION:.0e}", smax / smin)));
    }
    let beta = svd.solve(&v, 0.0).map_err(|e| singular(e.to_string()))?;
    Ok(beta.iter().copied().collect())
}

/// Weight-normalized root-mean-square IPCW residual over the arm.
pub fn estimate_gamma(arm: &Dataset, j: Outcome, beta: &[f64], g: &dyn CensoringSurvival) -> Result<f64> {
    let (mut sw, mut swr) = (0.0, 0.0);
    for o in arm.iter().filter(|o| o.delta(j)) {
        let w = 1.0 / g.eval(o.y(j), &o.x);
        let r = o.log_y(j) - dot(beta, &o.x);
        sw += w;
        swr += w * r * r;
    }
    if !(sw > 0.0) {
        return Err(Error::Degenerate(format!("outcome {j}: zero total IPCW weight")));
    }
    let gamma = (swr / sw).sqrt();
    if gamma == 0.0 {
        log::warn!("outcome {j}: residual scale estimate is exactly zero");
    }
    Ok(gamma)
}

/// Solves for β̂ on the full data and γ̂ on arm `a`.
#[allow(clippy::too_many_arguments)]
pub fn fit_marginal(
    d: &Dataset,
    arm: &Dataset,
    j: Outcome,
    a: usize,
    f: &dyn Regressor,
    g: &dyn CensoringSurvival,
    kappa: &ArmProbability,
    c: WeightConfig,
) -> Result<MarginalFit> {
    let beta = solve_app_beta(d, j, a, f, g, kappa, c)?;
    let gamma = estimate_gamma(arm, j, &beta, g)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Degenerate(format!("outcome {j}, arm {a}: scale estimate {gamma}")));
    }
    Ok(MarginalFit {
        beta,
        gamma,
        outcome: j,
        arm: a,
        c,
    })
}

/// Lognormal survival `1 − Φ((log t − μ)/γ)` from the log time and linear predictor.
pub fn lognormal_survival<T: Scalar>(log_t: T, mean: T, gamma: T) -> T {
    normal::sf((log_t - mean) / gamma)
}

/// `S_j(t | x) = 1 − Φ((log t − xᵀβ)/γ)`.
pub fn marginal_survival(t: f64, x: &[f64], fit: &MarginalFit) -> f64 {
    lognormal_survival(t.ln(), fit.linear_predictor(x), fit.gamma)
}
