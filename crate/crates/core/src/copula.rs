//! Copula links between the two marginal survival functions.
//!
//! `S(t1, t2 | x) = L(S1(t1 | x), S2(t2 | x); θ)` with `L` one of the Clayton, Gumbel or
//! Frank copulas. The dependence parameter is fit per arm by maximizing the IPCW-weighted
//! pseudo-log-likelihood of the doubly-uncensored rows; the family is chosen by k-fold
//! cross-validation of the same criterion.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::censoring::CensoringSurvival;
use crate::data::{Dataset, Outcome};
use crate::error::{Error, Result};
use crate::marginal::MarginalFit;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CopulaFamily {
    Clayton,
    Gumbel,
    Frank,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 3] = [CopulaFamily::Clayton, CopulaFamily::Gumbel, CopulaFamily::Frank];

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Frank => "frank",
        }
    }

    pub fn check_theta<T: Scalar>(self, theta: T) -> Result<()> {
        let ok = theta.is_finite()
            && match self {
                CopulaFamily::Clayton => theta > T::zero(),
                CopulaFamily::Gumbel => theta >= T::one(),
                CopulaFamily::Frank => theta != T::zero(),
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{} copula does not admit θ = {:?}", self.name(), theta)))
        }
    }

    /// Search bracket for θ.
    pub fn bracket(self) -> (f64, f64) {
        match self {
            CopulaFamily::Clayton => (1e-3, 50.0),
            CopulaFamily::Gumbel => (1.0 + 1e-6, 50.0),
            CopulaFamily::Frank => (-50.0, 50.0),
        }
    }

    // The optimizer works on φ: log θ for Clayton, log(θ − 1) for Gumbel, θ for Frank.
    fn to_search(self, theta: f64) -> f64 {
        match self {
            CopulaFamily::Clayton => theta.ln(),
            CopulaFamily::Gumbel => (theta - 1.0).ln(),
            CopulaFamily::Frank => theta,
        }
    }

    fn from_search(self, phi: f64) -> f64 {
        match self {
            CopulaFamily::Clayton => phi.exp(),
            CopulaFamily::Gumbel => 1.0 + phi.exp(),
            CopulaFamily::Frank => phi,
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "clayton" => Ok(CopulaFamily::Clayton),
            "gumbel" => Ok(CopulaFamily::Gumbel),
            "frank" => Ok(CopulaFamily::Frank),
            other => Err(Error::Validation(format!("unknown copula family `{other}`"))),
        }
    }
}

fn check_unit<T: Scalar>(u: T, v: T) -> Result<()> {
    let open = |w: T| w > T::zero() && w < T::one();
    if open(u) && open(v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("copula arguments must lie in (0, 1), got ({u:?}, {v:?})")))
    }
}

/// `ln(u^{−θ} + v^{−θ} − 1)` without overflow.
fn clayton_log_sum<T: Scalar>(u: T, v: T, theta: T) -> T {
    let a = -theta * u.ln();
    let b = -theta * v.ln();
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
}

/// Copula value on the closed unit square, used where margins may round to 0 or 1.
pub fn link_value<T: Scalar>(fam: CopulaFamily, u: T, v: T, theta: T) -> T {
    let (zero, one) = (T::zero(), T::one());
    let u = u.max(zero).min(one);
    let v = v.max(zero).min(one);
    if u == zero || v == zero {
        return zero;
    }
    if u == one {
        return v;
    }
    if v == one {
        return u;
    }
    match fam {
        CopulaFamily::Clayton => (-clayton_log_sum(u, v, theta) / theta).exp(),
        CopulaFamily::Gumbel => {
            let a = (-u.ln()).powf(theta) + (-v.ln()).powf(theta);
            (-a.powf(one / theta)).exp()
        }
        CopulaFamily::Frank => {
            if theta.abs() < T::c(1e-6) {
                return u * v;
            }
            let num = (-theta * u).exp_m1() * (-theta * v).exp_m1();
            let den = (-theta).exp_m1();
            -(num / den).ln_1p() / theta
        }
    }
}

/// Joint survival probability `L(u, v; θ)` for `u, v ∈ (0, 1)`.
pub fn link_eval<T: Scalar>(fam: CopulaFamily, u: T, v: T, theta: T) -> Result<T> {
    check_unit(u, v)?;
    fam.check_theta(theta)?;
    Ok(link_value(fam, u, v, theta))
}

fn log_density_unchecked<T: Scalar>(fam: CopulaFamily, u: T, v: T, theta: T) -> T {
    let one = T::one();
    let two = T::c(2.0);
    match fam {
        CopulaFamily::Clayton => {
            (one + theta).ln() - (theta + one) * (u.ln() + v.ln()) - (one / theta + two) * clayton_log_sum(u, v, theta)
        }
        CopulaFamily::Gumbel => {
            let lx = -u.ln();
            let ly = -v.ln();
            let a = lx.powf(theta) + ly.powf(theta);
            let a_inv = a.powf(one / theta);
            -a_inv + (theta - one) * (lx.ln() + ly.ln()) + lx + ly + (two / theta - two) * a.ln()
                + ((theta - one) / a_inv).ln_1p()
        }
        CopulaFamily::Frank => {
            if theta.abs() < T::c(1e-6) {
                return T::zero();
            }
            let a = -(-theta).exp_m1();
            let du = -(-theta * u).exp_m1();
            let dv = -(-theta * v).exp_m1();
            let den = a - du * dv;
            (theta * a).ln() - theta * (u + v) - two * den.abs().ln()
        }
    }
}

/// Log of the copula density `∂²L/∂u∂v`.
pub fn copula_log_density<T: Scalar>(fam: CopulaFamily, u: T, v: T, theta: T) -> Result<T> {
    check_unit(u, v)?;
    fam.check_theta(theta)?;
    Ok(log_density_unchecked(fam, u, v, theta))
}

/// Copula density `c_θ(u, v) = ∂²L/∂u∂v`.
pub fn copula_density<T: Scalar>(fam: CopulaFamily, u: T, v: T, theta: T) -> Result<T> {
    copula_log_density(fam, u, v, theta).map(|l| l.exp())
}

/// Kendall's τ implied by a Clayton θ.
pub fn clayton_kendall_tau(theta: f64) -> f64 {
    theta / (theta + 2.0)
}

/// Draws the second coordinate of a Clayton pair given the first (`u`) and an
/// independent uniform `w`, by inverting the conditional distribution `∂C/∂u`.
pub fn clayton_conditional_inverse(u: f64, w: f64, theta: f64) -> f64 {
    let inner = u.powf(-theta) * (w.powf(-theta / (1.0 + theta)) - 1.0) + 1.0;
    inner.powf(-1.0 / theta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopulaFit {
    pub family: CopulaFamily,
    pub theta: f64,
    pub arm: usize,
    /// Weighted negative pseudo-log-likelihood including the θ-free marginal density terms.
    pub neg_loglik: f64,
    #[serde(default)]
    pub at_boundary: bool,
}

/// Per-arm fitted parameters: both margins and the copula.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub first: MarginalFit,
    pub second: MarginalFit,
    pub copula: CopulaFit,
}

impl ArmModel {
    pub fn survival(&self, t1: f64, t2: f64, x: &[f64]) -> f64 {
        joint_survival(t1, t2, x, &self.first, &self.second, &self.copula)
    }
}

/// Estimated joint survival surface for every arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub arms: Vec<ArmModel>,
}

impl JointModel {
    pub fn new(arms: Vec<ArmModel>) -> Result<Self> {
        for (a, m) in arms.iter().enumerate() {
            if m.first.arm != a || m.second.arm != a || m.copula.arm != a {
                return Err(Error::Validation(format!("arm model {a} is out of order")));
            }
        }
        if arms.is_empty() {
            return Err(Error::Validation("joint model needs at least one arm".into()));
        }
        Ok(JointModel { arms })
    }

    pub fn n_arms(&self) -> usize {
        self.arms.len()
    }

    /// `(S(t1, t2, x, a))_{a = 0..K}`.
    pub fn survival_vector(&self, t1: f64, t2: f64, x: &[f64]) -> Vec<f64> {
        self.arms.iter().map(|m| m.survival(t1, t2, x)).collect()
    }
}

/// `L(S1(t1 | x), S2(t2 | x); θ)`.
pub fn joint_survival(t1: f64, t2: f64, x: &[f64], m1: &MarginalFit, m2: &MarginalFit, cf: &CopulaFit) -> f64 {
    link_value(cf.family, m1.survival(t1, x), m2.survival(t2, x), cf.theta)
}

const UNIT_EPS: f64 = 1e-12;

/// Doubly-uncensored rows with their IPCW weights and margins, precomputed once per arm.
#[derive(Clone, Debug)]
struct PseudoData {
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
    /// θ-free marginal log-density sum for each row.
    log_margin: Vec<f64>,
}

impl PseudoData {
    fn new(
        arm: &Dataset,
        m1: &MarginalFit,
        m2: &MarginalFit,
        g1: &dyn CensoringSurvival,
        g2: &dyn CensoringSurvival,
    ) -> Self {
        let mut data = PseudoData {
            u: Vec::new(),
            v: Vec::new(),
            w: Vec::new(),
            log_margin: Vec::new(),
        };
        for o in arm.iter().filter(|o| o.both_observed()) {
            let (y1, y2) = (o.y(Outcome::First), o.y(Outcome::Second));
            data.w.push(1.0 / (g1.eval(y1, &o.x) * g2.eval(y2, &o.x)));
            data.u.push(m1.survival(y1, &o.x).clamp(UNIT_EPS, 1.0 - UNIT_EPS));
            data.v.push(m2.survival(y2, &o.x).clamp(UNIT_EPS, 1.0 - UNIT_EPS));
            data.log_margin.push(m1.log_density(y1, &o.x) + m2.log_density(y2, &o.x));
        }
        data
    }

    fn len(&self) -> usize {
        self.w.len()
    }

    /// `−Σ w log c_θ` over the rows in `idx`.
    fn objective(&self, fam: CopulaFamily, theta: f64, idx: &[usize]) -> f64 {
        -idx
            .iter()
            .map(|&i| self.w[i] * log_density_unchecked(fam, self.u[i], self.v[i], theta))
            .sum::<f64>()
    }

    fn neg_loglik(&self, fam: CopulaFamily, theta: f64, idx: &[usize]) -> f64 {
        self.objective(fam, theta, idx) - idx.iter().map(|&i| self.w[i] * self.log_margin[i]).sum::<f64>()
    }
}

/// Outcome of a one-dimensional θ search.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaSearch {
    pub theta: f64,
    pub objective: f64,
    pub at_boundary: bool,
    /// Best objective value after the grid and after each golden-section iteration.
    pub trace: Vec<f64>,
}

const GRID_POINTS: usize = 41;
const GOLDEN_TOL: f64 = 1e-9;

fn search_theta(fam: CopulaFamily, objective: impl Fn(f64) -> f64) -> ThetaSearch {
    let (lo_t, hi_t) = fam.bracket();
    let (lo, hi) = (fam.to_search(lo_t), fam.to_search(hi_t));
    let eval = |phi: f64| {
        let v = objective(fam.from_search(phi));
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    // coarse grid locates the basin
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..GRID_POINTS)
        .map(|k| {
            let phi = if k == GRID_POINTS - 1 { hi } else { lo + step * k as f64 };
            (phi, eval(phi))
        })
        .collect();
    let k_best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let mut best = grid[k_best];
    let mut trace = vec![best.1];

    // golden-section on the neighbouring cells
    let mut a = grid[k_best.saturating_sub(1)].0;
    let mut b = grid[(k_best + 1).min(GRID_POINTS - 1)].0;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    while (b - a).abs() > GOLDEN_TOL * (1.0 + a.abs().max(b.abs())) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
        for cand in [(c, fc), (d, fd)] {
            if cand.1 < best.1 {
                best = cand;
            }
        }
        trace.push(best.1);
    }

    // one parabolic (Brent) step through the final three points
    let (x0, x1, x2) = (a, best.0, b);
    let (f0, f1, f2) = (eval(x0), best.1, eval(x2));
    let denom = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0);
    if denom.abs() > f64::EPSILON {
        let num = (x1 - x0).powi(2) * (f1 - f2) - (x1 - x2).powi(2) * (f1 - f0);
        let cand = x1 - 0.5 * num / denom;
        if cand > lo && cand < hi {
            let fc = eval(cand);
            if fc < best.1 {
                best = (cand, fc);
            }
        }
    }
    for (x, f) in [(x0, f0), (x2, f2)] {
        if f < best.1 {
            best = (x, f);
        }
    }

    let edge_tol = 1e-6 * (hi - lo);
    let at_boundary = (best.0 - lo).abs() < edge_tol || (hi - best.0).abs() < edge_tol;
    ThetaSearch {
        theta: fam.from_search(best.0),
        objective: best.1,
        at_boundary,
        trace,
    }
}

fn fit_pseudo(data: &PseudoData, fam: CopulaFamily, arm: usize, idx: &[usize]) -> Result<CopulaFit> {
    if idx.is_empty() {
        return Err(Error::InsufficientData(format!("arm {arm}: no doubly-uncensored rows for the copula fit")));
    }
    let search = search_theta(fam, |theta| data.objective(fam, theta, idx));
    if search.at_boundary {
        log::warn!("arm {arm}: {fam} θ̂ = {} at the search bracket edge", search.theta);
    }
    Ok(CopulaFit {
        family: fam,
        theta: search.theta,
        arm,
        neg_loglik: data.neg_loglik(fam, search.theta, idx),
        at_boundary: search.at_boundary,
    })
}

/// Maximizes the IPCW-weighted copula pseudo-log-likelihood over θ for one family.
pub fn fit_theta(
    arm: &Dataset,
    m1: &MarginalFit,
    m2: &MarginalFit,
    g1: &dyn CensoringSurvival,
    g2: &dyn CensoringSurvival,
    fam: CopulaFamily,
) -> Result<CopulaFit> {
    let a = m1.arm;
    let data = PseudoData::new(arm, m1, m2, g1, g2);
    let idx: Vec<usize> = (0..data.len()).collect();
    fit_pseudo(&data, fam, a, &idx)
}

/// Like [`fit_theta`] but also returns the optimizer trace.
pub fn fit_theta_traced(
    arm: &Dataset,
    m1: &MarginalFit,
    m2: &MarginalFit,
    g1: &dyn CensoringSurvival,
    g2: &dyn CensoringSurvival,
    fam: CopulaFamily,
) -> Result<ThetaSearch> {
    let data = PseudoData::new(arm, m1, m2, g1, g2);
    if data.len() == 0 {
        return Err(Error::InsufficientData("no doubly-uncensored rows".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(search_theta(fam, |theta| data.objective(fam, theta, &idx)))
}

/// Cross-validation scores of each candidate family, in candidate order.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_links(
    arm: &Dataset,
    m1: &MarginalFit,
    m2: &MarginalFit,
    g1: &dyn CensoringSurvival,
    g2: &dyn CensoringSurvival,
    candidates: &[CopulaFamily],
    folds: usize,
    seed: u64,
) -> Result<Vec<(CopulaFamily, f64)>> {
    if folds < 2 {
        return Err(Error::Precondition(format!("need at least 2 folds, got {folds}")));
    }
    let data = PseudoData::new(arm, m1, m2, g1, g2);
    if data.len() < folds {
        return Err(Error::InsufficientData(format!(
            "arm {}: {} doubly-uncensored rows cannot fill {folds} folds",
            m1.arm,
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<(usize, usize)> = order.iter().enumerate().map(|(pos, &i)| (i, pos % folds)).collect();

    candidates
        .iter()
        .map(|&fam| {
            let mut total = 0.0;
            for k in 0..folds {
                let train: Vec<usize> = fold_of.iter().filter(|r| r.1 != k).map(|r| r.0).collect();
                let test: Vec<usize> = fold_of.iter().filter(|r| r.1 == k).map(|r| r.0).collect();
                let fit = fit_pseudo(&data, fam, m1.arm, &train).map_err(|e| e.context(format!("{fam} fold {k}")))?;
                total += data.neg_loglik(fam, fit.theta, &test);
            }
            Ok((fam, total / folds as f64))
        })
        .collect()
}

/// Family with the lowest mean held-out negative pseudo-log-likelihood; ties go to the earlier candidate.
#[allow(clippy::too_many_arguments)]
pub fn select_link_cv(
    arm: &Dataset,
    m1: &MarginalFit,
    m2: &MarginalFit,
    g1: &dyn CensoringSurvival,
    g2: &dyn CensoringSurvival,
    candidates: &[CopulaFamily],
    folds: usize,
    seed: u64,
) -> Result<CopulaFamily> {
    match candidates {
        [] => Err(Error::Precondition("no candidate copula families".into())),
        [only] => Ok(*only),
        _ => {
            let scores = cross_validate_links(arm, m1, m2, g1, g2, candidates, folds, seed)?;
            let mut best = scores[0];
            for &s in &scores[1..] {
                if s.1 < best.1 {
                    best = s;
                }
            }
            Ok(best.0)
        }
    }
}
