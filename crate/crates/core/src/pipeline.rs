//! End-to-end fitting: censoring weights, auxiliary predictors, marginal AFT models,
//! copulas, and the treatment policy.

use serde::{Deserialize, Serialize};

use crate::censoring::{fit_cox_censoring, fit_km_censoring, CensoringKind, CensoringModel, DEFAULT_FLOOR};
use crate::copula::{fit_theta, select_link_cv, ArmModel, CopulaFamily, JointModel};
use crate::data::{split_by_arm, Dataset, Outcome, WeightConfig};
use crate::error::{Error, Result};
use crate::forest::{fit_ipcw_forest, ForestParams};
use crate::marginal::{estimate_kappa, fit_marginal, MarginalFit};
use crate::policy::{decide, init_network, policy, train, PolicyNetwork, PolicySample, TrainConfig};
use crate::rng::{stream_seed, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub c: WeightConfig,
    pub censoring: CensoringKind,
    pub censoring_floor: f64,
    pub forest: ForestParams,
    pub copula_candidates: Vec<CopulaFamily>,
    pub cv_folds: usize,
    pub width: usize,
    pub train: TrainConfig,
    /// Target time pair `(t1*, t2*)`.
    pub target: (f64, f64),
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            c: WeightConfig::BASELINE,
            censoring: CensoringKind::KaplanMeier,
            censoring_floor: DEFAULT_FLOOR,
            forest: ForestParams::default(),
            copula_candidates: CopulaFamily::ALL.to_vec(),
            cv_folds: 5,
            width: 32,
            train: TrainConfig::default(),
            target: (1.0, 1.0),
            seed: 0,
        }
    }
}

/// Joint survival model and trained policy.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedModel {
    pub joint: JointModel,
    pub network: PolicyNetwork<f64>,
    pub target: (f64, f64),
    pub loss_trajectory: Vec<f64>,
}

impl FittedModel {
    pub fn decide(&self, x: &[f64]) -> usize {
        decide(&self.network, x)
    }

    pub fn policy(&self, x: &[f64]) -> Vec<f64> {
        policy(&self.network, x)
    }
}

fn fit_censoring(kind: CensoringKind, arm: &Dataset, j: Outcome, floor: f64) -> Result<CensoringModel> {
    let m = match kind {
        CensoringKind::KaplanMeier => fit_km_censoring(arm, j)?,
        CensoringKind::CoxPh => fit_cox_censoring(arm, j)?,
    };
    Ok(m.with_floor(floor))
}

/// Per-arm marginals and copula (phases 1 and 2).
pub fn fit_joint_model(d: &Dataset, cfg: &PipelineConfig) -> Result<JointModel> {
    if d.k() == 0 {
        return Err(Error::Precondition("a single arm leaves no treatment decision to learn".into()));
    }
    let mut arms = Vec::with_capacity(d.n_arms());
    for a in 0..d.n_arms() {
        let ctx = |j: Option<Outcome>| match j {
            Some(j) => format!("arm {a}, outcome {j}"),
            None => format!("arm {a}"),
        };
        let arm = split_by_arm(d, a).map_err(|e| e.context(ctx(None)))?;
        let kappa = estimate_kappa(d, a).map_err(|e| e.context(ctx(None)))?;
        let mut margins: Vec<(MarginalFit, CensoringModel)> = Vec::with_capacity(2);
        for j in Outcome::ALL {
            let fit = || -> Result<(MarginalFit, CensoringModel)> {
                let g = fit_censoring(cfg.censoring, &arm, j, cfg.censoring_floor)?;
                let params = ForestParams {
                    seed: stream_seed(cfg.seed, Stream::Forest, (2 * a + j.index()) as u64),
                    ..cfg.forest
                };
                let f = fit_ipcw_forest(&arm, j, &g, &params)?;
                let m = fit_marginal(d, &arm, j, a, &f, &g, &kappa, cfg.c)?;
                Ok((m, g))
            };
            margins.push(fit().map_err(|e| e.context(ctx(Some(j))))?);
        }
        let (m2, g2) = margins.pop().expect("two margins");
        let (m1, g1) = margins.pop().expect("two margins");
        let copula = (|| -> Result<_> {
            let seed = stream_seed(cfg.seed, Stream::CopulaFolds, a as u64);
            let fam = select_link_cv(&arm, &m1, &m2, &g1, &g2, &cfg.copula_candidates, cfg.cv_folds, seed)?;
            fit_theta(&arm, &m1, &m2, &g1, &g2, fam)
        })()
        .map_err(|e| e.context(format!("arm {a}, copula")))?;
        log::debug!("arm {a}: {} θ = {:.4}", copula.family, copula.theta);
        arms.push(ArmModel { first: m1, second: m2, copula });
    }
    JointModel::new(arms)
}

/// `Ŝ(t1*, t2*, x, a)` for every row and arm.
pub fn survival_matrix(joint: &JointModel, target: (f64, f64), xs: &[Vec<f64>]) -> Vec<PolicySample<f64>> {
    xs.iter()
        .map(|x| PolicySample {
            x: x.clone(),
            s: joint.survival_vector(target.0, target.1, x),
        })
        .collect()
}

/// Phase 3: trains the policy network on precomputed survival vectors.
pub fn train_policy(samples: &[PolicySample<f64>], p: usize, k: usize, cfg: &PipelineConfig) -> Result<(PolicyNetwork<f64>, Vec<f64>)> {
    let net = init_network(p, k, cfg.width, stream_seed(cfg.seed, Stream::NetworkInit, 0))?;
    let tc = TrainConfig {
        seed: stream_seed(cfg.seed, Stream::Training, 0),
        ..cfg.train
    };
    let out = train(net, samples, &tc)?;
    Ok((out.network, out.loss_trajectory))
}

/// Full fit on observed data.
pub fn fit_pipeline(d: &Dataset, cfg: &PipelineConfig) -> Result<FittedModel> {
    let joint = fit_joint_model(d, cfg)?;
    let samples = survival_matrix(&joint, cfg.target, &d.covariates());
    let (network, loss_trajectory) = train_policy(&samples, d.p(), d.k(), cfg).map_err(|e| e.context("policy"))?;
    Ok(FittedModel {
        joint,
        network,
        target: cfg.target,
        loss_trajectory,
    })
}
