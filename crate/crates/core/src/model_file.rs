//! Versioned JSON model file holding the joint survival model and the policy network.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copula::{ArmModel, CopulaFamily, CopulaFit, JointModel};
use crate::data::{Outcome, WeightConfig};
use crate::error::{Error, Result};
use crate::marginal::MarginalFit;
use crate::pipeline::FittedModel;
use crate::policy::PolicyNetwork;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalRecord {
    pub arm: usize,
    pub outcome: usize,
    pub beta: Vec<f64>,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CopulaRecord {
    pub arm: usize,
    pub family: CopulaFamily,
    pub theta: f64,
    pub neg_loglik: f64,
    pub at_boundary: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecord {
    pub dims: Vec<usize>,
    /// Layer by layer: row-major weights, then biases.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub p: usize,
    pub k: usize,
    pub target: [f64; 2],
    pub marginals: Vec<MarginalRecord>,
    pub copulas: Vec<CopulaRecord>,
    pub network: NetworkRecord,
}

impl ModelFile {
    pub fn from_model(m: &FittedModel) -> Self {
        let mut marginals = Vec::new();
        let mut copulas = Vec::new();
        for arm in &m.joint.arms {
            for fit in [&arm.first, &arm.second] {
                marginals.push(MarginalRecord {
                    arm: fit.arm,
                    outcome: fit.outcome.number(),
                    beta: fit.beta.clone(),
                    gamma: fit.gamma,
                    c1: fit.c.c1,
                    c2: fit.c.c2,
                });
            }
            copulas.push(CopulaRecord {
                arm: arm.copula.arm,
                family: arm.copula.family,
                theta: arm.copula.theta,
                neg_loglik: arm.copula.neg_loglik,
                at_boundary: arm.copula.at_boundary,
            });
        }
        ModelFile {
            version: MODEL_VERSION,
            p: m.network.input_dim(),
            k: m.joint.n_arms() - 1,
            target: [m.target.0, m.target.1],
            marginals,
            copulas,
            network: NetworkRecord {
                dims: m.network.dims(),
                weights: m.network.to_flat(),
            },
        }
    }

    pub fn into_model(self) -> Result<FittedModel> {
        let bad = |msg: String| Error::ModelFile(msg);
        if self.version != MODEL_VERSION {
            return Err(bad(format!("unsupported model version {} (expected {MODEL_VERSION})", self.version)));
        }
        let n_arms = self.k + 1;
        let marginal = |a: usize, j: Outcome| -> Result<MarginalFit> {
            let r = self
                .marginals
                .iter()
                .find(|r| r.arm == a && r.outcome == j.number())
                .ok_or_else(|| bad(format!("missing marginal for arm {a}, outcome {j}")))?;
            if r.beta.len() != self.p {
                return Err(bad(format!("arm {a}, outcome {j}: beta has {} entries, expected {}", r.beta.len(), self.p)));
            }
            Ok(MarginalFit {
                beta: r.beta.clone(),
                gamma: r.gamma,
                outcome: j,
                arm: a,
                c: WeightConfig::new(r.c1, r.c2)?,
            })
        };
        let mut arms = Vec::with_capacity(n_arms);
        for a in 0..n_arms {
            let c = self
                .copulas
                .iter()
                .find(|c| c.arm == a)
                .ok_or_else(|| bad(format!("missing copula for arm {a}")))?;
            c.family.check_theta(c.theta).map_err(|e| e.context(format!("arm {a} copula")))?;
            arms.push(ArmModel {
                first: marginal(a, Outcome::First)?,
                second: marginal(a, Outcome::Second)?,
                copula: CopulaFit {
                    family: c.family,
                    theta: c.theta,
                    arm: a,
                    neg_loglik: c.neg_loglik,
                    at_boundary: c.at_boundary,
                },
            });
        }
        let network = PolicyNetwork::from_flat(&self.network.dims, &self.network.weights)
            .map_err(|e| bad(format!("network: {e}")))?;
        if network.input_dim() != self.p || network.n_actions() != n_arms {
            return Err(bad(format!("network dims {:?} do not match p = {}, K = {}", self.network.dims, self.p, self.k)));
        }
        Ok(FittedModel {
            joint: JointModel::new(arms)?,
            network,
            target: (self.target[0], self.target[1]),
            loss_trajectory: Vec::new(),
        })
    }
}

pub fn write_model<W: Write>(m: &FittedModel, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, &ModelFile::from_model(m)).map_err(|e| Error::ModelFile(e.to_string()))
}

pub fn read_model<R: Read>(r: R) -> Result<FittedModel> {
    let file: ModelFile = serde_json::from_reader(r).map_err(|e| Error::ModelFile(e.to_string()))?;
    file.into_model()
}

pub fn save_model(m: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_model(m, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}
