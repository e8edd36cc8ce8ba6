//! IPCW-weighted random forest regression for the auxiliary predictor `f̂(x) ≈ E[log T | x]`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::censoring::CensoringSurvival;
use crate::data::{Dataset, Outcome};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// A fitted regression function of the covariates.
pub trait Regressor: Send + Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

impl<F> Regressor for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn predict(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features considered at each split.
    pub feature_subsample: f64,
    /// Resample rows with probability proportional to their weight for each tree.
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 6,
            min_leaf: 5,
            feature_subsample: 1.0,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// A tree with a single leaf.
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestPredictor {
    pub trees: Vec<RegressionTree>,
    pub params: ForestParams,
}

impl ForestPredictor {
    pub fn from_trees(trees: Vec<RegressionTree>, params: ForestParams) -> Self {
        ForestPredictor { trees, params }
    }
}

impl Regressor for ForestPredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        predict(self, x)
    }
}

/// Equal-weight average of the tree predictions.
pub fn predict(forest: &ForestPredictor, x: &[f64]) -> f64 {
    let total: f64 = forest.trees.iter().map(|t| t.predict(x)).sum();
    total / forest.trees.len() as f64
}

/// Fits the forest to IPCW weights `δ_j / Ĝ(y_j, x)` and responses `log y_j`.
pub fn fit_ipcw_forest(
    arm: &Dataset,
    j: Outcome,
    g: &dyn CensoringSurvival,
    params: &ForestParams,
) -> Result<ForestPredictor> {
    if !arm.iter().any(|o| o.delta(j)) {
        return Err(Error::Degenerate(format!("outcome {j}: no uncensored rows for the predictor")));
    }
    let x: Vec<&[f64]> = arm.iter().map(|o| o.x.as_slice()).collect();
    let y: Vec<f64> = arm.iter().map(|o| o.log_y(j)).collect();
    let w: Vec<f64> = arm
        .iter()
        .map(|o| if o.delta(j) { 1.0 / g.eval(o.y(j), &o.x) } else { 0.0 })
        .collect();
    fit_weighted_forest(&x, &y, &w, params)
}

/// Weighted random forest on arbitrary rows.
pub fn fit_weighted_forest(x: &[&[f64]], y: &[f64], w: &[f64], params: &ForestParams) -> Result<ForestPredictor> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(Error::Shape { expected: x.len(), got: y.len().min(w.len()) });
    }
    if params.n_trees == 0 || params.min_leaf == 0 {
        return Err(Error::Precondition("n_trees and min_leaf must be positive".into()));
    }
    let positive: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0 && w[i].is_finite()).collect();
    let total: f64 = positive.iter().map(|&i| w[i]).sum();
    if positive.is_empty() || !(total > 0.0) {
        return Err(Error::Degenerate("zero total weight".into()));
    }
    let p = x.first().map_or(0, |r| r.len());
    let cumulative: Vec<f64> = positive
        .iter()
        .scan(0.0, |acc, &i| {
            *acc += w[i];
            Some(*acc)
        })
        .collect();

    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let entries: Vec<(usize, f64)> = if params.bootstrap {
                (0..positive.len())
                    .map(|_| {
                        let u = rng.gen::<f64>() * total;
                        let k = cumulative.partition_point(|&c| c <= u).min(positive.len() - 1);
                        (positive[k], 1.0)
                    })
                    .collect()
            } else {
                positive.iter().map(|&i| (i, w[i])).collect()
            };
            let mut builder = TreeBuilder {
                x,
                y,
                p,
                params,
                rng: &mut rng,
                nodes: Vec::new(),
            };
            builder.build(entries, 0);
            RegressionTree { nodes: builder.nodes }
        })
        .collect();
    Ok(ForestPredictor { trees, params: *params })
}

struct TreeBuilder<'a, 'r> {
    x: &'a [&'a [f64]],
    y: &'a [f64],
    p: usize,
    params: &'a ForestParams,
    rng: &'r mut ChaCha8Rng,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_, '_> {
    fn build(&mut self, entries: Vec<(usize, f64)>, depth: usize) -> usize {
        let id = self.nodes.len();
        let (sw, swy) = entries.iter().fold((0.0, 0.0), |acc, &(i, w)| (acc.0 + w, acc.1 + w * self.y[i]));
        self.nodes.push(Node::Leaf { value: swy / sw });

        if depth >= self.params.max_depth || entries.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(&entries) else {
            return id;
        };
        let (left, right): (Vec<_>, Vec<_>) = entries
            .into_iter()
            .partition(|&(i, _)| self.x[i][split.feature] <= split.threshold);
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        id
    }

    fn best_split(&mut self, entries: &[(usize, f64)]) -> Option<SplitChoice> {
        let n_features = ((self.params.feature_subsample * self.p as f64).ceil() as usize).clamp(1, self.p);
        let mut features: Vec<usize> = if n_features == self.p {
            (0..self.p).collect()
        } else {
            sample(self.rng, self.p, n_features).into_vec()
        };
        features.sort_unstable();

        let min_leaf = self.params.min_leaf;
        let mut best: Option<SplitChoice> = None;
        let mut order: Vec<(f64, f64, f64)> = Vec::with_capacity(entries.len());
        for &f in &features {
            order.clear();
            order.extend(entries.iter().map(|&(i, w)| (self.x[i][f], self.y[i], w)));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (tw, twy, twyy) = order
                .iter()
                .fold((0.0, 0.0, 0.0), |s, &(_, y, w)| (s.0 + w, s.1 + w * y, s.2 + w * y * y));
            let parent_sse = twyy - twy * twy / tw;
            let (mut lw, mut lwy, mut lwyy) = (0.0, 0.0, 0.0);
            for k in 0..order.len() - 1 {
                let (v, y, w) = order[k];
                lw += w;
                lwy += w * y;
                lwyy += w * y * y;
                let next = order[k + 1].0;
                if next <= v || k + 1 < min_leaf || order.len() - k - 1 < min_leaf {
                    continue;
                }
                let (rw, rwy, rwyy) = (tw - lw, twy - lwy, twyy - lwyy);
                if lw <= 0.0 || rw <= 0.0 {
                    continue;
                }
                let sse = (lwyy - lwy * lwy / lw) + (rwyy - rwy * rwy / rw);
                let gain = parent_sse - sse;
                if gain > 1e-12 * parent_sse.abs().max(1e-300) && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        feature: f,
                        threshold: 0.5 * (v + next),
                        gain,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn constant_response_predicts_constant() {
        let x = rows(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let y = vec![3.0; 12];
        let w = vec![1.0; 12];
        let f = fit_weighted_forest(&xr, &y, &w, &ForestParams::default()).unwrap();
        for v in [-5.0, 0.5, 100.0] {
            assert!((predict(&f, &[v]) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_one_tree_reproduces_weighted_leaf_means() {
        let x = rows(&[0.0, 1.0, 10.0, 11.0]);
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let y = [1.0, 2.0, 10.0, 12.0];
        let w = [1.0, 3.0, 1.0, 1.0];
        let params = ForestParams {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            bootstrap: false,
            ..Default::default()
        };
        let f = fit_weighted_forest(&xr, &y, &w, &params).unwrap();
        // left: (1·1 + 3·2) / 4, right: (10 + 12) / 2
        assert!((predict(&f, &[0.5]) - 1.75).abs() < 1e-12);
        assert!((predict(&f, &[10.5]) - 11.0).abs() < 1e-12);
        assert_eq!(f.trees[0].n_leaves(), 2);
    }

    #[test]
    fn single_leaf_and_averaging() {
        let params = ForestParams::default();
        let one = ForestPredictor::from_trees(vec![RegressionTree::constant(4.5)], params);
        assert_eq!(predict(&one, &[1.0, 2.0]), 4.5);
        let two = ForestPredictor::from_trees(vec![RegressionTree::constant(1.0), RegressionTree::constant(3.0)], params);
        assert_eq!(predict(&two, &[0.0]), 2.0);
    }

    #[test]
    fn zero_weight_is_degenerate() {
        let x = rows(&[0.0, 1.0]);
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let r = fit_weighted_forest(&xr, &[1.0, 2.0], &[0.0, 0.0], &ForestParams::default());
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Vec<f64>> = (0..150).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let xr: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 - r[1] + rng.gen_range(-0.5..0.5)).collect();
        let w: Vec<f64> = (0..150).map(|_| rng.gen_range(0.0..3.0)).collect();
        let params = ForestParams { seed: 42, feature_subsample: 0.5, ..Default::default() };
        let a = fit_weighted_forest(&xr, &y, &w, &params).unwrap();
        let b = fit_weighted_forest(&xr, &y, &w, &params).unwrap();
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |s, &v| (s.0.min(v), s.1.max(v)));
        for q in [[-3.0, 3.0], [0.0, 0.0], [1.9, -1.2], [5.0, 5.0]] {
            let pa = predict(&a, &q);
            assert_eq!(pa.to_bits(), predict(&b, &q).to_bits());
            assert!(pa >= lo && pa <= hi);
        }
    }
}
