//! Gradient-boosted decision trees for binary classification, plus a
//! logistic-regression comparator.
//!
//! Boosting minimizes log-loss with second-order (Newton) leaf values
//! `-G / (H + lambda)`. Each tree is grown leaf-wise with exact split search
//! on a row bag and a per-tree feature sample. Training stops once the
//! validation AUC has not improved for `early_stopping_rounds` iterations,
//! and the model keeps the trees up to the best iteration (the first one
//! reaching the maximum).

mod linear;
mod tree;

pub use linear::{
    linear_gradient, linear_objective, train_linear_baseline, LinearModel,
};
pub use tree::{Node, Tree};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::roc_auc;
use crate::seeds;
use tree::{grow_tree, GrowParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub num_iterations: usize,
    /// 0 disables early stopping; every tree is kept.
    pub early_stopping_rounds: usize,
    /// Fraction of rows bagged per tree; 1.0 disables bagging.
    pub row_subsample: f64,
    /// Fraction of features sampled per tree.
    pub feature_subsample: f64,
    /// Redraw the row bag every this many iterations; 0 disables bagging.
    pub subsample_freq: usize,
    pub num_leaves: usize,
    pub min_leaf_samples: usize,
    pub min_sum_hessian: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.02,
            num_iterations: 10_000,
            early_stopping_rounds: 1000,
            row_subsample: 0.68,
            feature_subsample: 0.28,
            subsample_freq: 1,
            num_leaves: 31,
            min_leaf_samples: 20,
            min_sum_hessian: 1e-3,
            lambda: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with a shorter iteration budget for small corpora.
    pub fn desk() -> Self {
        TrainConfig {
            num_iterations: 500,
            early_stopping_rounds: 50,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !frac(self.learning_rate) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !frac(self.row_subsample) || !frac(self.feature_subsample) {
            return Err(Error::InvalidConfig("subsample fractions must lie in (0, 1]".into()));
        }
        if self.num_leaves < 2 {
            return Err(Error::InvalidConfig("num_leaves must be at least 2".into()));
        }
        if self.lambda < 0.0 || self.min_sum_hessian < 0.0 {
            return Err(Error::InvalidConfig("lambda and min_sum_hessian must be >= 0".into()));
        }
        Ok(())
    }

    fn grow_params(&self) -> GrowParams {
        GrowParams {
            max_leaves: self.num_leaves,
            min_leaf_samples: self.min_leaf_samples.max(1),
            min_sum_hessian: self.min_sum_hessian,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub trees: Vec<Tree>,
    /// Log-odds of the training prior.
    pub base_score: f64,
    pub learning_rate: f64,
    /// Number of leading trees used for prediction.
    pub best_iteration: usize,
    pub num_features: usize,
}

/// Per-iteration record of a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    /// Validation metric after each iteration (AUC, or negative log-loss when
    /// the validation labels hold a single class).
    pub valid_metric: Vec<f64>,
    /// Full training-set log-loss after each iteration.
    pub train_loss: Vec<f64>,
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Keeps probabilities strictly inside (0, 1).
const PROB_CLAMP: f64 = 1e-15;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

pub(crate) fn log_loss(scores: &[f64], y: &[bool]) -> f64 {
    let n = y.len() as f64;
    scores
        .iter()
        .zip(y)
        .map(|(&s, &l)| {
            let p = clamp_prob(sigmoid(s));
            if l {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

fn check_xy(x: &Matrix, y: &[bool], what: &str) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {} rows, {} labels",
            x.rows(),
            y.len()
        )));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite(format!("{what} features")));
    }
    Ok(())
}

fn sample_sorted(rng: &mut rand_chacha::ChaCha8Rng, n: usize, frac: f64) -> Vec<usize> {
    let k = ((frac * n as f64).round() as usize).clamp(1, n);
    if k == n {
        return (0..n).collect();
    }
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

pub fn train(
    x_train: &Matrix,
    y_train: &[bool],
    x_valid: &Matrix,
    y_valid: &[bool],
    config: &TrainConfig,
) -> Result<BoostedModel> {
    train_with_trace(x_train, y_train, x_valid, y_valid, config).map(|(m, _)| m)
}

pub fn train_with_trace(
    x_train: &Matrix,
    y_train: &[bool],
    x_valid: &Matrix,
    y_valid: &[bool],
    config: &TrainConfig,
) -> Result<(BoostedModel, TrainTrace)> {
    config.validate()?;
    check_xy(x_train, y_train, "training")?;
    check_xy(x_valid, y_valid, "validation")?;
    if y_valid.is_empty() {
        return Err(Error::InvalidConfig("validation set is empty".into()));
    }
    if x_valid.cols() != x_train.cols() {
        return Err(Error::ShapeMismatch(format!(
            "validation has {} features, training has {}",
            x_valid.cols(),
            x_train.cols()
        )));
    }
    let n = y_train.len();
    let n_pos = y_train.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass);
    }
    let valid_has_both = y_valid.iter().any(|&l| l) && y_valid.iter().any(|&l| !l);

    let prior = n_pos as f64 / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let d = x_train.cols();
    let params = config.grow_params();
    let lr = config.learning_rate;
    let bagging = config.row_subsample < 1.0 && config.subsample_freq > 0;
    let mut rng = seeds::rng(config.seed, &[seeds::tag("gbdt")]);

    let mut train_scores = vec![base_score; n];
    let mut valid_scores = vec![base_score; y_valid.len()];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::new();
    let mut trace = TrainTrace::default();
    let mut bag: Vec<usize> = (0..n).collect();
    let mut best = (f64::NEG_INFINITY, 0usize);

    for it in 0..config.num_iterations {
        if bagging && it % config.subsample_freq == 0 {
            bag = sample_sorted(&mut rng, n, config.row_subsample);
        }
        let features = sample_sorted(&mut rng, d, config.feature_subsample);
        for i in 0..n {
            let p = sigmoid(train_scores[i]);
            grad[i] = p - if y_train[i] { 1.0 } else { 0.0 };
            hess[i] = p * (1.0 - p);
        }
        let tree = grow_tree(x_train, bag.clone(), &grad, &hess, &features, &params);
        for (s, row) in train_scores.iter_mut().zip(x_train.row_iter()) {
            *s += lr * tree.predict(row);
        }
        for (s, row) in valid_scores.iter_mut().zip(x_valid.row_iter()) {
            *s += lr * tree.predict(row);
        }
        trees.push(tree);

        let metric = if valid_has_both {
            roc_auc(&valid_scores, y_valid)?
        } else {
            -log_loss(&valid_scores, y_valid)
        };
        trace.valid_metric.push(metric);
        trace.train_loss.push(log_loss(&train_scores, y_train));
        if config.early_stopping_rounds == 0 || metric > best.0 {
            best = (metric, it + 1);
        } else if it + 1 - best.1 >= config.early_stopping_rounds {
            break;
        }
    }

    let best_iteration = best.1;
    trees.truncate(best_iteration);
    Ok((
        BoostedModel {
            trees,
            base_score,
            learning_rate: lr,
            best_iteration,
            num_features: d,
        },
        trace,
    ))
}

impl BoostedModel {
    /// Raw log-odds for one row.
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.base_score
            + self.learning_rate
                * self.trees[..self.best_iteration]
                    .iter()
                    .map(|t| t.predict(row))
                    .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.num_features {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} features, got {}",
                self.num_features,
                x.cols()
            )));
        }
        Ok(x.row_iter().map(|r| clamp_prob(sigmoid(self.decision(r)))).collect())
    }

    /// Versioned text form: a `key=value` header followed by one CSV line per
    /// node. Split nodes leave `leaf_value` empty; leaves leave the split
    /// columns empty.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("respscreen-gbdt\nversion=1\n");
        let _ = writeln!(s, "base_score={}", self.base_score);
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "best_iteration={}", self.best_iteration);
        let _ = writeln!(s, "num_features={}", self.num_features);
        let _ = writeln!(s, "num_trees={}", self.trees.len());
        s.push_str("tree_id,node_id,feature,threshold,left,right,leaf_value\n");
        for (t, tree) in self.trees.iter().enumerate() {
            for (i, node) in tree.nodes.iter().enumerate() {
                match *node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let _ = writeln!(s, "{t},{i},{feature},{threshold},{left},{right},");
                    }
                    Node::Leaf { value } => {
                        let _ = writeln!(s, "{t},{i},,,,,{value}");
                    }
                }
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: &str| Error::parse(origin, line + 1, msg.to_string());
        match lines.next() {
            Some((_, "respscreen-gbdt")) => {}
            _ => return Err(err(0, "not a respscreen-gbdt model file")),
        }
        let mut header = std::collections::HashMap::new();
        for (i, line) in lines.by_ref() {
            if line.starts_with("tree_id,") {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(i, "expected key=value"))?;
            header.insert(k.to_string(), (i, v.to_string()));
        }
        let get = |k: &str| -> Result<(usize, String)> {
            header
                .get(k)
                .cloned()
                .ok_or_else(|| Error::parse(origin, 1, format!("missing header key {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            let (i, v) = get(k)?;
            v.parse().map_err(|_| err(i, &format!("bad {k}")))
        };
        let int = |k: &str| -> Result<usize> {
            let (i, v) = get(k)?;
            v.parse().map_err(|_| err(i, &format!("bad {k}")))
        };
        if get("version")?.1 != "1" {
            return Err(Error::parse(origin, 2, "unsupported model version"));
        }
        let base_score = num("base_score")?;
        let learning_rate = num("learning_rate")?;
        let best_iteration = int("best_iteration")?;
        let num_features = int("num_features")?;
        let num_trees = int("num_trees")?;

        let mut trees: Vec<Tree> = (0..num_trees).map(|_| Tree { nodes: Vec::new() }).collect();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(err(i, "node line needs 7 fields"));
            }
            let t: usize = f[0].parse().map_err(|_| err(i, "bad tree_id"))?;
            let id: usize = f[1].parse().map_err(|_| err(i, "bad node_id"))?;
            let tree = trees.get_mut(t).ok_or_else(|| err(i, "tree_id out of range"))?;
            if id != tree.nodes.len() {
                return Err(err(i, "node ids must be consecutive"));
            }
            let node = if f[2].is_empty() {
                Node::Leaf {
                    value: f[6].parse().map_err(|_| err(i, "bad leaf_value"))?,
                }
            } else {
                let feature: usize = f[2].parse().map_err(|_| err(i, "bad feature"))?;
                if feature >= num_features {
                    return Err(err(i, "split feature out of range"));
                }
                Node::Split {
                    feature,
                    threshold: f[3].parse().map_err(|_| err(i, "bad threshold"))?,
                    left: f[4].parse().map_err(|_| err(i, "bad left"))?,
                    right: f[5].parse().map_err(|_| err(i, "bad right"))?,
                }
            };
            tree.nodes.push(node);
        }
        for (t, tree) in trees.iter().enumerate() {
            let n = tree.nodes.len();
            let bad_child = tree.nodes.iter().any(|node| match node {
                Node::Split { left, right, .. } => *left >= n || *right >= n,
                Node::Leaf { .. } => false,
            });
            if n == 0 || bad_child {
                return Err(Error::parse(origin, 1, format!("tree {t} is malformed")));
            }
        }
        if best_iteration > trees.len() {
            return Err(Error::parse(origin, 1, "best_iteration exceeds tree count"));
        }
        Ok(BoostedModel {
            trees,
            base_score,
            learning_rate,
            best_iteration,
            num_features,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_trees_predict_the_prior() {
        let m = BoostedModel {
            trees: vec![],
            base_score: 0.0,
            learning_rate: 0.1,
            best_iteration: 0,
            num_features: 2,
        };
        let p = m.predict_proba(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(p, vec![0.5; 3]);
        let m = BoostedModel { base_score: 1.5, ..m };
        let p = m.predict_proba(&Matrix::zeros(1, 2)).unwrap();
        assert_eq!(p[0], sigmoid(1.5));
        assert!(m.predict_proba(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let cfg = TrainConfig::desk();
        assert!(matches!(
            train(&x, &[true; 4], &x, &[true, false, true, false], &cfg),
            Err(Error::SingleClass)
        ));
        let mut bad = x.clone();
        bad.set(2, 0, f64::NAN);
        let y = [true, false, true, false];
        assert!(matches!(train(&bad, &y, &x, &y, &cfg), Err(Error::NonFinite(_))));
        let mut c = cfg;
        c.num_leaves = 1;
        assert!(train(&x, &y, &x, &y, &c).is_err());
    }

    #[test]
    fn near_constant_labels_start_from_prior() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x = Matrix::from_vec(1000, 2, (0..2000).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let mut y = vec![false; 1000];
        y[17] = true;
        let cfg = TrainConfig {
            num_iterations: 5,
            ..TrainConfig::desk()
        };
        let m = train(&x, &y, &x, &y, &cfg).unwrap();
        let expected = (0.001f64 / 0.999).ln();
        assert!((m.base_score - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_patience_keeps_every_tree() {
        let x = Matrix::from_vec(40, 1, (0..40).map(|i| i as f64).collect()).unwrap();
        let y: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let cfg = TrainConfig {
            num_iterations: 30,
            early_stopping_rounds: 0,
            min_leaf_samples: 1,
            row_subsample: 1.0,
            ..TrainConfig::desk()
        };
        let m = train(&x, &y, &x, &y, &cfg).unwrap();
        assert_eq!((m.trees.len(), m.best_iteration), (30, 30));
        let cfg = TrainConfig {
            early_stopping_rounds: 5,
            ..cfg
        };
        // without bagging the first tree already cuts at 19.5, so validation
        // AUC is 1 from the start and never improves
        let m = train(&x, &y, &x, &y, &cfg).unwrap();
        assert_eq!((m.trees.len(), m.best_iteration), (1, 1));
    }

    #[test]
    fn model_text_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let x = Matrix::from_vec(200, 3, (0..600).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y: Vec<bool> = (0..200).map(|i| x.get(i, 0) + 0.3 * x.get(i, 2) > 0.0).collect();
        let cfg = TrainConfig {
            num_iterations: 40,
            min_leaf_samples: 5,
            feature_subsample: 1.0,
            ..TrainConfig::desk()
        };
        let m = train(&x, &y, &x, &y, &cfg).unwrap();
        let back = BoostedModel::from_text(&m.to_text(), Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert!(BoostedModel::from_text("garbage", Path::new("m")).is_err());
    }
}
