use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::par;

/// Candidate gains within this relative margin count as ties; ties go to the
/// lower feature index, then the lower threshold.
const GAIN_TIE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_leaves: usize,
    pub min_leaf_samples: usize,
    pub min_sum_hessian: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    /// Rows going left.
    pub left_count: usize,
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

#[inline]
fn beats(gain: f64, best: f64) -> bool {
    gain > best + GAIN_TIE_EPS * best.abs().max(1e-300)
}

/// Exact greedy search over one feature: sort the node's rows by value and
/// evaluate every boundary between distinct values.
fn best_split_for_feature(
    x: &Matrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    feature: usize,
    params: &GrowParams,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 * params.min_leaf_samples.max(1) {
        return None;
    }
    let mut sorted: Vec<(f64, usize)> = rows.iter().map(|&r| (x.get(r, feature), r)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (g_total, h_total) = rows
        .iter()
        .fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
    let parent = score(g_total, h_total, params.lambda);

    let mut best: Option<SplitCandidate> = None;
    let (mut gl, mut hl) = (0.0, 0.0);
    for i in 0..n - 1 {
        let (v, r) = sorted[i];
        gl += grad[r];
        hl += hess[r];
        let next = sorted[i + 1].0;
        if v == next {
            continue;
        }
        let left = i + 1;
        if left < params.min_leaf_samples || n - left < params.min_leaf_samples {
            continue;
        }
        let (gr, hr) = (g_total - gl, h_total - hl);
        if hl < params.min_sum_hessian || hr < params.min_sum_hessian {
            continue;
        }
        let gain = score(gl, hl, params.lambda) + score(gr, hr, params.lambda) - parent;
        if gain <= 0.0 {
            continue;
        }
        if best.is_none_or(|b| beats(gain, b.gain)) {
            let mut threshold = 0.5 * (v + next);
            if threshold >= next {
                threshold = v;
            }
            best = Some(SplitCandidate {
                feature,
                threshold,
                gain,
                left_count: left,
            });
        }
    }
    best
}

pub(crate) fn best_split(
    x: &Matrix,
    rows: &[usize],
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    params: &GrowParams,
) -> Option<SplitCandidate> {
    let per_feature = par::map_slice(features, |&f| {
        best_split_for_feature(x, rows, grad, hess, f, params)
    });
    // `features` is ascending, so the first of tied gains has the lowest index
    per_feature.into_iter().flatten().fold(None, |best, c| match best {
        Some(b) if !beats(c.gain, b.gain) => Some(b),
        _ => Some(c),
    })
}

fn leaf_value(rows: &[usize], grad: &[f64], hess: &[f64], lambda: f64) -> f64 {
    let (g, h) = rows
        .iter()
        .fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
    -g / (h + lambda)
}

struct OpenLeaf {
    node: usize,
    rows: Vec<usize>,
    split: Option<SplitCandidate>,
}

/// Grow a tree leaf-wise: repeatedly split the open leaf with the largest
/// gain until `max_leaves` is reached or no split has positive gain.
pub(crate) fn grow_tree(
    x: &Matrix,
    rows: Vec<usize>,
    grad: &[f64],
    hess: &[f64],
    features: &[usize],
    params: &GrowParams,
) -> Tree {
    let mut nodes = vec![Node::Leaf {
        value: leaf_value(&rows, grad, hess, params.lambda),
    }];
    let split = best_split(x, &rows, grad, hess, features, params);
    let mut open = vec![OpenLeaf {
        node: 0,
        rows,
        split,
    }];

    while open.len() < params.max_leaves {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.split.map(|s| (i, s.gain, l.node)))
            .fold(None::<(usize, f64, usize)>, |best, cand| match best {
                Some(b) if !(beats(cand.1, b.1) || (!beats(b.1, cand.1) && cand.2 < b.2)) => Some(b),
                _ => Some(cand),
            });
        let Some((idx, _, _)) = pick else { break };
        let leaf = open.swap_remove(idx);
        let s = leaf.split.expect("picked leaf has a split");
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = leaf
            .rows
            .iter()
            .partition(|&&r| x.get(r, s.feature) <= s.threshold);
        debug_assert_eq!(left_rows.len(), s.left_count);

        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes[leaf.node] = Node::Split {
            feature: s.feature,
            threshold: s.threshold,
            left: l,
            right: r,
        };
        for (id, child_rows) in [(l, left_rows), (r, right_rows)] {
            nodes.push(Node::Leaf {
                value: leaf_value(&child_rows, grad, hess, params.lambda),
            });
            let split = best_split(x, &child_rows, grad, hess, features, params);
            open.push(OpenLeaf {
                node: id,
                rows: child_rows,
                split,
            });
        }
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(leaves: usize, min_leaf: usize) -> GrowParams {
        GrowParams {
            max_leaves: leaves,
            min_leaf_samples: min_leaf,
            min_sum_hessian: 0.0,
            lambda: 1.0,
        }
    }

    #[test]
    fn stump_separates_step_function() {
        let x = Matrix::from_vec(6, 1, vec![1.0, 2.0, 3.0, 10.0, 11.0, 12.0]).unwrap();
        let grad = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
        let hess = [1.0; 6];
        let t = grow_tree(&x, (0..6).collect(), &grad, &hess, &[0], &params(2, 1));
        match t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 6.5);
            }
            _ => panic!("expected a split"),
        }
        assert!(t.predict(&[0.0]) < 0.0 && t.predict(&[20.0]) > 0.0);
        assert_eq!(t.leaf_count(), 2);
    }

    #[test]
    fn constant_feature_yields_leaf() {
        let x = Matrix::filled(5, 1, 3.0);
        let grad = [1.0, -1.0, 1.0, -1.0, 0.5];
        let t = grow_tree(&x, (0..5).collect(), &grad, &[1.0; 5], &[0], &params(8, 1));
        assert_eq!(t.nodes.len(), 1);
    }

    #[test]
    fn min_leaf_samples_respected() {
        let x = Matrix::from_vec(6, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let grad = [5.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        let t = grow_tree(&x, (0..6).collect(), &grad, &[1.0; 6], &[0], &params(2, 3));
        match t.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, 3.5),
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn leaf_budget_caps_growth() {
        let n = 64;
        let x = Matrix::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let grad: Vec<f64> = (0..n).map(|i| if (i / 4) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let t = grow_tree(&x, (0..n).collect(), &grad, &vec![1.0; n], &[0], &params(5, 1));
        assert_eq!(t.leaf_count(), 5);
    }
}
