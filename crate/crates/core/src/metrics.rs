//! Evaluation: ROC AUC, sensitivity at a specificity floor over a fixed
//! threshold grid, and subsample confidence intervals.

use std::fmt::Write as _;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::seeds;

pub const DEFAULT_MIN_SPEC: f64 = 0.9513;
pub const DEFAULT_STEP: f64 = 0.0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
    pub point: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub threshold: f64,
    pub precision: f64,
    pub f1: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// False when no grid threshold reaches `min_spec`.
    pub feasible: bool,
    pub min_spec: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ci: Option<ConfidenceInterval>,
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((n_pos, n_neg))
}

/// Mann-Whitney AUC with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the U statistic, kept integral so the result is exact.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// Number of grid steps; thresholds are `i / steps` for `i` in `0..=steps`.
pub fn grid_steps(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("threshold step {step} outside (0, 1]")));
    }
    Ok((1.0 / step).round() as usize)
}

#[derive(Debug, Clone, Copy)]
struct Point {
    idx: usize,
    tp: usize,
    tn: usize,
}

/// Count of sorted values `>= t`.
fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < t)
}

pub fn sen_at_spec(scores: &[f64], labels: &[bool], min_spec: f64, step: f64) -> Result<EvalReport> {
    let (n_pos, n_neg) = class_counts(scores, labels)?;
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidConfig(format!("score {s} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&min_spec) {
        return Err(Error::InvalidConfig(format!("min_spec {min_spec} outside [0, 1]")));
    }
    let steps = grid_steps(step)?;
    let auc = roc_auc(scores, labels)?;

    let mut pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let mut neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);

    let points = par::map_range(steps + 1, |i| {
        let t = i as f64 / steps as f64;
        Point {
            idx: i,
            tp: count_at_least(&pos, t),
            tn: n_neg - count_at_least(&neg, t),
        }
    });

    let feasible_at = |p: &Point| p.tn as f64 / n_neg as f64 >= min_spec;
    // Points are in ascending threshold order, so strict `>` keeps the lowest
    // threshold among ties.
    let mut best: Option<Point> = None;
    for p in points.iter().filter(|p| feasible_at(p)) {
        if best.is_none_or(|b| p.tp > b.tp) {
            best = Some(*p);
        }
    }
    let feasible = best.is_some();
    let chosen = best.unwrap_or_else(|| {
        let mut b = points[0];
        for p in &points[1..] {
            if p.tn > b.tn || (p.tn == b.tn && p.tp > b.tp) {
                b = *p;
            }
        }
        b
    });

    let tp = chosen.tp;
    let tn = chosen.tn;
    let fp = n_neg - tn;
    let fn_ = n_pos - tp;
    let sensitivity = tp as f64 / n_pos as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let f1 = if precision + sensitivity == 0.0 {
        0.0
    } else {
        2.0 * precision * sensitivity / (precision + sensitivity)
    };
    Ok(EvalReport {
        auc,
        sensitivity,
        specificity: tn as f64 / n_neg as f64,
        threshold: chosen.idx as f64 / steps as f64,
        precision,
        f1,
        n_pos,
        n_neg,
        feasible,
        min_spec,
        tp,
        fp,
        tn,
        fn_,
        ci: None,
    })
}

/// Retries per run when the metric rejects a subsample.
const CI_MAX_RETRIES: usize = 20;

/// Evaluates `metric` on `n_runs` stratified subsamples holding `fraction` of
/// each class and returns mean ± 1.96 sample standard deviations, clamped to
/// [0, 1].
pub fn confidence_interval<F>(
    metric: F,
    scores: &[f64],
    labels: &[bool],
    n_runs: usize,
    fraction: f64,
    seed: u64,
) -> Result<ConfidenceInterval>
where
    F: Fn(&[f64], &[bool]) -> Result<f64>,
{
    if n_runs < 2 {
        return Err(Error::InvalidConfig("confidence interval needs n_runs >= 2".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("subsample fraction {fraction} outside (0, 1]")));
    }
    class_counts(scores, labels)?;
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let take = |n: usize| ((fraction * n as f64).round() as usize).clamp(1, n);
    let (k_pos, k_neg) = (take(pos.len()), take(neg.len()));

    let mut rng = seeds::rng(seed, &[seeds::tag("confidence-interval")]);
    let mut values = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let mut attempt = 0;
        loop {
            let mut idx: Vec<usize> = index::sample(&mut rng, pos.len(), k_pos)
                .into_iter()
                .map(|i| pos[i])
                .chain(index::sample(&mut rng, neg.len(), k_neg).into_iter().map(|i| neg[i]))
                .collect();
            idx.sort_unstable();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            match metric(&s, &l) {
                Ok(v) => {
                    values.push(v);
                    break;
                }
                Err(e) if e.is_data_error() && attempt + 1 < CI_MAX_RETRIES => attempt += 1,
                Err(e) => {
                    return Err(Error::Internal(format!(
                        "confidence interval run {run} failed after {} attempts: {e}",
                        attempt + 1
                    )))
                }
            }
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let point = mean.clamp(0.0, 1.0);
    Ok(ConfidenceInterval {
        low: (mean - 1.96 * sd).clamp(0.0, 1.0).min(point),
        high: (mean + 1.96 * sd).clamp(0.0, 1.0).max(point),
        point,
        n_runs,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One `key=value` per line, in field order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "auc={}", self.auc);
        let _ = writeln!(s, "sensitivity={}", self.sensitivity);
        let _ = writeln!(s, "specificity={}", self.specificity);
        let _ = writeln!(s, "threshold={}", self.threshold);
        let _ = writeln!(s, "precision={}", self.precision);
        let _ = writeln!(s, "f1={}", self.f1);
        let _ = writeln!(s, "n_pos={}", self.n_pos);
        let _ = writeln!(s, "n_neg={}", self.n_neg);
        let _ = writeln!(s, "feasible={}", self.feasible);
        let _ = writeln!(s, "min_spec={}", self.min_spec);
        let _ = writeln!(s, "tp={}\nfp={}\ntn={}\nfn={}", self.tp, self.fp, self.tn, self.fn_);
        if let Some(ci) = &self.ci {
            let _ = writeln!(s, "ci_low={}\nci_high={}\nci_point={}\nci_runs={}", ci.low, ci.high, ci.point, ci.n_runs);
        }
        s
    }
}
