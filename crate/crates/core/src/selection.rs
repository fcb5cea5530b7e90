//! Class-mean dimension ranking/reduction and borderline minority
//! oversampling.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds;

/// Largest fraction of dimensions that may be dropped.
pub const MAX_DROP_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionRanking {
    pub positive_mean: Vec<f64>,
    pub negative_mean: Vec<f64>,
    /// `|positive_mean - negative_mean|` per dimension.
    pub diffs: Vec<f64>,
    /// Dimension indices, least discriminative first; ties by index.
    pub order: Vec<usize>,
}

fn check_labels(x: &Matrix, y: &[bool]) -> Result<(usize, usize)> {
    if x.rows() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    let pos = y.iter().filter(|&&l| l).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Rank dimensions by the absolute difference of the two class means.
pub fn rank_dimensions(x: &Matrix, y: &[bool]) -> Result<DimensionRanking> {
    let (n_pos, n_neg) = check_labels(x, y)?;
    let d = x.cols();
    let mut pos_sum = vec![0.0; d];
    let mut neg_sum = vec![0.0; d];
    for (row, &label) in x.row_iter().zip(y) {
        let acc = if label { &mut pos_sum } else { &mut neg_sum };
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    let positive_mean: Vec<f64> = pos_sum.iter().map(|s| s / n_pos as f64).collect();
    let negative_mean: Vec<f64> = neg_sum.iter().map(|s| s / n_neg as f64).collect();
    let diffs: Vec<f64> = positive_mean
        .iter()
        .zip(&negative_mean)
        .map(|(p, n)| (p - n).abs())
        .collect();
    if let Some(i) = diffs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("class-mean difference of dimension {i}")));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| diffs[a].total_cmp(&diffs[b]).then(a.cmp(&b)));
    Ok(DimensionRanking {
        positive_mean,
        negative_mean,
        diffs,
        order,
    })
}

/// Kept dimension indices (ascending) after dropping a fraction of the
/// least discriminative ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionMask {
    pub keep: Vec<usize>,
    pub total_dim: usize,
    pub drop_fraction: f64,
}

/// `floor(rho * dim)`, robust to representation error in `rho`.
pub fn drop_count(rho: f64, dim: usize) -> usize {
    ((rho * dim as f64 + 1e-9).floor() as usize).min(dim)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=MAX_DROP_FRACTION + 1e-12).contains(&rho) {
        return Err(Error::InvalidConfig(format!(
            "drop fraction {rho} outside [0, {MAX_DROP_FRACTION}]"
        )));
    }
    Ok(())
}

impl ReductionMask {
    pub fn fit(ranking: &DimensionRanking, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        let total_dim = ranking.order.len();
        let mut keep = ranking.order[drop_count(rho, total_dim)..].to_vec();
        keep.sort_unstable();
        Ok(ReductionMask {
            keep,
            total_dim,
            drop_fraction: rho,
        })
    }

    pub fn identity(dim: usize) -> Self {
        ReductionMask {
            keep: (0..dim).collect(),
            total_dim: dim,
            drop_fraction: 0.0,
        }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.total_dim {
            return Err(Error::ShapeMismatch(format!(
                "mask expects {} columns, matrix has {}",
                self.total_dim,
                x.cols()
            )));
        }
        Ok(x.select_cols(&self.keep))
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.total_dim {
            return Err(Error::ShapeMismatch(format!(
                "mask expects {} values, vector has {}",
                self.total_dim,
                row.len()
            )));
        }
        Ok(self.keep.iter().map(|&i| row[i]).collect())
    }

    /// One row per kept index under the header `dim,total_dim,rho`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("dim,total_dim,rho\n");
        for k in &self.keep {
            out.push_str(&format!("{k},{},{}\n", self.total_dim, self.drop_fraction));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Read a mask file. `total_dim` and `rho` must be identical on every row.
    pub fn read(path: impl AsRef<Path>, total_dim_hint: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "dim,total_dim,rho")) => {}
            _ => return Err(Error::parse(path, 1, "expected header dim,total_dim,rho")),
        }
        let mut keep = Vec::new();
        let mut meta: Option<(usize, f64)> = None;
        for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::parse(path, i + 1, format!("bad mask row {line:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            let k: usize = f[0].parse().map_err(|_| bad())?;
            let total: usize = f[1].parse().map_err(|_| bad())?;
            let rho: f64 = f[2].parse().map_err(|_| bad())?;
            match meta {
                None => meta = Some((total, rho)),
                Some(m) if m != (total, rho) => return Err(bad()),
                _ => {}
            }
            if k >= total || keep.last().is_some_and(|&prev| prev >= k) {
                return Err(bad());
            }
            keep.push(k);
        }
        let (total_dim, drop_fraction) = match (meta, total_dim_hint) {
            (Some(m), _) => m,
            (None, Some(d)) => (d, 1.0),
            (None, None) => return Err(Error::parse(path, 2, "mask has no rows")),
        };
        Ok(ReductionMask {
            keep,
            total_dim,
            drop_fraction,
        })
    }
}

/// Drop the `floor(rho * dim)` lowest-ranked dimensions of `x`.
pub fn apply_reduction(
    x: &Matrix,
    ranking: &DimensionRanking,
    rho: f64,
) -> Result<(Matrix, ReductionMask)> {
    let mask = ReductionMask::fit(ranking, rho)?;
    let reduced = mask.apply(x)?;
    Ok((reduced, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OversampleConfig {
    /// Final positive count is `multiplier` times the original.
    pub multiplier: usize,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl OversampleConfig {
    pub fn new(multiplier: usize, seed: u64) -> Self {
        OversampleConfig {
            multiplier,
            k_neighbors: 5,
            seed,
        }
    }
}

/// Provenance of one synthetic row: `seed + lambda * (neighbor - seed)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOrigin {
    pub seed_row: usize,
    pub neighbor_row: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oversampled {
    /// Original rows first, synthetic rows appended.
    pub x: Matrix,
    pub y: Vec<bool>,
    pub origins: Vec<SyntheticOrigin>,
    /// Borderline positives used as interpolation seeds.
    pub seeds: Vec<usize>,
    /// All positives were identical, so every synthetic row is a copy.
    pub degenerate: bool,
}

/// Linear max-margin separator on standardized features, fitted by
/// full-batch subgradient descent on the class-balanced hinge loss.
struct MarginModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    w: Vec<f64>,
    b: f64,
}

impl MarginModel {
    const LAMBDA: f64 = 1e-2;
    const ITERATIONS: usize = 300;

    fn fit(x: &Matrix, y: &[bool]) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let mut mean = vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for row in x.row_iter() {
            for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / n as f64;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 0.0 { 1.0 / s.sqrt() } else { 1.0 };
        }
        let n_pos = y.iter().filter(|&&l| l).count() as f64;
        let n_neg = n as f64 - n_pos;
        let class_w = |l: bool| if l { n as f64 / (2.0 * n_pos) } else { n as f64 / (2.0 * n_neg) };

        let mut model = MarginModel {
            mean,
            scale,
            w: vec![0.0; d],
            b: 0.0,
        };
        let mut z = vec![0.0; d];
        for t in 1..=Self::ITERATIONS {
            let eta = 1.0 / (Self::LAMBDA * t as f64);
            let mut gw: Vec<f64> = model.w.iter().map(|w| Self::LAMBDA * w).collect();
            let mut gb = 0.0;
            for (row, &label) in x.row_iter().zip(y) {
                model.standardize(row, &mut z);
                let s = if label { 1.0 } else { -1.0 };
                if s * model.raw_score(&z) < 1.0 {
                    let c = class_w(label) * s / n as f64;
                    for (g, v) in gw.iter_mut().zip(&z) {
                        *g -= c * v;
                    }
                    gb -= c;
                }
            }
            for (w, g) in model.w.iter_mut().zip(&gw) {
                *w -= eta * g;
            }
            model.b -= eta * gb;
        }
        model
    }

    fn standardize(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) * s;
        }
    }

    fn raw_score(&self, z: &[f64]) -> f64 {
        self.w.iter().zip(z).map(|(w, v)| w * v).sum::<f64>() + self.b
    }

    fn margin(&self, row: &[f64]) -> f64 {
        let mut z = vec![0.0; row.len()];
        self.standardize(row, &mut z);
        self.raw_score(&z)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// SVM-SMOTE style oversampling of the positive class.
///
/// Seeds are the positives inside the margin (`y * f(x) < 1`) of a linear
/// max-margin separator, or every positive if none are. Each synthetic row
/// interpolates a random seed toward one of its `k` nearest positive
/// neighbors. Negatives and original rows are returned untouched.
pub fn svm_smote(x: &Matrix, y: &[bool], config: &OversampleConfig) -> Result<Oversampled> {
    let (n_pos, _) = check_labels(x, y)?;
    if !(2..=5).contains(&config.multiplier) {
        return Err(Error::InvalidConfig(format!(
            "oversampling multiplier {} outside [2, 5]",
            config.multiplier
        )));
    }
    if config.k_neighbors == 0 {
        return Err(Error::InvalidConfig("k_neighbors must be at least 1".into()));
    }
    if n_pos < config.k_neighbors + 1 {
        return Err(Error::TooFewPositives {
            needed: config.k_neighbors + 1,
            found: n_pos,
        });
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("feature matrix".into()));
    }

    let positives: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let first = x.row(positives[0]);
    let degenerate = positives.iter().all(|&i| x.row(i) == first);

    let model = MarginModel::fit(x, y);
    let mut seeds: Vec<usize> = positives
        .iter()
        .copied()
        .filter(|&i| model.margin(x.row(i)) < 1.0)
        .collect();
    if seeds.is_empty() {
        seeds = positives.clone();
    }

    let neighbors: Vec<Vec<usize>> = seeds
        .iter()
        .map(|&s| {
            let mut cands: Vec<(f64, usize)> = positives
                .iter()
                .filter(|&&p| p != s)
                .map(|&p| (squared_distance(x.row(s), x.row(p)), p))
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands.truncate(config.k_neighbors);
            cands.into_iter().map(|(_, p)| p).collect()
        })
        .collect();

    let n_new = (config.multiplier - 1) * n_pos;
    let mut rng = seeds::rng(config.seed, &[seeds::tag("svm-smote")]);
    let mut out = x.clone();
    let mut labels = y.to_vec();
    let mut origins = Vec::with_capacity(n_new);
    let mut row = vec![0.0; x.cols()];
    for _ in 0..n_new {
        let si = rng.gen_range(0..seeds.len());
        let seed_row = seeds[si];
        let neighbor_row = *neighbors[si].choose(&mut rng).expect("k >= 1 neighbors");
        let lambda: f64 = rng.gen();
        let (s, nb) = (x.row(seed_row), x.row(neighbor_row));
        for ((r, a), b) in row.iter_mut().zip(s).zip(nb) {
            *r = a + lambda * (b - a);
        }
        out.push_row(&row)?;
        labels.push(true);
        origins.push(SyntheticOrigin {
            seed_row,
            neighbor_row,
            lambda,
        });
    }

    Ok(Oversampled {
        x: out,
        y: labels,
        origins,
        seeds,
        degenerate,
    })
}
