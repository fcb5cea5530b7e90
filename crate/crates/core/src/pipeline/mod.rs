//! End-to-end runs: embed, reduce per modality, fuse, oversample, train and
//! evaluate, plus the batch commands built on top.

mod config;
mod extract;

pub use config::{EmbedderKind, RunConfig, Track, CONFIG_KEYS};
pub use extract::{
    baseline_embeddings, baseline_from_dump, baseline_source, cached_baseline, cmd_features,
    dump_path, load_imported, spectrogram_for, table_from_sets, FeaturesSummary, ModalityTable,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio_features::SpectrogramKind;
use crate::dataset::{load_manifest, Label, ManifestRecord, Modality, Split};
use crate::embeddings::{concat_fusion, read_embeddings, write_embeddings, EmbeddingVector};
use crate::error::{Error, Result, StageExt};
use crate::gbdt::{self, BoostedModel, TrainConfig};
use crate::matrix::Matrix;
use crate::metrics::{confidence_interval, roc_auc, sen_at_spec, EvalReport};
use crate::selection::{rank_dimensions, svm_smote, OversampleConfig, ReductionMask};
use crate::{par, seeds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub track: Track,
    pub frontend: SpectrogramKind,
    /// Embedding source, `+`-joined across fused modalities.
    pub source: String,
    pub rho: f64,
    pub oversample_m: Option<usize>,
    pub seed: u64,
    pub n_dev: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_synthetic: usize,
    pub n_test: usize,
    pub input_dim: usize,
    pub reduced_dim: usize,
    pub kept_dims: BTreeMap<Modality, usize>,
    pub best_iteration: usize,
    /// Absent when the test split has no labels.
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub subject_id: String,
    pub score: f64,
    pub label: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub model: BoostedModel,
    pub masks: BTreeMap<Modality, ReductionMask>,
    pub predictions: Vec<Prediction>,
    /// Embedding source per modality.
    pub sources: BTreeMap<Modality, String>,
}

/// Per-stage seeds fanned out from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub valid_split: u64,
    pub oversample: u64,
    pub gbdt: u64,
    pub ci: u64,
}

impl StageSeeds {
    pub fn from_seed(seed: u64) -> Self {
        let d = |name| seeds::derive(seed, &[seeds::tag(name)]);
        StageSeeds {
            valid_split: d("valid-split"),
            oversample: d("oversample"),
            gbdt: d("gbdt"),
            ci: d("ci"),
        }
    }
}

struct Subject {
    split: Split,
    label: Option<bool>,
}

/// Subjects taking part in the track: those with at least one record of a
/// track modality. Each must have a record for every track modality.
fn track_subjects(records: &[ManifestRecord], modalities: &[Modality]) -> Result<BTreeMap<String, Subject>> {
    let mut present: BTreeMap<&str, BTreeSet<Modality>> = BTreeMap::new();
    let mut subjects = BTreeMap::new();
    for r in records.iter().filter(|r| modalities.contains(&r.modality)) {
        present.entry(&r.subject_id).or_default().insert(r.modality);
        subjects.insert(
            r.subject_id.clone(),
            Subject {
                split: r.split,
                label: r.label.map(Label::is_positive),
            },
        );
    }
    for (s, have) in &present {
        if let Some(m) = modalities.iter().find(|m| !have.contains(m)) {
            return Err(Error::MissingModality {
                subject: s.to_string(),
                modality: m.to_string(),
            });
        }
    }
    Ok(subjects)
}

fn modality_matrix(table: &ModalityTable, m: Modality, subjects: &[&str]) -> Result<Matrix> {
    let (_, rows) = table.get(&m).ok_or_else(|| Error::MissingModality {
        subject: subjects.first().copied().unwrap_or("?").to_string(),
        modality: m.to_string(),
    })?;
    let picked = subjects
        .iter()
        .map(|s| {
            rows.get(*s).ok_or_else(|| Error::MissingModality {
                subject: s.to_string(),
                modality: m.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&picked)
}

/// Concatenate reduced per-modality rows in canonical order.
fn fuse(
    parts: &BTreeMap<Modality, Matrix>,
    subjects: &[&str],
    sources: &BTreeMap<Modality, String>,
) -> Result<(Matrix, String)> {
    let mut rows = Vec::with_capacity(subjects.len());
    let mut source = String::new();
    let order: Vec<Modality> = parts.keys().copied().collect();
    for (i, s) in subjects.iter().enumerate() {
        let per: BTreeMap<Modality, EmbeddingVector> = parts
            .iter()
            .map(|(&m, x)| {
                (
                    m,
                    EmbeddingVector {
                        subject_id: s.to_string(),
                        modality: m,
                        source: sources[&m].clone(),
                        values: x.row(i).to_vec(),
                    },
                )
            })
            .collect();
        let fused = concat_fusion(&per, &order)?;
        source = fused.source;
        rows.push(fused.values);
    }
    let cols = parts.values().map(Matrix::cols).sum();
    let x = if rows.is_empty() {
        Matrix::zeros(0, cols)
    } else {
        Matrix::from_rows(&rows)?
    };
    Ok((x, source))
}

/// Stratified hold-out: `fraction` of each class (at least one when the
/// class has two or more members) goes to validation. Returns sorted
/// (train, valid) row indices.
pub fn stratified_split(y: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seeds::rng(seed, &[]);
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let k = if n >= 2 {
            ((fraction * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        valid.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    (train, valid)
}

fn embedding_table(config: &RunConfig, records: &[ManifestRecord]) -> Result<ModalityTable> {
    match config.embedder {
        EmbedderKind::Baseline => {
            let cache = config.cache_dir();
            let set = baseline_embeddings(records, &config.track.modalities(), config.frontend, Some(&cache))?;
            table_from_sets(&[(config.manifest.clone(), set)])
        }
        EmbedderKind::Imported => load_imported(&config.embeddings),
    }
}

/// Run the full pipeline in memory. Nothing is written except embedding
/// cache entries.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate().stage("config")?;
    let stage_seeds = StageSeeds::from_seed(config.seed);
    let modalities = config.track.modalities();

    let records = load_manifest(&config.manifest).stage("manifest")?;
    let subjects = track_subjects(&records, &modalities).stage("manifest")?;
    let dev: Vec<&str> = subjects
        .iter()
        .filter(|(_, s)| s.split == Split::Dev)
        .map(|(k, _)| k.as_str())
        .collect();
    let test: Vec<&str> = subjects
        .iter()
        .filter(|(_, s)| s.split == Split::Test)
        .map(|(k, _)| k.as_str())
        .collect();
    let y_dev: Vec<bool> = dev.iter().map(|s| subjects[*s].label.unwrap_or(false)).collect();
    if dev.is_empty() || !y_dev.iter().any(|&l| l) || y_dev.iter().all(|&l| l) {
        return Err(Error::SingleClass).stage("manifest");
    }

    let table = embedding_table(config, &records).stage("embed")?;
    let sources: BTreeMap<Modality, String> = modalities
        .iter()
        .map(|m| (*m, table.get(m).map(|(s, _)| s.clone()).unwrap_or_default()))
        .collect();

    let mut dev_parts = BTreeMap::new();
    let mut test_parts = BTreeMap::new();
    let mut masks = BTreeMap::new();
    let mut input_dim = 0;
    for &m in &modalities {
        let x_dev = modality_matrix(&table, m, &dev).stage("embed")?;
        let x_test = if test.is_empty() {
            Matrix::zeros(0, x_dev.cols())
        } else {
            modality_matrix(&table, m, &test).stage("embed")?
        };
        input_dim += x_dev.cols();
        let ranking = rank_dimensions(&x_dev, &y_dev).stage("reduce")?;
        let mask = ReductionMask::fit(&ranking, config.rho).stage("reduce")?;
        dev_parts.insert(m, mask.apply(&x_dev).stage("reduce")?);
        test_parts.insert(m, mask.apply(&x_test).stage("reduce")?);
        masks.insert(m, mask);
    }
    let (x_dev, source) = fuse(&dev_parts, &dev, &sources).stage("fuse")?;
    let (x_test, _) = fuse(&test_parts, &test, &sources).stage("fuse")?;

    let (train_idx, valid_idx) = stratified_split(&y_dev, config.valid_fraction, stage_seeds.valid_split);
    let pick = |idx: &[usize]| idx.iter().map(|&i| y_dev[i]).collect::<Vec<bool>>();
    let mut x_train = x_dev.select_rows(&train_idx);
    let mut y_train = pick(&train_idx);
    let x_valid = x_dev.select_rows(&valid_idx);
    let y_valid = pick(&valid_idx);
    let n_train = y_train.len();

    let mut n_synthetic = 0;
    if let Some(m) = config.oversample_m {
        let os = OversampleConfig {
            multiplier: m,
            k_neighbors: config.k_neighbors,
            seed: stage_seeds.oversample,
        };
        let out = svm_smote(&x_train, &y_train, &os).stage("oversample")?;
        n_synthetic = out.origins.len();
        x_train = out.x;
        y_train = out.y;
    }

    let train_cfg = TrainConfig {
        seed: stage_seeds.gbdt,
        ..config.train
    };
    let model = gbdt::train(&x_train, &y_train, &x_valid, &y_valid, &train_cfg).stage("train")?;

    let scores = model.predict_proba(&x_test).stage("evaluate")?;
    let predictions: Vec<Prediction> = test
        .iter()
        .zip(&scores)
        .map(|(s, &score)| Prediction {
            subject_id: s.to_string(),
            score,
            label: subjects[*s].label,
        })
        .collect();
    let metrics = evaluate_predictions(&predictions, config, stage_seeds.ci).stage("evaluate")?;

    let report = RunReport {
        track: config.track,
        frontend: config.frontend,
        source,
        rho: config.rho,
        oversample_m: config.oversample_m,
        seed: config.seed,
        n_dev: dev.len(),
        n_train,
        n_valid: y_valid.len(),
        n_synthetic,
        n_test: test.len(),
        input_dim,
        reduced_dim: x_dev.cols(),
        kept_dims: masks.iter().map(|(m, k)| (*m, k.keep.len())).collect(),
        best_iteration: model.best_iteration,
        metrics,
    };
    Ok(RunOutcome {
        report,
        model,
        masks,
        predictions,
        sources,
    })
}

/// Metrics over labelled predictions; `None` when any label is unknown.
fn evaluate_predictions(preds: &[Prediction], config: &RunConfig, ci_seed: u64) -> Result<Option<EvalReport>> {
    if preds.is_empty() || preds.iter().any(|p| p.label.is_none()) {
        return Ok(None);
    }
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let labels: Vec<bool> = preds.iter().map(|p| p.label == Some(true)).collect();
    evaluate_scores(&scores, &labels, config.min_spec, config.threshold_step, config.ci_runs, config.ci_fraction, ci_seed)
        .map(Some)
}

pub fn evaluate_scores(
    scores: &[f64],
    labels: &[bool],
    min_spec: f64,
    step: f64,
    ci_runs: usize,
    ci_fraction: f64,
    seed: u64,
) -> Result<EvalReport> {
    let mut report = sen_at_spec(scores, labels, min_spec, step)?;
    if ci_runs >= 2 {
        report.ci = Some(confidence_interval(roc_auc, scores, labels, ci_runs, ci_fraction, seed)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
struct Repro<'a> {
    config: &'a RunConfig,
    stage_seeds: StageSeeds,
    package_version: &'static str,
    model_format_version: u32,
    parallel: bool,
    sources: BTreeMap<Modality, String>,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut s = String::from("subject_id,score,label\n");
    for p in preds {
        let l = match p.label {
            Some(true) => "p",
            Some(false) => "n",
            None => "",
        };
        let _ = writeln!(s, "{},{},{l}", p.subject_id, p.score);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "subject_id,score,label" => {}
        _ => return Err(Error::parse(path, 1, "expected header subject_id,score,label")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected 3 fields"));
        }
        let score: f64 = f[1].parse().map_err(|_| Error::parse(path, i + 1, "bad score"))?;
        let label = match f[2] {
            "" => None,
            l => Some(
                l.parse::<Label>()
                    .map_err(|e| Error::parse(path, i + 1, e.to_string()))?
                    .is_positive(),
            ),
        };
        out.push(Prediction {
            subject_id: f[0].to_string(),
            score,
            label,
        });
    }
    Ok(out)
}

fn write_file(path: PathBuf, contents: String) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

/// Run and persist: report.json, report.txt, model.txt, mask_<modality>.csv,
/// predictions.csv and repro.json under `out_dir`.
pub fn cmd_run(config: &RunConfig) -> Result<RunOutcome> {
    let outcome = run(config)?;
    let dir = &config.out_dir;
    (|| -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut json = serde_json::to_string_pretty(&outcome.report).map_err(|e| Error::Internal(e.to_string()))?;
        json.push('\n');
        write_file(dir.join("report.json"), json)?;
        write_file(dir.join("report.txt"), report_text(&outcome.report))?;
        outcome.model.save(dir.join("model.txt"))?;
        for (m, mask) in &outcome.masks {
            mask.write(dir.join(format!("mask_{m}.csv")))?;
        }
        write_predictions(&dir.join("predictions.csv"), &outcome.predictions)?;
        let repro = Repro {
            config,
            stage_seeds: StageSeeds::from_seed(config.seed),
            package_version: env!("CARGO_PKG_VERSION"),
            model_format_version: 1,
            parallel: par::is_parallel(),
            sources: outcome.sources.clone(),
        };
        let mut json = serde_json::to_string_pretty(&repro).map_err(|e| Error::Internal(e.to_string()))?;
        json.push('\n');
        write_file(dir.join("repro.json"), json)
    })()
    .stage("write")?;
    Ok(outcome)
}

pub fn report_text(r: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "track={}", r.track);
    let _ = writeln!(s, "frontend={}", r.frontend);
    let _ = writeln!(s, "source={}", r.source);
    let _ = writeln!(s, "rho={}", r.rho);
    let _ = writeln!(s, "oversample_m={}", r.oversample_m.map_or("none".into(), |m| m.to_string()));
    let _ = writeln!(s, "seed={}", r.seed);
    let _ = writeln!(s, "n_dev={}\nn_train={}\nn_valid={}", r.n_dev, r.n_train, r.n_valid);
    let _ = writeln!(s, "n_synthetic={}\nn_test={}", r.n_synthetic, r.n_test);
    let _ = writeln!(s, "input_dim={}\nreduced_dim={}", r.input_dim, r.reduced_dim);
    for (m, k) in &r.kept_dims {
        let _ = writeln!(s, "kept_dims_{m}={k}");
    }
    let _ = writeln!(s, "best_iteration={}", r.best_iteration);
    if let Some(m) = &r.metrics {
        s.push_str(&m.to_text());
    }
    s
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub rho: f64,
    pub oversample_m: Option<usize>,
    pub result: std::result::Result<RunReport, String>,
}

impl SweepRow {
    pub fn auc(&self) -> Option<f64> {
        self.result.as_ref().ok().and_then(|r| r.metrics.as_ref()).map(|m| m.auc)
    }
}

fn fmt_m(m: Option<usize>) -> String {
    m.map_or("none".into(), |m| m.to_string())
}

/// One run per `(rho, m)` cell. Cell failures are recorded, not fatal. Rows
/// come back sorted by AUC, best first; ties and failed cells keep grid
/// order. Writes `sweep.csv` and per-cell outputs under `out_dir/cells`.
pub fn cmd_sweep(config: &RunConfig, rho_grid: &[f64], m_grid: &[Option<usize>]) -> Result<Vec<SweepRow>> {
    if rho_grid.is_empty() || m_grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grids must be non-empty".into()));
    }
    let cache = config.cache_dir();
    let mut rows = Vec::with_capacity(rho_grid.len() * m_grid.len());
    for &rho in rho_grid {
        for &m in m_grid {
            let mut cell = config.clone();
            cell.rho = rho;
            cell.oversample_m = m;
            cell.cache_dir = Some(cache.clone());
            cell.out_dir = config.out_dir.join("cells").join(format!("rho{rho}_m{}", fmt_m(m)));
            let result = cmd_run(&cell).map(|o| o.report).map_err(|e| e.to_string());
            rows.push(SweepRow {
                rho,
                oversample_m: m,
                result,
            });
        }
    }
    rows.sort_by(|a, b| match (a.auc(), b.auc()) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let path = config.out_dir.join("sweep.csv");
    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    write_file(path, sweep_csv(&rows)).stage("write")?;
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "rho,oversample_m,auc,sensitivity,specificity,threshold,precision,f1,feasible,best_iteration,reduced_dim,error\n",
    );
    for r in rows {
        let _ = write!(s, "{},{},", r.rho, fmt_m(r.oversample_m));
        match &r.result {
            Ok(rep) => {
                match &rep.metrics {
                    Some(m) => {
                        let _ = write!(
                            s,
                            "{},{},{},{},{},{},{},",
                            m.auc, m.sensitivity, m.specificity, m.threshold, m.precision, m.f1, m.feasible
                        );
                    }
                    None => s.push_str(",,,,,,,"),
                }
                let _ = writeln!(s, "{},{},", rep.best_iteration, rep.reduced_dim);
            }
            Err(e) => {
                let _ = writeln!(s, ",,,,,,,,,\"{}\"", e.replace('"', "'"));
            }
        }
    }
    s
}

/// Baseline embeddings for every manifest record, written as one CSV.
pub fn cmd_embed(manifest: &Path, kind: SpectrogramKind, out: &Path, cache_dir: Option<&Path>) -> Result<usize> {
    let records = load_manifest(manifest).stage("manifest")?;
    let set = baseline_embeddings(&records, &Modality::ALL, kind, cache_dir).stage("embed")?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_embeddings(&set, out).stage("write")?;
    Ok(set.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportSummary {
    pub source: String,
    pub dim: usize,
    pub rows: usize,
    pub modalities: Vec<Modality>,
    /// Manifest records of the file's modalities with no vector.
    pub missing: Vec<(String, Modality)>,
    pub written: PathBuf,
}

/// Validate external embedding files against the manifest and copy them to
/// `out_dir/<source>.csv` in canonical form.
pub fn cmd_import(files: &[PathBuf], manifest: &Path, out_dir: &Path) -> Result<Vec<ImportSummary>> {
    let records = load_manifest(manifest).stage("manifest")?;
    let sets = files
        .iter()
        .map(|p| read_embeddings(p).map(|s| (p.clone(), s)))
        .collect::<Result<Vec<_>>>()
        .stage("import")?;
    table_from_sets(&sets).stage("import")?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = Vec::new();
    for (_, set) in &sets {
        let mods = set.modalities();
        let missing = records
            .iter()
            .filter(|r| mods.contains(&r.modality) && set.get(&r.subject_id, r.modality).is_none())
            .map(|r| (r.subject_id.clone(), r.modality))
            .collect();
        let written = out_dir.join(format!("{}.csv", set.source()));
        write_embeddings(set, &written).stage("write")?;
        out.push(ImportSummary {
            source: set.source().to_string(),
            dim: set.dim(),
            rows: set.len(),
            modalities: mods.into_iter().collect(),
            missing,
            written,
        });
    }
    Ok(out)
}

/// Score a predictions CSV (`subject_id,score,label`).
pub fn cmd_evaluate(predictions: &Path, config: &RunConfig) -> Result<EvalReport> {
    let preds = read_predictions(predictions).stage("evaluate")?;
    if preds.iter().any(|p| p.label.is_none()) {
        return Err(Error::InvalidConfig(format!(
            "{} has unlabelled rows",
            predictions.display()
        )))
        .stage("evaluate");
    }
    evaluate_predictions(&preds, config, StageSeeds::from_seed(config.seed).ci)
        .and_then(|r| r.ok_or(Error::SingleClass))
        .stage("evaluate")
}
