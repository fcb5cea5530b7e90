use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio_features::SpectrogramKind;
use crate::dataset::Modality;
use crate::error::{Error, Result};
use crate::gbdt::TrainConfig;
use crate::metrics::{DEFAULT_MIN_SPEC, DEFAULT_STEP};
use crate::selection::MAX_DROP_FRACTION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Breathing,
    Cough,
    Speech,
    /// All three modalities fused.
    All,
}

impl Track {
    pub fn modalities(self) -> Vec<Modality> {
        match self {
            Track::Breathing => vec![Modality::Breathing],
            Track::Cough => vec![Modality::Cough],
            Track::Speech => vec![Modality::Speech],
            Track::All => Modality::ALL.to_vec(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Track::Breathing => "breathing",
            Track::Cough => "cough",
            Track::Speech => "speech",
            Track::All => "all",
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Track {
    type Err = Error;

    /// Accepts modality names, `all`, or the track numbers 1 to 4.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_start_matches("track").trim_start_matches(['-', '_']) {
            "breathing" | "1" => Ok(Track::Breathing),
            "cough" | "2" => Ok(Track::Cough),
            "speech" | "3" => Ok(Track::Speech),
            "all" | "fusion" | "4" => Ok(Track::All),
            _ => Err(Error::InvalidConfig(format!("unknown track {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    /// Per-band mean and standard deviation of the spectrogram.
    Baseline,
    /// Vectors read from embedding CSV files.
    Imported,
}

impl FromStr for EmbedderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(EmbedderKind::Baseline),
            "imported" => Ok(EmbedderKind::Imported),
            _ => Err(Error::InvalidConfig(format!("unknown embedder {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub track: Track,
    pub frontend: SpectrogramKind,
    pub embedder: EmbedderKind,
    /// Embedding CSVs for the imported embedder; each modality must come
    /// from exactly one file.
    pub embeddings: Vec<PathBuf>,
    pub rho: f64,
    pub oversample_m: Option<usize>,
    pub k_neighbors: usize,
    pub train: TrainConfig,
    pub seed: u64,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Share of Dev held out for early stopping.
    pub valid_fraction: f64,
    pub min_spec: f64,
    pub threshold_step: f64,
    /// 0 disables the confidence interval.
    pub ci_runs: usize,
    pub ci_fraction: f64,
}

pub const CONFIG_KEYS: &[&str] = &[
    "track",
    "frontend",
    "embedder",
    "embeddings",
    "rho",
    "oversample_m",
    "k_neighbors",
    "seed",
    "manifest",
    "out_dir",
    "cache_dir",
    "valid_fraction",
    "min_spec",
    "threshold_step",
    "ci_runs",
    "ci_fraction",
    "learning_rate",
    "num_iterations",
    "early_stopping_rounds",
    "row_subsample",
    "feature_subsample",
    "subsample_freq",
    "num_leaves",
    "min_leaf_samples",
    "lambda",
    "min_sum_hessian",
];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            track: Track::All,
            frontend: SpectrogramKind::LogMel,
            embedder: EmbedderKind::Baseline,
            embeddings: Vec::new(),
            rho: 0.0,
            oversample_m: None,
            k_neighbors: 5,
            train: TrainConfig::default(),
            seed: 0,
            manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
            cache_dir: None,
            valid_fraction: 0.2,
            min_spec: DEFAULT_MIN_SPEC,
            threshold_step: DEFAULT_STEP,
            ci_runs: 10,
            ci_fraction: 0.8,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() || value == "none" {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "track" => self.track = v.parse()?,
            "frontend" => self.frontend = v.parse()?,
            "embedder" => self.embedder = v.parse()?,
            "embeddings" => {
                self.embeddings = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "rho" => self.rho = parse_num(key, v)?,
            "oversample_m" => {
                self.oversample_m = match v {
                    "" | "none" | "0" | "1" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "k_neighbors" => self.k_neighbors = parse_num(key, v)?,
            "seed" => {
                self.seed = parse_num(key, v)?;
                t.seed = self.seed;
            }
            "manifest" => self.manifest = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "cache_dir" => self.cache_dir = opt_path(v),
            "valid_fraction" => self.valid_fraction = parse_num(key, v)?,
            "min_spec" => self.min_spec = parse_num(key, v)?,
            "threshold_step" => self.threshold_step = parse_num(key, v)?,
            "ci_runs" => self.ci_runs = parse_num(key, v)?,
            "ci_fraction" => self.ci_fraction = parse_num(key, v)?,
            "learning_rate" => t.learning_rate = parse_num(key, v)?,
            "num_iterations" => t.num_iterations = parse_num(key, v)?,
            "early_stopping_rounds" => t.early_stopping_rounds = parse_num(key, v)?,
            "row_subsample" => t.row_subsample = parse_num(key, v)?,
            "feature_subsample" => t.feature_subsample = parse_num(key, v)?,
            "subsample_freq" => t.subsample_freq = parse_num(key, v)?,
            "num_leaves" => t.num_leaves = parse_num(key, v)?,
            "min_leaf_samples" => t.min_leaf_samples = parse_num(key, v)?,
            "lambda" => t.lambda = parse_num(key, v)?,
            "min_sum_hessian" => t.min_sum_hessian = parse_num(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a flat `key=value` file. Blank lines and `#` comments are
    /// ignored; relative paths are resolved against the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
            let k = k.trim();
            cfg.set(k, v).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            match k {
                "manifest" => cfg.manifest = base.join(&cfg.manifest),
                "out_dir" => cfg.out_dir = base.join(&cfg.out_dir),
                "cache_dir" => cfg.cache_dir = cfg.cache_dir.as_ref().map(|p| base.join(p)),
                "embeddings" => cfg.embeddings = cfg.embeddings.iter().map(|p| base.join(p)).collect(),
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifest.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("manifest is required".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("out_dir is required".into()));
        }
        if self.embedder == EmbedderKind::Imported && self.embeddings.is_empty() {
            return Err(Error::InvalidConfig("embedder=imported requires embeddings".into()));
        }
        if !(0.0..=MAX_DROP_FRACTION + 1e-12).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho {} outside [0, {MAX_DROP_FRACTION}]",
                self.rho
            )));
        }
        if let Some(m) = self.oversample_m {
            if !(2..=5).contains(&m) {
                return Err(Error::InvalidConfig(format!("oversample_m {m} outside 2..=5")));
            }
        }
        if self.k_neighbors == 0 {
            return Err(Error::InvalidConfig("k_neighbors must be positive".into()));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return Err(Error::InvalidConfig("valid_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.min_spec) {
            return Err(Error::InvalidConfig("min_spec must lie in [0, 1]".into()));
        }
        if self.ci_runs == 1 || !(self.ci_fraction > 0.0 && self.ci_fraction <= 1.0) {
            return Err(Error::InvalidConfig("ci_runs must be 0 or >= 2, ci_fraction in (0, 1]".into()));
        }
        crate::metrics::grid_steps(self.threshold_step)?;
        self.train.validate()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    /// Render as a config file that `from_file` reads back to an equal value.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let paths = |v: &[PathBuf]| {
            v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("track", self.track.to_string());
        kv("frontend", self.frontend.to_string());
        kv(
            "embedder",
            match self.embedder {
                EmbedderKind::Baseline => "baseline".into(),
                EmbedderKind::Imported => "imported".into(),
            },
        );
        kv("embeddings", paths(&self.embeddings));
        kv("rho", self.rho.to_string());
        kv("oversample_m", self.oversample_m.map_or("none".into(), |m| m.to_string()));
        kv("k_neighbors", self.k_neighbors.to_string());
        kv("seed", self.seed.to_string());
        kv("manifest", self.manifest.display().to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv(
            "cache_dir",
            self.cache_dir.as_ref().map_or("none".into(), |p| p.display().to_string()),
        );
        kv("valid_fraction", self.valid_fraction.to_string());
        kv("min_spec", self.min_spec.to_string());
        kv("threshold_step", self.threshold_step.to_string());
        kv("ci_runs", self.ci_runs.to_string());
        kv("ci_fraction", self.ci_fraction.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("num_iterations", t.num_iterations.to_string());
        kv("early_stopping_rounds", t.early_stopping_rounds.to_string());
        kv("row_subsample", t.row_subsample.to_string());
        kv("feature_subsample", t.feature_subsample.to_string());
        kv("subsample_freq", t.subsample_freq.to_string());
        kv("num_leaves", t.num_leaves.to_string());
        kv("min_leaf_samples", t.min_leaf_samples.to_string());
        kv("lambda", t.lambda.to_string());
        kv("min_sum_hessian", t.min_sum_hessian.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.manifest = dir.path().join("m.csv");
        cfg.out_dir = dir.path().join("out");
        cfg.set("rho", "0.4").unwrap();
        cfg.set("oversample_m", "3").unwrap();
        cfg.set("seed", "11").unwrap();
        cfg.set("track", "2").unwrap();
        cfg.set("embedder", "imported").unwrap();
        cfg.set("embeddings", "/a.csv, /b.csv").unwrap();
        let p = dir.path().join("run.cfg");
        fs::write(&p, cfg.to_text()).unwrap();
        let back = RunConfig::from_file(&p).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.seed, 11);
        assert_eq!(back.track, Track::Cough);
    }

    #[test]
    fn every_key_is_settable() {
        let mut cfg = RunConfig::default();
        for k in CONFIG_KEYS {
            let v = match *k {
                "track" => "all",
                "frontend" => "gammatone",
                "embedder" => "baseline",
                "embeddings" | "manifest" | "out_dir" | "cache_dir" => "x",
                "oversample_m" => "2",
                "rho" | "valid_fraction" | "min_spec" | "threshold_step" | "ci_fraction" | "learning_rate"
                | "row_subsample" | "feature_subsample" | "lambda" | "min_sum_hessian" => "0.5",
                _ => "3",
            };
            cfg.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
        assert!(cfg.set("nope", "1").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig {
            manifest: "m".into(),
            out_dir: "o".into(),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_ok());
        cfg.rho = 0.95;
        assert!(cfg.validate().is_err());
        cfg.rho = 0.0;
        cfg.oversample_m = Some(6);
        assert!(cfg.validate().is_err());
        cfg.oversample_m = None;
        cfg.embedder = EmbedderKind::Imported;
        assert!(cfg.validate().is_err());
        let bad = std::env::temp_dir().join("respscreen-bad-config.cfg");
        fs::write(&bad, "rho=abc\n").unwrap();
        assert!(matches!(RunConfig::from_file(&bad), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn track_aliases() {
        assert_eq!("track-4".parse::<Track>().unwrap(), Track::All);
        assert_eq!("1".parse::<Track>().unwrap(), Track::Breathing);
        assert!("5".parse::<Track>().is_err());
    }
}
