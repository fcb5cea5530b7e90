use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use crate::audio_features::{
    compute_spectrogram, load_audio, normalize, read_spectrogram_dump, write_spectrogram_dump,
    Spectrogram, SpectrogramConfig, SpectrogramKind,
};
use crate::dataset::{load_manifest, ManifestRecord, Modality};
use crate::embeddings::{baseline_dim, baseline_embed, read_embeddings, EmbeddingSet, EmbeddingVector};
use crate::error::{Error, Result};
use crate::par;

/// Bumped whenever cached values would change.
const CACHE_VERSION: &str = "respscreen-baseline-v1";

pub fn spectrogram_for(path: &Path, kind: SpectrogramKind) -> Result<Spectrogram> {
    let clip = normalize(&load_audio(path)?)?;
    compute_spectrogram(&clip, &SpectrogramConfig::standard(kind))
}

pub fn dump_path(out_dir: &Path, rec: &ManifestRecord, kind: SpectrogramKind) -> PathBuf {
    out_dir.join(format!("{}_{}.{}.f32", rec.subject_id, rec.modality, kind))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeaturesSummary {
    pub written: usize,
    pub skipped: usize,
    /// Records whose audio could not be processed, with the reason.
    pub failed: Vec<(PathBuf, String)>,
}

/// Write one spectrogram dump per manifest record. Existing dumps are kept,
/// so an interrupted run can be resumed. Per-record failures are collected
/// rather than aborting the run.
pub fn cmd_features(manifest: &Path, kind: SpectrogramKind, out_dir: &Path) -> Result<FeaturesSummary> {
    let records = load_manifest(manifest)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let outcomes = par::map_slice(&records, |rec| -> std::result::Result<bool, String> {
        let out = dump_path(out_dir, rec, kind);
        let mut hdr = out.clone().into_os_string();
        hdr.push(".hdr");
        if out.exists() && Path::new(&hdr).exists() {
            return Ok(false);
        }
        let spec = spectrogram_for(&rec.path, kind).map_err(|e| e.to_string())?;
        // Write under a temporary name so a crash never leaves a partial dump
        // that would be skipped on the next run.
        let tmp = out.with_extension("partial");
        write_spectrogram_dump(&tmp, &spec).map_err(|e| e.to_string())?;
        let mut tmp_hdr = tmp.clone().into_os_string();
        tmp_hdr.push(".hdr");
        fs::rename(&tmp_hdr, &hdr).map_err(|e| e.to_string())?;
        fs::rename(&tmp, &out).map_err(|e| e.to_string())?;
        Ok(true)
    });
    let mut summary = FeaturesSummary::default();
    for (rec, o) in records.iter().zip(outcomes) {
        match o {
            Ok(true) => summary.written += 1,
            Ok(false) => summary.skipped += 1,
            Err(reason) => summary.failed.push((rec.path.clone(), reason)),
        }
    }
    Ok(summary)
}

fn cache_key(audio: &[u8], kind: SpectrogramKind) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_VERSION.as_bytes());
    h.update(
        serde_json::to_string(&SpectrogramConfig::standard(kind))
            .expect("config serializes")
            .as_bytes(),
    );
    h.update((audio.len() as u64).to_le_bytes());
    h.update(audio);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn read_cached(path: &Path, dim: usize) -> Option<Vec<f64>> {
    let text = fs::read_to_string(path).ok()?;
    let v: Vec<f64> = text.lines().map(|l| l.parse().ok()).collect::<Option<_>>()?;
    (v.len() == dim).then_some(v)
}

fn write_cached(path: &Path, values: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(values.len() * 20);
    for v in values {
        s.push_str(&format!("{v}\n"));
    }
    static NEXT: AtomicUsize = AtomicUsize::new(0);
    let n = NEXT.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("{}-{n}.tmp", std::process::id()));
    fs::write(&tmp, s).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Baseline embedding of one audio file, memoized on disk by a hash of the
/// file contents and the front-end configuration.
pub fn cached_baseline(path: &Path, kind: SpectrogramKind, cache_dir: Option<&Path>) -> Result<Vec<f64>> {
    let dim = baseline_dim(SpectrogramConfig::standard(kind).bands);
    let Some(dir) = cache_dir else {
        return baseline_embed(&spectrogram_for(path, kind)?);
    };
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let entry = dir.join(format!("{}.emb", cache_key(&bytes, kind)));
    if let Some(v) = read_cached(&entry, dim) {
        return Ok(v);
    }
    let v = baseline_embed(&spectrogram_for(path, kind)?)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cached(&entry, &v)?;
    Ok(v)
}

pub fn baseline_source(kind: SpectrogramKind) -> String {
    format!("baseline-{kind}")
}

/// Baseline embeddings for every record whose modality is in `modalities`.
/// The first failing record aborts with its path in the message.
pub fn baseline_embeddings(
    records: &[ManifestRecord],
    modalities: &[Modality],
    kind: SpectrogramKind,
    cache_dir: Option<&Path>,
) -> Result<EmbeddingSet> {
    let wanted: Vec<&ManifestRecord> = records.iter().filter(|r| modalities.contains(&r.modality)).collect();
    let values = par::map_slice(&wanted, |rec| cached_baseline(&rec.path, kind, cache_dir));
    let source = baseline_source(kind);
    let mut vectors = Vec::with_capacity(wanted.len());
    for (rec, v) in wanted.iter().zip(values) {
        let values = v.map_err(|e| Error::InFile {
            path: rec.path.clone(),
            source: Box::new(e),
        })?;
        vectors.push(EmbeddingVector {
            subject_id: rec.subject_id.clone(),
            modality: rec.modality,
            source: source.clone(),
            values,
        });
    }
    let dim = baseline_dim(SpectrogramConfig::standard(kind).bands);
    EmbeddingSet::new(source, dim, vectors)
}

/// Compute baseline embeddings from existing spectrogram dumps instead of
/// audio, for records whose dump exists.
pub fn baseline_from_dump(path: &Path) -> Result<Vec<f64>> {
    baseline_embed(&read_spectrogram_dump(path)?)
}

/// Vectors for each modality, keyed by subject. Each modality must be
/// provided by exactly one of the loaded sets.
pub type ModalityTable = BTreeMap<Modality, (String, BTreeMap<String, Vec<f64>>)>;

pub fn table_from_sets(sets: &[(PathBuf, EmbeddingSet)]) -> Result<ModalityTable> {
    let mut table: ModalityTable = BTreeMap::new();
    let mut owner: BTreeMap<Modality, &Path> = BTreeMap::new();
    for (path, set) in sets {
        for m in set.modalities() {
            if let Some(prev) = owner.insert(m, path) {
                return Err(Error::DuplicateKey(format!(
                    "modality {m} appears in both {} and {}",
                    prev.display(),
                    path.display()
                )));
            }
            let rows = set
                .by_subject(m)
                .into_iter()
                .map(|(s, v)| (s.to_string(), v.values.clone()))
                .collect();
            table.insert(m, (set.source().to_string(), rows));
        }
    }
    Ok(table)
}

pub fn load_imported(paths: &[PathBuf]) -> Result<ModalityTable> {
    let sets = paths
        .iter()
        .map(|p| read_embeddings(p).map(|s| (p.clone(), s)))
        .collect::<Result<Vec<_>>>()?;
    table_from_sets(&sets)
}
