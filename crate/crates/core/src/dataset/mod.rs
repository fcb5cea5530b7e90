//! Manifest handling, split bookkeeping and the synthetic corpus generator.

mod synth;

pub use synth::{designated_band, synth_corpus, SynthParams};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recording type. The derived order (breathing, cough, speech) is the
/// canonical fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Breathing,
    Cough,
    Speech,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Breathing, Modality::Cough, Modality::Speech];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Breathing => "breathing",
            Modality::Cough => "cough",
            Modality::Speech => "speech",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "breathing" => Ok(Modality::Breathing),
            "cough" => Ok(Modality::Cough),
            "speech" => Ok(Modality::Speech),
            _ => Err(Error::InvalidConfig(format!("unknown modality {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "p",
            Label::Negative => "n",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" => Ok(Label::Positive),
            "n" => Ok(Label::Negative),
            _ => Err(Error::InvalidConfig(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidConfig(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub subject_id: String,
    pub modality: Modality,
    /// Resolved against the manifest's directory when relative.
    pub path: PathBuf,
    /// Always present for dev records.
    pub label: Option<Label>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitSummary {
    pub dev_count: usize,
    pub test_count: usize,
    pub dev_positive: usize,
}

impl SplitSummary {
    pub fn dev_negative(&self) -> usize {
        self.dev_count - self.dev_positive
    }
}

pub const MANIFEST_HEADER: &str = "subject_id,modality,path,label,split";
const COLUMNS: [&str; 5] = ["subject_id", "modality", "path", "label", "split"];

/// Parse and validate a manifest CSV. Columns are located by header name.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, path, &base)
}

fn parse_manifest(text: &str, origin: &Path, base: &Path) -> Result<Vec<ManifestRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(Error::parse(origin, 1, "empty manifest, header expected"));
    };
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut col = [0usize; 5];
    for (slot, want) in col.iter_mut().zip(COLUMNS) {
        *slot = names
            .iter()
            .position(|n| *n == want)
            .ok_or_else(|| Error::parse(origin, 1, format!("missing column {want}")))?;
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    let mut subject_meta: HashMap<String, (Option<Label>, Split)> = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::parse(
                origin,
                lineno,
                format!("{} fields, header has {}", fields.len(), names.len()),
            ));
        }
        let bad = |e: Error| Error::parse(origin, lineno, e.to_string());
        let subject_id = fields[col[0]].to_string();
        if subject_id.is_empty() {
            return Err(Error::parse(origin, lineno, "empty subject_id"));
        }
        let modality: Modality = fields[col[1]].parse().map_err(bad)?;
        let label = match fields[col[3]] {
            "" => None,
            s => Some(s.parse::<Label>().map_err(bad)?),
        };
        let split: Split = fields[col[4]].parse().map_err(bad)?;
        if split == Split::Dev && label.is_none() {
            return Err(Error::parse(origin, lineno, "dev record without label"));
        }
        let raw = PathBuf::from(fields[col[2]]);
        let path = if raw.is_relative() { base.join(raw) } else { raw };

        if !seen.insert((subject_id.clone(), modality)) {
            return Err(Error::DuplicateKey(format!("({subject_id}, {modality})")));
        }
        match subject_meta.get(&subject_id) {
            Some(&(l, s)) if l != label || s != split => {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("subject {subject_id} has inconsistent label or split"),
                ))
            }
            _ => {
                subject_meta.insert(subject_id.clone(), (label, split));
            }
        }
        records.push(ManifestRecord {
            subject_id,
            modality,
            path,
            label,
            split,
        });
    }
    Ok(records)
}

/// Write records with the standard header. Paths are written as given.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        let p = r.path.to_string_lossy();
        if r.subject_id.contains(',') || p.contains(',') {
            return Err(Error::InvalidConfig(format!(
                "field of subject {} contains a comma",
                r.subject_id
            )));
        }
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.subject_id,
            r.modality,
            p,
            r.label.map_or("", Label::as_str),
            r.split.as_str()
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Count distinct subjects per split and dev positives.
pub fn summarize_splits(records: &[ManifestRecord]) -> SplitSummary {
    let mut subjects: BTreeMap<&str, (Split, Option<Label>)> = BTreeMap::new();
    for r in records {
        subjects.entry(&r.subject_id).or_insert((r.split, r.label));
    }
    let mut s = SplitSummary::default();
    for (split, label) in subjects.values() {
        match split {
            Split::Dev => {
                s.dev_count += 1;
                if label.is_some_and(Label::is_positive) {
                    s.dev_positive += 1;
                }
            }
            Split::Test => s.test_count += 1,
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, m: Modality, label: Label, split: Split) -> ManifestRecord {
        ManifestRecord {
            subject_id: id.into(),
            modality: m,
            path: PathBuf::from(format!("/audio/{id}_{m}.wav")),
            label: Some(label),
            split,
        }
    }

    #[test]
    fn challenge_shaped_counts() {
        let mut records = Vec::new();
        for i in 0..1436 {
            let split = if i < 965 { Split::Dev } else { Split::Test };
            let label = if i < 172 { Label::Positive } else { Label::Negative };
            for m in Modality::ALL {
                records.push(rec(&format!("s{i}"), m, label, split));
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_manifest(&p, &records).unwrap();
        let loaded = load_manifest(&p).unwrap();
        assert_eq!(loaded, records);
        let s = summarize_splits(&loaded);
        assert_eq!(
            s,
            SplitSummary {
                dev_count: 965,
                test_count: 471,
                dev_positive: 172
            }
        );
        assert_eq!(s.dev_negative(), 793);

        let mut shuffled = loaded.clone();
        shuffled.reverse();
        assert_eq!(summarize_splits(&shuffled), s);
    }

    #[test]
    fn header_only_is_empty() {
        let recs = parse_manifest("subject_id,modality,path,label,split\n", Path::new("m"), Path::new(""))
            .unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn all_test_manifest() {
        let recs = vec![rec("a", Modality::Cough, Label::Negative, Split::Test)];
        let s = summarize_splits(&recs);
        assert_eq!((s.dev_count, s.test_count), (0, 1));
    }

    #[test]
    fn validation_errors() {
        let base = Path::new("/data");
        let dup = "subject_id,modality,path,label,split\na,cough,x.wav,p,dev\na,cough,y.wav,p,dev\n";
        match parse_manifest(dup, Path::new("m"), base) {
            Err(Error::DuplicateKey(k)) => assert!(k.contains('a') && k.contains("cough")),
            other => panic!("expected duplicate error, got {other:?}"),
        }
        let missing = "subject_id,modality,path,label\na,cough,x.wav,p\n";
        assert!(parse_manifest(missing, Path::new("m"), base)
            .unwrap_err()
            .to_string()
            .contains("missing column split"));
        let bad_mod = "subject_id,modality,path,label,split\na,sneeze,x.wav,p,dev\n";
        assert!(parse_manifest(bad_mod, Path::new("m"), base).is_err());
        let bad_label = "subject_id,modality,path,label,split\na,cough,x.wav,maybe,dev\n";
        assert!(parse_manifest(bad_label, Path::new("m"), base).is_err());
        let unlabeled_dev = "subject_id,modality,path,label,split\na,cough,x.wav,,dev\n";
        assert!(parse_manifest(unlabeled_dev, Path::new("m"), base).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let text = "subject_id,modality,path,label,split\na,cough,audio/a.wav,,test\n";
        let recs = parse_manifest(text, Path::new("m"), Path::new("/data")).unwrap();
        assert_eq!(recs[0].path, PathBuf::from("/data/audio/a.wav"));
        assert_eq!(recs[0].label, None);
    }
}
