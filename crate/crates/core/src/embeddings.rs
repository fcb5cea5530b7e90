//! Embedding vectors: the built-in pooled baseline, time averaging of
//! segment embeddings, fixed-order concatenation across modalities, and the
//! CSV exchange format shared with external extractors.
//!
//! File format (UTF-8 CSV):
//!
//! ```text
//! subject_id,modality,source,dim,v0,v1,...,v{dim-1}
//! subj0001,cough,trill,512,0.125,-3.5e-7,...
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so a write/read
//! cycle is bit-exact for finite values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::audio_features::Spectrogram;
use crate::dataset::Modality;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub subject_id: String,
    pub modality: Modality,
    pub source: String,
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Vectors from one embedder: shared dimensionality and source, unique
/// `(subject_id, modality)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    vectors: Vec<EmbeddingVector>,
    dim: usize,
    source: String,
}

impl EmbeddingSet {
    pub fn new(source: impl Into<String>, dim: usize, vectors: Vec<EmbeddingVector>) -> Result<Self> {
        let source = source.into();
        validate_token(&source, "source")?;
        let mut keys = BTreeSet::new();
        for (i, v) in vectors.iter().enumerate() {
            if v.dim() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "vector {i} ({}, {}) has dim {}, set dim is {dim}",
                    v.subject_id,
                    v.modality,
                    v.dim()
                )));
            }
            if v.source != source {
                return Err(Error::InvalidConfig(format!(
                    "vector {i} has source {:?}, set source is {source:?}",
                    v.source
                )));
            }
            if let Some(bad) = v.values.iter().find(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{bad} in embedding of ({}, {})",
                    v.subject_id, v.modality
                )));
            }
            if !keys.insert((v.subject_id.as_str(), v.modality)) {
                return Err(Error::DuplicateKey(format!("({}, {})", v.subject_id, v.modality)));
            }
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        Ok(EmbeddingSet {
            vectors,
            dim,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn modalities(&self) -> BTreeSet<Modality> {
        self.vectors.iter().map(|v| v.modality).collect()
    }

    pub fn get(&self, subject_id: &str, modality: Modality) -> Option<&EmbeddingVector> {
        self.vectors
            .iter()
            .find(|v| v.modality == modality && v.subject_id == subject_id)
    }

    /// Map from subject to vector for one modality.
    pub fn by_subject(&self, modality: Modality) -> BTreeMap<&str, &EmbeddingVector> {
        self.vectors
            .iter()
            .filter(|v| v.modality == modality)
            .map(|v| (v.subject_id.as_str(), v))
            .collect()
    }
}

fn validate_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r', '"']) {
        return Err(Error::InvalidConfig(format!(
            "{what} {s:?} must be nonempty and free of commas, quotes and newlines"
        )));
    }
    Ok(())
}

/// Dimensionality of [`baseline_embed`] for a spectrogram with `bands` rows.
pub fn baseline_dim(bands: usize) -> usize {
    2 * bands
}

/// Per-band temporal mean followed by per-band temporal (population)
/// standard deviation. A 128-band spectrogram gives 256 values.
pub fn baseline_embed(spec: &Spectrogram) -> Result<Vec<f64>> {
    let m = &spec.matrix;
    if !m.all_finite() {
        return Err(Error::NonFinite("spectrogram contains non-finite entries".into()));
    }
    if m.cols() == 0 {
        return Err(Error::ShapeMismatch("spectrogram has no frames".into()));
    }
    let bands = m.rows();
    let mut out = vec![0.0; 2 * bands];
    for b in 0..bands {
        // Welford
        let (mut mean, mut m2) = (0.0, 0.0);
        for (k, &x) in m.row(b).iter().enumerate() {
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        out[b] = mean;
        out[bands + b] = (m2 / m.cols() as f64).sqrt();
    }
    Ok(out)
}

/// Element-wise mean of equal-length segment embeddings.
pub fn average_time_embeddings(segments: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = segments.first() else {
        return Err(Error::InvalidConfig("no segment embeddings to average".into()));
    };
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for (i, s) in segments.iter().enumerate() {
        if s.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "segment {i} has dim {}, expected {dim}",
                s.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let n = segments.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Per-modality vectors joined end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedding {
    pub subject_id: String,
    /// Joined with `+`, in canonical modality order.
    pub source: String,
    pub values: Vec<f64>,
    /// Where each modality's vector sits inside `values`.
    pub segments: Vec<(Modality, Range<usize>)>,
}

impl FusedEmbedding {
    pub fn slice(&self, modality: Modality) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|(m, _)| *m == modality)
            .map(|(_, r)| &self.values[r.clone()])
    }
}

/// Concatenate the requested modalities in the canonical order breathing,
/// cough, speech, whatever order they were requested in.
pub fn concat_fusion(
    per_modality: &BTreeMap<Modality, EmbeddingVector>,
    order: &[Modality],
) -> Result<FusedEmbedding> {
    let wanted: BTreeSet<Modality> = order.iter().copied().collect();
    if wanted.is_empty() {
        return Err(Error::InvalidConfig("no modalities requested for fusion".into()));
    }
    let mut subject: Option<&str> = None;
    let mut values = Vec::new();
    let mut segments = Vec::with_capacity(wanted.len());
    let mut sources = Vec::with_capacity(wanted.len());
    for m in wanted {
        let v = per_modality.get(&m).ok_or_else(|| Error::MissingModality {
            subject: subject.unwrap_or("?").to_string(),
            modality: m.to_string(),
        })?;
        match subject {
            None => subject = Some(&v.subject_id),
            Some(s) if s != v.subject_id => {
                return Err(Error::SubjectMismatch(s.to_string(), v.subject_id.clone()))
            }
            _ => {}
        }
        let start = values.len();
        values.extend_from_slice(&v.values);
        segments.push((m, start..values.len()));
        sources.push(v.source.as_str());
    }
    Ok(FusedEmbedding {
        subject_id: subject.unwrap_or_default().to_string(),
        source: sources.join("+"),
        values,
        segments,
    })
}

fn header_line(dim: usize) -> String {
    let mut h = String::from("subject_id,modality,source,dim");
    for i in 0..dim {
        h.push_str(&format!(",v{i}"));
    }
    h
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = header_line(set.dim);
    out.push('\n');
    for v in &set.vectors {
        validate_token(&v.subject_id, "subject_id")?;
        out.push_str(&format!("{},{},{},{}", v.subject_id, v.modality, v.source, v.dim()));
        for x in &v.values {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

fn parse_embeddings(text: &str, origin: &Path) -> Result<EmbeddingSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(Error::parse(origin, 1, "empty file, header expected"));
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[..4] != ["subject_id", "modality", "source", "dim"] {
        return Err(Error::parse(
            origin,
            1,
            "header must start with subject_id,modality,source,dim,v0",
        ));
    }
    for (i, c) in cols[4..].iter().enumerate() {
        if *c != format!("v{i}") {
            return Err(Error::parse(origin, 1, format!("column {} should be v{i}, found {c}", i + 4)));
        }
    }
    let dim = cols.len() - 4;

    let mut vectors = Vec::new();
    let mut source: Option<String> = None;
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::parse(origin, lineno, "truncated row"));
        }
        let row_dim: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad dim {:?}", fields[3])))?;
        if row_dim != dim {
            return Err(Error::parse(
                origin,
                lineno,
                format!("row for subject {} declares dim {row_dim}, file dim is {dim}", fields[0]),
            ));
        }
        if fields.len() != 4 + dim {
            return Err(Error::parse(
                origin,
                lineno,
                format!("row for subject {} has {} values, expected {dim}", fields[0], fields.len() - 4),
            ));
        }
        let modality: Modality = fields[1]
            .parse()
            .map_err(|e: Error| Error::parse(origin, lineno, e.to_string()))?;
        match &source {
            None => source = Some(fields[2].to_string()),
            Some(s) if s != fields[2] => {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("source {} differs from {s}", fields[2]),
                ))
            }
            _ => {}
        }
        let values = fields[4..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(origin, lineno, format!("bad value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        vectors.push(EmbeddingVector {
            subject_id: fields[0].to_string(),
            modality,
            source: fields[2].to_string(),
            values,
        });
    }
    let source = source.unwrap_or_else(|| "unknown".to_string());
    EmbeddingSet::new(source, dim, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_features::{SpectrogramConfig, SpectrogramKind};
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn spec_from(m: Matrix) -> Spectrogram {
        Spectrogram {
            matrix: m,
            kind: SpectrogramKind::LogMel,
            config: SpectrogramConfig::standard(SpectrogramKind::LogMel),
        }
    }

    fn ev(id: &str, m: Modality, source: &str, values: Vec<f64>) -> EmbeddingVector {
        EmbeddingVector {
            subject_id: id.into(),
            modality: m,
            source: source.into(),
            values,
        }
    }

    #[test]
    fn baseline_constant_matrix() {
        let e = baseline_embed(&spec_from(Matrix::filled(128, 154, -3.25))).unwrap();
        assert_eq!(e.len(), 256);
        assert!(e[..128].iter().all(|&v| v == -3.25));
        assert!(e[128..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn baseline_matches_two_pass_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..128 * 154).map(|_| rng.gen_range(-30.0..5.0)).collect();
        let m = Matrix::from_vec(128, 154, data).unwrap();
        let e = baseline_embed(&spec_from(m.clone())).unwrap();
        for b in 0..128 {
            let row = m.row(b);
            let mean = row.iter().sum::<f64>() / 154.0;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 154.0;
            assert!((e[b] - mean).abs() < 1e-9);
            assert!((e[128 + b] - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn baseline_rejects_nan() {
        let mut m = Matrix::filled(4, 4, 0.0);
        m.set(1, 1, f64::NAN);
        assert!(matches!(baseline_embed(&spec_from(m)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn averaging_cases() {
        assert_eq!(average_time_embeddings(&[vec![1.0, 2.0]]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(
            average_time_embeddings(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap(),
            vec![1.0, 1.0]
        );
        assert!(average_time_embeddings(&[]).is_err());
        assert!(average_time_embeddings(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn ten_one_second_segments_pool_to_one_vector() {
        let segs: Vec<Vec<f64>> = (0..10)
            .map(|s| (0..6).map(|d| (s * 7 + d) as f64 * 0.1).collect())
            .collect();
        let avg = average_time_embeddings(&segs).unwrap();
        for d in 0..6 {
            let sum: f64 = segs.iter().map(|s| s[d]).sum();
            assert!((avg[d] - sum / 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_is_canonical_and_sliceable() {
        let mut per = BTreeMap::new();
        per.insert(Modality::Speech, ev("s1", Modality::Speech, "openl3", vec![3.0; 256]));
        per.insert(Modality::Breathing, ev("s1", Modality::Breathing, "pann", vec![1.0; 256]));
        per.insert(Modality::Cough, ev("s1", Modality::Cough, "trill", vec![2.0; 256]));
        let f = concat_fusion(&per, &[Modality::Speech, Modality::Cough, Modality::Breathing]).unwrap();
        assert_eq!(f.values.len(), 768);
        assert_eq!(f.source, "pann+trill+openl3");
        assert_eq!(&f.values[..256], per[&Modality::Breathing].values.as_slice());
        for (m, v) in &per {
            assert_eq!(f.slice(*m).unwrap(), v.values.as_slice());
        }

        let single = concat_fusion(&per, &[Modality::Cough]).unwrap();
        assert_eq!(single.values, per[&Modality::Cough].values);
    }

    #[test]
    fn fusion_errors() {
        let mut per = BTreeMap::new();
        per.insert(Modality::Cough, ev("a", Modality::Cough, "x", vec![1.0]));
        assert!(matches!(
            concat_fusion(&per, &[Modality::Cough, Modality::Speech]),
            Err(Error::MissingModality { .. })
        ));
        per.insert(Modality::Speech, ev("b", Modality::Speech, "x", vec![1.0]));
        assert!(matches!(
            concat_fusion(&per, &[Modality::Cough, Modality::Speech]),
            Err(Error::SubjectMismatch(..))
        ));
    }

    #[test]
    fn wrong_dim_row_is_named() {
        let text = "subject_id,modality,source,dim,v0,v1\nA,cough,x,2,1,2\nB,cough,x,3,1,2,3\n";
        let err = parse_embeddings(text, Path::new("e.csv")).unwrap_err().to_string();
        assert!(err.contains("e.csv:3") && err.contains("subject B"), "{err}");
        let bad_header = "subject,modality,source,dim,v0\n";
        assert!(parse_embeddings(bad_header, Path::new("e.csv")).is_err());
        let dup = "subject_id,modality,source,dim,v0\nA,cough,x,1,1\nA,cough,x,1,2\n";
        assert!(matches!(
            parse_embeddings(dup, Path::new("e.csv")),
            Err(Error::DuplicateKey(_))
        ));
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            -1e6..1e6f64,
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(finite(), 5), 1..6)
        ) {
            let vectors = rows
                .into_iter()
                .enumerate()
                .map(|(i, v)| ev(&format!("s{i}"), Modality::ALL[i % 3], "emb", v))
                .collect();
            let set = EmbeddingSet::new("emb", 5, vectors).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("e.csv");
            write_embeddings(&set, &p).unwrap();
            let back = read_embeddings(&p).unwrap();
            for (a, b) in back.vectors().iter().zip(set.vectors()) {
                let ab: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
            prop_assert_eq!(back, set);
        }

        #[test]
        fn averaging_is_permutation_invariant(
            segs in prop::collection::vec(prop::collection::vec(-1000i32..1000, 4), 1..12),
            rot in 0usize..12,
        ) {
            // integer-valued entries keep every partial sum exact
            let segs: Vec<Vec<f64>> =
                segs.iter().map(|s| s.iter().map(|&v| v as f64).collect()).collect();
            let mut rotated = segs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            prop_assert_eq!(
                average_time_embeddings(&segs).unwrap(),
                average_time_embeddings(&rotated).unwrap()
            );
        }
    }
}
