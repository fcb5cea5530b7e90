use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{write_manifest, Label, ManifestRecord, Modality, Split};
use crate::audio_features::{write_wav_i16, AudioClip};
use crate::error::{Error, Result};
use crate::{par, seeds};

/// Knobs of the synthetic corpus.
///
/// Every clip is pink-ish noise with a modality-specific spectral tilt.
/// A positive subject shows a `boost_db` energy boost in the modality's
/// designated band, independently per modality with probability `presence`,
/// so no single modality identifies every positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub n_dev: usize,
    pub n_test: usize,
    pub positive_rate: f64,
    pub rate: u32,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub boost_db: f64,
    pub presence: f64,
    pub gain_jitter_db: f64,
}

impl SynthParams {
    pub fn new(seed: u64, n_dev: usize, n_test: usize, positive_rate: f64) -> Self {
        SynthParams {
            seed,
            n_dev,
            n_test,
            positive_rate,
            rate: 16_000,
            min_seconds: 3.0,
            max_seconds: 6.0,
            boost_db: 6.0,
            presence: 0.75,
            gain_jitter_db: 1.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_dev == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("subject counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) || !(0.0..=1.0).contains(&self.presence) {
            return Err(Error::InvalidConfig("rates must lie in [0, 1]".into()));
        }
        if !(self.min_seconds > 0.0 && self.min_seconds <= self.max_seconds) {
            return Err(Error::InvalidConfig("bad clip duration range".into()));
        }
        Ok(())
    }
}

/// Frequency band (Hz) carrying the class signal for each modality.
pub fn designated_band(modality: Modality) -> (f64, f64) {
    match modality {
        Modality::Breathing => (400.0, 700.0),
        Modality::Cough => (1500.0, 2100.0),
        Modality::Speech => (3000.0, 3800.0),
    }
}

fn spectral_tilt(modality: Modality) -> f64 {
    match modality {
        Modality::Breathing => 1.0,
        Modality::Cough => 0.6,
        Modality::Speech => 0.8,
    }
}

fn positives_count(n: usize, rate: f64) -> usize {
    ((n as f64 * rate).round() as usize).min(n)
}

/// Write a deterministic synthetic corpus under `out_dir` and return the
/// manifest path. Audio goes to `out_dir/audio/<subject>_<modality>.wav`.
pub fn synth_corpus(params: &SynthParams, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    params.validate()?;
    let out_dir = out_dir.as_ref();
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;

    let mut labels = Vec::with_capacity(params.n_dev + params.n_test);
    let mut rng = seeds::rng(params.seed, &[seeds::tag("synth-labels")]);
    for (n, split) in [(params.n_dev, Split::Dev), (params.n_test, Split::Test)] {
        let mut block = vec![Label::Negative; n];
        block[..positives_count(n, params.positive_rate)].fill(Label::Positive);
        block.shuffle(&mut rng);
        labels.extend(block.into_iter().map(|l| (l, split)));
    }

    let mut records = Vec::with_capacity(labels.len() * 3);
    for (i, &(label, split)) in labels.iter().enumerate() {
        for m in Modality::ALL {
            let id = format!("subj{i:04}");
            records.push(ManifestRecord {
                path: PathBuf::from(format!("audio/{id}_{m}.wav")),
                subject_id: id,
                modality: m,
                label: Some(label),
                split,
            });
        }
    }

    let results = par::map_range(records.len(), |j| {
        let r = &records[j];
        let clip = synth_clip(params, j / 3, r.modality, r.label == Some(Label::Positive));
        write_wav_i16(out_dir.join(&r.path), &clip)
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;

    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

fn synth_clip(params: &SynthParams, subject: usize, modality: Modality, positive: bool) -> AudioClip {
    let mut rng = seeds::rng(
        params.seed,
        &[seeds::tag("synth-clip"), subject as u64, modality as u64],
    );
    let rate = params.rate as f64;
    // whole 10 ms steps
    let step = (params.rate / 100).max(1) as usize;
    let seconds = rng.gen_range(params.min_seconds..=params.max_seconds);
    let len = (((seconds * rate) as usize) / step).max(1) * step;
    let present = positive && rng.gen_bool(params.presence);
    let jitter_db = rng.gen_range(-params.gain_jitter_db..=params.gain_jitter_db);

    let mut spec: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut spec);

    let tilt = spectral_tilt(modality);
    let (band_lo, band_hi) = designated_band(modality);
    let boost = 10f64.powf(params.boost_db / 20.0);
    spec[0] = Complex::new(0.0, 0.0);
    let mut energy = 0.0;
    for k in 1..=len / 2 {
        let f = k as f64 * rate / len as f64;
        let shape = (f.max(50.0) / 1000.0).powf(-tilt / 2.0);
        let mirror = len - k;
        spec[k] *= shape;
        if mirror != k {
            spec[mirror] *= shape;
            energy += 2.0 * spec[k].norm_sqr();
        } else {
            energy += spec[k].norm_sqr();
        }
        if present && f >= band_lo && f <= band_hi {
            spec[k] *= boost;
            if mirror != k {
                spec[mirror] *= boost;
            }
        }
    }
    planner.plan_fft_inverse(len).process(&mut spec);

    // level fixed from the unboosted spectrum so the boost adds energy
    let rms = (energy / (len as f64 * len as f64)).sqrt();
    let level = 0.05 * 10f64.powf(jitter_db / 20.0);
    let scale = level / (rms * len as f64);
    AudioClip {
        samples: spec.iter().map(|c| c.re * scale).collect(),
        rate: params.rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_manifest, summarize_splits};

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let p = SynthParams::new(11, 4, 2, 0.5);
        let ma = synth_corpus(&p, a.path()).unwrap();
        let mb = synth_corpus(&p, b.path()).unwrap();
        assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());
        for r in load_manifest(&ma).unwrap() {
            let rel = r.path.strip_prefix(a.path()).unwrap();
            assert_eq!(fs::read(&r.path).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn bookkeeping_matches_request() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_corpus(&SynthParams::new(3, 40, 20, 0.25), dir.path()).unwrap();
        let recs = load_manifest(m).unwrap();
        assert_eq!(recs.len(), 180);
        let s = summarize_splits(&recs);
        assert_eq!((s.dev_count, s.test_count, s.dev_positive), (40, 20, 10));
    }

    #[test]
    fn zero_positive_rate_is_all_negative() {
        let dir = tempfile::tempdir().unwrap();
        let m = synth_corpus(&SynthParams::new(3, 5, 5, 0.0), dir.path()).unwrap();
        let recs = load_manifest(m).unwrap();
        assert!(recs.iter().all(|r| r.label == Some(Label::Negative)));
    }

    #[test]
    fn clip_level_and_length() {
        let p = SynthParams::new(5, 1, 1, 0.0);
        let c = synth_clip(&p, 0, Modality::Cough, false);
        assert!(c.len() >= 48_000 && c.len() <= 96_000 && c.len() % 160 == 0);
        let rms = (c.samples.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt();
        let lo = 0.05 * 10f64.powf(-1.5 / 20.0);
        let hi = 0.05 * 10f64.powf(1.5 / 20.0);
        assert!(rms >= lo * 0.999 && rms <= hi * 1.001, "rms {rms}");
    }

    #[test]
    fn rejects_zero_counts() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_corpus(&SynthParams::new(1, 0, 3, 0.2), dir.path()).is_err());
    }
}
