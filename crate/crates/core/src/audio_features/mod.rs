//! Audio ingestion, duration/rate normalization and the three low-level
//! spectrogram front-ends (log-Mel, gammatone, Morse scalogram).
//!
//! Every front-end produces a `bands x frames` matrix on the same time grid
//! (2048-sample window, 1024-sample hop, 154 frames for a 10 s clip at
//! 16 kHz), band index increasing with frequency.

mod clip;
mod dump;
mod gammatone;
mod mel;
mod resample;
mod scalogram;
mod stft;

pub use clip::{load_audio, normalize, tile_to_duration, write_wav_i16, AudioClip};
pub use dump::{read_spectrogram_dump, write_spectrogram_dump};
pub use gammatone::{erb_center_frequencies, gammatonegram};
pub use mel::{hz_to_mel, log_mel, mel_to_hz, MelFilterbank};
pub use resample::resample;
pub use scalogram::{morse_peak_frequency, scalogram, scalogram_frequencies};
pub use stft::{hann_window, stft_power, PowerSpectrum};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Sample rate every clip is brought to before feature extraction.
pub const TARGET_RATE: u32 = 16_000;
/// Duration every clip is tiled or truncated to.
pub const TARGET_SECONDS: f64 = 10.0;
/// Samples in a normalized clip.
pub const TARGET_LEN: usize = 160_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrogramKind {
    LogMel,
    Gammatone,
    Scalogram,
}

impl SpectrogramKind {
    pub const ALL: [SpectrogramKind; 3] = [
        SpectrogramKind::LogMel,
        SpectrogramKind::Gammatone,
        SpectrogramKind::Scalogram,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpectrogramKind::LogMel => "logmel",
            SpectrogramKind::Gammatone => "gammatone",
            SpectrogramKind::Scalogram => "scalogram",
        }
    }
}

impl fmt::Display for SpectrogramKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpectrogramKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "logmel" | "mel" => Ok(SpectrogramKind::LogMel),
            "gammatone" | "gammatonegram" => Ok(SpectrogramKind::Gammatone),
            "scalogram" | "cwt" => Ok(SpectrogramKind::Scalogram),
            _ => Err(Error::InvalidConfig(format!("unknown spectrogram kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub window: usize,
    pub hop: usize,
    pub bands: usize,
    pub frames: usize,
    pub kind: SpectrogramKind,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl SpectrogramConfig {
    /// The fixed 128x154 geometry used throughout the pipeline.
    pub fn standard(kind: SpectrogramKind) -> Self {
        let fmin = match kind {
            SpectrogramKind::LogMel => 0.0,
            SpectrogramKind::Gammatone | SpectrogramKind::Scalogram => 50.0,
        };
        SpectrogramConfig {
            window: 2048,
            hop: 1024,
            bands: 128,
            frames: 154,
            kind,
            fmin,
            fmax: 8000.0,
            log_floor: 1e-10,
        }
    }

    pub fn validate(&self, rate: u32) -> Result<()> {
        if self.hop == 0 || self.window < self.hop {
            return Err(Error::InvalidConfig(format!(
                "window {} / hop {} must satisfy window >= hop > 0",
                self.window, self.hop
            )));
        }
        if self.bands == 0 || self.frames == 0 {
            return Err(Error::InvalidConfig("bands and frames must be positive".into()));
        }
        let nyquist = rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::InvalidConfig(format!(
                "frequency range [{}, {}] must lie within [0, {nyquist}]",
                self.fmin, self.fmax
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Time-frequency matrix, `bands` rows by `frames` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub matrix: Matrix,
    pub kind: SpectrogramKind,
    pub config: SpectrogramConfig,
}

impl Spectrogram {
    pub fn bands(&self) -> usize {
        self.matrix.rows()
    }

    pub fn frames(&self) -> usize {
        self.matrix.cols()
    }
}

/// Compute the spectrogram selected by `config.kind`.
pub fn compute_spectrogram(clip: &AudioClip, config: &SpectrogramConfig) -> Result<Spectrogram> {
    match config.kind {
        SpectrogramKind::LogMel => {
            let power = stft_power(clip, config)?;
            log_mel(&power, config)
        }
        SpectrogramKind::Gammatone => gammatonegram(clip, config),
        SpectrogramKind::Scalogram => scalogram(clip, config),
    }
}

/// Number of analysis frames that fit in `len` samples without padding.
pub(crate) fn raw_frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

#[inline]
pub(crate) fn floor_log(v: f64, floor: f64) -> f64 {
    v.max(floor).ln()
}

#[cfg(test)]
pub(crate) mod test_signals {
    use std::f64::consts::PI;

    pub fn tone(freq: f64, rate: u32, len: usize, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|n| amp * (2.0 * PI * freq * n as f64 / rate as f64).sin())
            .collect()
    }
}
