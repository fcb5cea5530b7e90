use super::{floor_log, PowerSpectrum, Spectrogram, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// Triangular, area-normalized mel filters over one-sided FFT bins.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    bands: usize,
    bins: usize,
    /// `bands + 2` edge frequencies; band `b` peaks at `edges[b + 1]`.
    edges: Vec<f64>,
    weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(rate: u32, n_fft: usize, bands: usize, fmin: f64, fmax: f64) -> Result<Self> {
        if bands == 0 || n_fft < 2 || !(fmin >= 0.0 && fmin < fmax) {
            return Err(Error::InvalidConfig(format!(
                "mel filterbank needs bands > 0 and 0 <= fmin < fmax (got {bands}, {fmin}, {fmax})"
            )));
        }
        let bins = n_fft / 2 + 1;
        let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (bands + 1) as f64))
            .collect();
        let bin_hz = rate as f64 / n_fft as f64;

        let mut weights = vec![0.0; bands * bins];
        for b in 0..bands {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let norm = 2.0 / (hi - lo);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let rise = (f - lo) / (mid - lo);
                let fall = (hi - f) / (hi - mid);
                weights[b * bins + k] = rise.min(fall).max(0.0) * norm;
            }
        }
        Ok(MelFilterbank {
            bands,
            bins,
            edges,
            weights,
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        self.weights[band * self.bins + bin]
    }

    pub fn band(&self, band: usize) -> &[f64] {
        &self.weights[band * self.bins..(band + 1) * self.bins]
    }

    /// Peak frequency of each band in Hz.
    pub fn center_frequencies(&self) -> Vec<f64> {
        self.edges[1..=self.bands].to_vec()
    }
}

/// Pool STFT power through the mel filterbank and take
/// `ln(max(energy, log_floor))`.
pub fn log_mel(power: &PowerSpectrum, config: &SpectrogramConfig) -> Result<Spectrogram> {
    config.validate(power.rate)?;
    let expected_bins = config.window / 2 + 1;
    if power.bins != expected_bins {
        return Err(Error::ShapeMismatch(format!(
            "power spectrum has {} bins, config window {} implies {expected_bins}",
            power.bins, config.window
        )));
    }
    let fb = MelFilterbank::new(power.rate, config.window, config.bands, config.fmin, config.fmax)?;
    let frames = config.frames;
    let mut m = Matrix::zeros(config.bands, frames);
    for t in 0..frames {
        let row = if t < power.frames { Some(power.frame(t)) } else { None };
        for b in 0..config.bands {
            let e = row.map_or(0.0, |r| {
                fb.band(b).iter().zip(r).map(|(w, p)| w * p).sum::<f64>()
            });
            m.set(b, t, floor_log(e, config.log_floor));
        }
    }
    Ok(Spectrogram {
        matrix: m,
        kind: config.kind,
        config: *config,
    })
}
