use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use super::{floor_log, raw_frame_count, AudioClip, Spectrogram, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

const ORDER: usize = 4;

/// Glasberg & Moore equivalent rectangular bandwidth in Hz.
fn erb(fc: f64) -> f64 {
    24.7 * (4.37 * fc / 1000.0 + 1.0)
}

fn erb_rate(f: f64) -> f64 {
    21.4 * (1.0 + 0.00437 * f).log10()
}

fn inverse_erb_rate(e: f64) -> f64 {
    (10f64.powf(e / 21.4) - 1.0) / 0.00437
}

/// `n` center frequencies equally spaced on the ERB-rate scale, ascending,
/// including both endpoints.
pub fn erb_center_frequencies(n: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    if n == 1 {
        return vec![fmin];
    }
    let (lo, hi) = (erb_rate(fmin), erb_rate(fmax));
    (0..n)
        .map(|i| inverse_erb_rate(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Squared envelope of one fourth-order gammatone channel.
///
/// The input is shifted down by `fc` and passed through four identical
/// one-pole low-pass stages with pole `exp(-2*pi*b/fs)`, which is the
/// impulse-invariant form of `t^3 exp(-2*pi*b*t) cos(2*pi*fc*t)`. Each stage
/// has unity gain at DC, so a tone at `fc` passes with unity gain.
fn channel_energy(samples: &[f64], rate: f64, fc: f64) -> Vec<f64> {
    let b = 1.019 * erb(fc);
    let a = (-2.0 * PI * b / rate).exp();
    let g = 1.0 - a;
    let rot = Complex::from_polar(1.0, -2.0 * PI * fc / rate);
    let mut phasor = Complex::new(1.0, 0.0);
    let mut state = [Complex::new(0.0, 0.0); ORDER];
    samples
        .iter()
        .map(|&x| {
            let mut v = phasor * x;
            phasor *= rot;
            for s in state.iter_mut() {
                *s = *s * a + v * g;
                v = *s;
            }
            v.norm_sqr()
        })
        .collect()
}

/// Gammatone filterbank energies on the STFT frame grid, log-compressed.
///
/// Row `c` is the channel at the `c`-th ERB-spaced center frequency between
/// `config.fmin` and `config.fmax`; column `f` is the mean squared envelope
/// over samples `[f*hop, f*hop + window)`.
pub fn gammatonegram(clip: &AudioClip, config: &SpectrogramConfig) -> Result<Spectrogram> {
    config.validate(clip.rate)?;
    let raw = raw_frame_count(clip.len(), config.window, config.hop);
    if raw == 0 {
        return Err(Error::ClipTooShort {
            len: clip.len(),
            window: config.window,
        });
    }
    let valid = raw.min(config.frames);
    let centers = erb_center_frequencies(config.bands, config.fmin, config.fmax);
    let rate = clip.rate as f64;

    let rows = par::map_slice(&centers, |&fc| {
        let energy = channel_energy(&clip.samples, rate, fc);
        let mut prefix = Vec::with_capacity(energy.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for e in &energy {
            acc += e;
            prefix.push(acc);
        }
        (0..config.frames)
            .map(|f| {
                if f >= valid {
                    return floor_log(0.0, config.log_floor);
                }
                let start = f * config.hop;
                let mean = (prefix[start + config.window] - prefix[start]) / config.window as f64;
                floor_log(mean, config.log_floor)
            })
            .collect::<Vec<f64>>()
    });

    Ok(Spectrogram {
        matrix: Matrix::from_rows(&rows)?,
        kind: config.kind,
        config: *config,
    })
}
