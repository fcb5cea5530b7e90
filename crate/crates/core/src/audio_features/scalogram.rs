use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{floor_log, AudioClip, Spectrogram, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

/// Generalized Morse wavelet parameters.
const GAMMA: f64 = 3.0;
const BETA: f64 = 20.0;

/// Peak radian frequency of the Morse wavelet at unit scale.
pub fn morse_peak_frequency() -> f64 {
    (BETA / GAMMA).powf(1.0 / GAMMA)
}

/// Frequency response of the analytic Morse wavelet, normalized to a peak
/// value of 2 so a real sinusoid of amplitude A gives |W| = A at its ridge.
fn morse_response(omega: f64) -> f64 {
    if omega <= 0.0 {
        return 0.0;
    }
    let ln_a = 2f64.ln() + (BETA / GAMMA) * (1.0 + GAMMA.ln() - BETA.ln());
    (ln_a + BETA * omega.ln() - omega.powf(GAMMA)).exp()
}

/// Ridge frequencies (Hz) of the scalogram rows, log-spaced and ascending.
pub fn scalogram_frequencies(n: usize, fmin: f64, fmax: f64) -> Vec<f64> {
    if n == 1 {
        return vec![fmin];
    }
    let (lo, hi) = (fmin.ln(), fmax.ln());
    (0..n)
        .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Log power of the continuous wavelet transform with a Morse wavelet
/// (gamma 3, beta 20), block-averaged in time down to `config.frames`
/// columns.
///
/// The transform is computed in the frequency domain over the whole clip, so
/// it is circular at the clip edges.
pub fn scalogram(clip: &AudioClip, config: &SpectrogramConfig) -> Result<Spectrogram> {
    config.validate(clip.rate)?;
    if config.fmin <= 0.0 {
        return Err(Error::InvalidConfig("scalogram needs fmin > 0".into()));
    }
    let n = clip.len();
    if n < config.window {
        return Err(Error::ClipTooShort {
            len: n,
            window: config.window,
        });
    }
    let frames = config.frames;
    if n < frames {
        return Err(Error::ClipTooShort { len: n, window: frames });
    }

    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut spectrum: Vec<Complex<f64>> =
        clip.samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    forward.process(&mut spectrum);

    let rate = clip.rate as f64;
    let peak = morse_peak_frequency();
    let freqs = scalogram_frequencies(config.bands, config.fmin, config.fmax);
    let bounds: Vec<usize> = (0..=frames).map(|i| i * n / frames).collect();

    let rows = par::map_slice(&freqs, |&f| {
        let scale = peak * rate / (2.0 * PI * f);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for k in 1..=n / 2 {
            let omega = 2.0 * PI * k as f64 / n as f64;
            buf[k] = spectrum[k] * morse_response(scale * omega);
        }
        inverse.process(&mut buf);
        let norm = 1.0 / (n as f64 * n as f64);
        (0..frames)
            .map(|i| {
                let (a, b) = (bounds[i], bounds[i + 1]);
                let e = buf[a..b].iter().map(|c| c.norm_sqr()).sum::<f64>() * norm;
                floor_log(e / (b - a) as f64, config.log_floor)
            })
            .collect::<Vec<f64>>()
    });

    Ok(Spectrogram {
        matrix: Matrix::from_rows(&rows)?,
        kind: config.kind,
        config: *config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_features::test_signals::tone;
    use crate::audio_features::{SpectrogramKind, TARGET_LEN};

    fn cfg() -> SpectrogramConfig {
        SpectrogramConfig::standard(SpectrogramKind::Scalogram)
    }

    fn argmax_col(m: &Matrix, t: usize) -> usize {
        (0..m.rows())
            .max_by(|&a, &b| m.get(a, t).total_cmp(&m.get(b, t)))
            .unwrap()
    }

    #[test]
    fn morse_peak_is_two() {
        let p = morse_peak_frequency();
        assert!((morse_response(p) - 2.0).abs() < 1e-12);
        assert!(morse_response(p * 1.01) < 2.0 && morse_response(p * 0.99) < 2.0);
        assert_eq!(morse_response(-1.0), 0.0);
    }

    #[test]
    fn silence_is_uniform_floor() {
        let clip = AudioClip::new(vec![0.0; TARGET_LEN], 16000).unwrap();
        let s = scalogram(&clip, &cfg()).unwrap();
        let floor = 1e-10f64.ln();
        assert!(s.matrix.as_slice().iter().all(|&v| v == floor));
        assert_eq!((s.bands(), s.frames()), (128, 154));
    }

    #[test]
    fn tone_amplitude_recovered_on_ridge() {
        let freqs = scalogram_frequencies(128, 50.0, 8000.0);
        let f0 = freqs[70];
        // an integer number of cycles keeps the circular transform clean
        let f0 = (f0 * 10.0).round() / 10.0;
        let clip = AudioClip::new(tone(f0, 16000, TARGET_LEN, 0.5), 16000).unwrap();
        let s = scalogram(&clip, &cfg()).unwrap();
        let arg = argmax_col(&s.matrix, 77);
        assert!((arg as i64 - 70).abs() <= 1, "ridge row {arg}");
        // |W| = 0.5 on the ridge, so power 0.25 up to the row's grid offset
        let p = s.matrix.get(arg, 77).exp();
        assert!((p - 0.25).abs() < 0.01, "ridge power {p}");
    }

    #[test]
    fn chirp_ridge_moves_upward() {
        let rate = 16000.0;
        let (f0, f1, dur) = (100.0, 4000.0, 10.0);
        let samples: Vec<f64> = (0..TARGET_LEN)
            .map(|n| {
                let t = n as f64 / rate;
                let phase = 2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / dur * t * t);
                0.5 * phase.sin()
            })
            .collect();
        let clip = AudioClip::new(samples, 16000).unwrap();
        let s = scalogram(&clip, &cfg()).unwrap();
        let ridge: Vec<usize> = (2..152).map(|t| argmax_col(&s.matrix, t)).collect();
        assert!(ridge.windows(2).all(|w| w[1] >= w[0]), "ridge {ridge:?}");
        assert!(ridge.last().unwrap() - ridge[0] > 50);
    }

    #[test]
    fn impulse_is_localized_in_time() {
        let mut samples = vec![0.0; TARGET_LEN];
        samples[TARGET_LEN / 2] = 1.0;
        let clip = AudioClip::new(samples, 16000).unwrap();
        let s = scalogram(&clip, &cfg()).unwrap();
        let center = (TARGET_LEN / 2) * 154 / TARGET_LEN;
        for r in 0..128 {
            let row: Vec<f64> = (0..154).map(|t| s.matrix.get(r, t).exp()).collect();
            let total: f64 = row.iter().sum();
            let near: f64 = row[center - 3..=center + 3].iter().sum();
            assert!(near / total > 0.99, "row {r}: {}", near / total);
        }
    }
}
