use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{raw_frame_count, AudioClip, SpectrogramConfig};
use crate::error::{Error, Result};
use crate::par;

/// One-sided STFT power, `frames x bins` row-major, `bins = window/2 + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub frames: usize,
    pub bins: usize,
    pub rate: u32,
    /// Frames actually computed from audio; the rest are zero padding.
    pub valid_frames: usize,
    pub data: Vec<f64>,
}

impl PowerSpectrum {
    pub fn frame(&self, f: usize) -> &[f64] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    /// FFT size that produced this spectrum.
    pub fn n_fft(&self) -> usize {
        (self.bins - 1) * 2
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// `|DFT|^2` of Hann-windowed frames. Frame `f` covers samples
/// `[f*hop, f*hop + window)`; no padding is applied at the clip edges.
/// The frame count is truncated or zero-padded to `config.frames`.
pub fn stft_power(clip: &AudioClip, config: &SpectrogramConfig) -> Result<PowerSpectrum> {
    config.validate(clip.rate)?;
    let window = config.window;
    let raw = raw_frame_count(clip.len(), window, config.hop);
    if raw == 0 {
        return Err(Error::ClipTooShort {
            len: clip.len(),
            window,
        });
    }
    let valid = raw.min(config.frames);
    let bins = window / 2 + 1;
    let hann = hann_window(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);

    let mut data = vec![0.0; config.frames * bins];
    par::for_each_chunk_mut(&mut data[..valid * bins], bins, |f, out| {
        let start = f * config.hop;
        let mut buf: Vec<Complex<f64>> = clip.samples[start..start + window]
            .iter()
            .zip(&hann)
            .map(|(s, w)| Complex::new(s * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (o, c) in out.iter_mut().zip(&buf[..bins]) {
            *o = c.norm_sqr();
        }
    });

    Ok(PowerSpectrum {
        frames: config.frames,
        bins,
        rate: clip.rate,
        valid_frames: valid,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_features::test_signals::tone;
    use crate::audio_features::{SpectrogramKind, TARGET_LEN};

    fn cfg() -> SpectrogramConfig {
        SpectrogramConfig::standard(SpectrogramKind::LogMel)
    }

    #[test]
    fn normalized_clip_gives_154_frames() {
        let clip = AudioClip::new(vec![0.01; TARGET_LEN], 16000).unwrap();
        let p = stft_power(&clip, &cfg()).unwrap();
        assert_eq!((p.frames, p.bins, p.valid_frames), (154, 1025, 154));
    }

    #[test]
    fn dc_energy_sits_in_bin_zero() {
        let clip = AudioClip::new(vec![0.5; 16000], 16000).unwrap();
        let p = stft_power(&clip, &cfg()).unwrap();
        for f in 0..p.valid_frames {
            let row = p.frame(f);
            let argmax = (0..p.bins).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, 0);
            // periodic Hann leaks DC only into bin 1
            assert!(row[2..].iter().all(|&v| v < 1e-12 * row[0]));
        }
    }

    #[test]
    fn one_khz_peaks_at_bin_128() {
        let clip = AudioClip::new(tone(1000.0, 16000, 16000, 0.5), 16000).unwrap();
        let p = stft_power(&clip, &cfg()).unwrap();
        for f in 0..p.valid_frames {
            let row = p.frame(f);
            let argmax = (0..p.bins).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, 128);
        }
    }

    #[test]
    fn short_clip_is_zero_padded_in_time() {
        let clip = AudioClip::new(tone(300.0, 16000, 16000, 0.5), 16000).unwrap();
        let p = stft_power(&clip, &cfg()).unwrap();
        assert_eq!(p.valid_frames, 14);
        assert!(p.data[14 * p.bins..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clip_shorter_than_window_rejected() {
        let clip = AudioClip::new(vec![0.0; 2000], 16000).unwrap();
        assert!(matches!(
            stft_power(&clip, &cfg()),
            Err(Error::ClipTooShort { .. })
        ));
    }
}
