use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};
use crate::par;

/// Zero crossings of the sinc kernel on each side of the center, measured at
/// the filter cutoff.
const KERNEL_ZEROS: f64 = 32.0;
/// Cutoff as a fraction of the lower of the two Nyquist rates; the gap is the
/// transition band of the windowed kernel.
const CUTOFF_MARGIN: f64 = 0.95;

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// Output length is `round(len * target / rate)`. When downsampling the
/// kernel cutoff is lowered to the target Nyquist, so content above it is
/// removed rather than aliased. Equal rates return the input unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::EmptyClip);
    }
    if target_rate == 0 {
        return Err(Error::InvalidConfig("target rate must be positive".into()));
    }
    if target_rate == clip.rate {
        return Ok(clip.clone());
    }

    let ratio = target_rate as f64 / clip.rate as f64;
    let out_len = (clip.len() as f64 * ratio).round() as usize;
    // cutoff in cycles per input sample, relative to input Nyquist
    let cutoff = CUTOFF_MARGIN * ratio.min(1.0);
    let half_width = KERNEL_ZEROS / cutoff;
    let input = &clip.samples;
    let last = input.len() as isize - 1;

    let samples = par::map_range(out_len, |n| {
        let t = n as f64 / ratio;
        let lo = ((t - half_width).ceil() as isize).max(0);
        let hi = ((t + half_width).floor() as isize).min(last);
        let mut acc = 0.0;
        for k in lo..=hi {
            let d = t - k as f64;
            acc += input[k as usize] * cutoff * sinc(cutoff * d) * blackman(d / half_width);
        }
        acc
    });

    Ok(AudioClip {
        samples,
        rate: target_rate,
    })
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Blackman window on u in [-1, 1], zero outside.
#[inline]
fn blackman(u: f64) -> f64 {
    if u.abs() > 1.0 {
        0.0
    } else {
        0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_features::test_signals::tone;

    /// Magnitude of the DFT at integer-Hz bins of a 1 s signal, by direct
    /// summation.
    fn dft_magnitude(x: &[f64], bin: usize) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ph = -2.0 * PI * bin as f64 * i as f64 / n;
            re += v * ph.cos();
            im += v * ph.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn equal_rate_is_identity() {
        let clip = AudioClip::new(vec![0.1, -0.2, 0.3], 16000).unwrap();
        assert_eq!(resample(&clip, 16000).unwrap(), clip);
    }

    #[test]
    fn upsample_length() {
        let clip = AudioClip::new(vec![0.0; 8000], 8000).unwrap();
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.len(), 16000);
        assert_eq!(out.rate, 16000);
    }

    #[test]
    fn tone_peak_survives_downsampling() {
        let clip = AudioClip::new(tone(440.0, 44100, 44100, 0.8), 44100).unwrap();
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.len(), 16000);
        let peak = (0..=8000)
            .map(|b| (b, dft_magnitude(&out.samples, b)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert!((peak as i64 - 440).abs() <= 1, "peak at {peak} Hz");
    }

    #[test]
    fn downsampling_suppresses_content_above_target_nyquist() {
        // 12 kHz is above the 8 kHz Nyquist of the target rate
        let clip = AudioClip::new(tone(12000.0, 48000, 48000, 1.0), 48000).unwrap();
        let out = resample(&clip, 16000).unwrap();
        let interior = &out.samples[200..out.len() - 200];
        let rms = (interior.iter().map(|v| v * v).sum::<f64>() / interior.len() as f64).sqrt();
        assert!(rms < 1e-3, "alias rms {rms}");
    }

    #[test]
    fn empty_clip_rejected() {
        let clip = AudioClip::new(vec![], 44100).unwrap();
        assert!(matches!(resample(&clip, 16000), Err(Error::EmptyClip)));
    }
}
