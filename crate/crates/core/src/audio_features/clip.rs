use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{resample, TARGET_RATE, TARGET_SECONDS};
use crate::error::{Error, Result};

/// Mono audio with its sample rate. Samples are nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(AudioClip { samples, rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            rate: self.rate,
        }
    }
}

/// Read a RIFF/WAVE file, mixing all channels down to mono.
///
/// Integer PCM is scaled by `2^(bits-1)`, so 16-bit full scale 32767 maps to
/// 32767/32768.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav {
            path: path.to_path_buf(),
            reason: "zero channels".into(),
        });
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec {
                path: path.to_path_buf(),
                reason: format!("{fmt:?} samples with {bits} bits"),
            })
        }
    };

    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioClip::new(samples, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    let path = path.to_path_buf();
    match e {
        hound::Error::IoError(source) => Error::Io { path, source },
        hound::Error::Unsupported => Error::UnsupportedCodec {
            path,
            reason: "non-PCM or unsupported format tag".into(),
        },
        hound::Error::FormatError(reason) => Error::MalformedWav {
            path,
            reason: reason.to_string(),
        },
        other => Error::MalformedWav {
            path,
            reason: other.to_string(),
        },
    }
}

/// Write mono 16-bit PCM. Samples are clamped to [-1, 1).
pub fn write_wav_i16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Internal(other.to_string()),
    };
    let mut w = WavWriter::create(path, spec).map_err(map)?;
    for &s in &clip.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(map)?;
    }
    w.finalize().map_err(map)
}

/// Repeat the clip back-to-back and truncate to exactly `seconds * rate`
/// samples. Longer clips are truncated.
pub fn tile_to_duration(clip: &AudioClip, seconds: f64) -> Result<AudioClip> {
    if clip.is_empty() {
        return Err(Error::EmptyClip);
    }
    if !(seconds > 0.0) {
        return Err(Error::InvalidConfig(format!("duration {seconds} must be positive")));
    }
    let target = (seconds * clip.rate as f64).round() as usize;
    let samples = clip.samples.iter().copied().cycle().take(target).collect();
    Ok(AudioClip {
        samples,
        rate: clip.rate,
    })
}

/// Resample to 16 kHz, then tile to 10 s (160000 samples).
pub fn normalize(clip: &AudioClip) -> Result<AudioClip> {
    let resampled = resample(clip, TARGET_RATE)?;
    tile_to_duration(&resampled, TARGET_SECONDS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_features::TARGET_LEN;

    fn write_raw_wav(path: &Path, spec: WavSpec, samples: &[i16]) {
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn one_second_mono_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let clip = AudioClip::new(vec![0.25; 16000], 16000).unwrap();
        write_wav_i16(&p, &clip).unwrap();
        let back = load_audio(&p).unwrap();
        assert_eq!(back.rate, 16000);
        assert_eq!(back.len(), 16000);
        assert!(back.samples.iter().all(|&s| s == 0.25));
    }

    #[test]
    fn full_scale_maps_to_32767_over_32768() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fs.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        write_raw_wav(&p, spec, &[32767, -32768]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.samples, vec![32767.0 / 32768.0, -1.0]);
    }

    #[test]
    fn antiphase_stereo_averages_to_silence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut inter = Vec::new();
        for n in 0..1000i32 {
            let x = ((n * 37) % 20000 - 10000) as i16;
            inter.push(x);
            inter.push(-x);
        }
        write_raw_wav(&p, spec, &inter);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.len(), 1000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn float_wav_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 22050,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for s in [0.5f32, -0.125, 1.0] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.rate, 22050);
        assert_eq!(clip.samples, vec![0.5, -0.125, 1.0]);
    }

    #[test]
    fn distinct_load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.wav");
        assert!(matches!(load_audio(&missing), Err(Error::MissingFile(_))));

        let garbage = dir.path().join("garbage.wav");
        std::fs::write(&garbage, b"this is not a riff file at all").unwrap();
        assert!(matches!(load_audio(&garbage), Err(Error::MalformedWav { .. })));

        // A syntactically valid header with format tag 0x0055 (MPEG layer 3).
        let mp3 = dir.path().join("mp3.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36u32 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&0x0055u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&32000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        std::fs::write(&mp3, bytes).unwrap();
        assert!(matches!(load_audio(&mp3), Err(Error::UnsupportedCodec { .. })));
    }

    #[test]
    fn tiling_rules() {
        let rate = 16000;
        let five = AudioClip::new((0..5 * rate).map(|i| i as f64).collect(), rate as u32).unwrap();
        let t = tile_to_duration(&five, 10.0).unwrap();
        assert_eq!(t.len(), TARGET_LEN);
        assert_eq!(&t.samples[..80000], &five.samples[..]);
        assert_eq!(&t.samples[80000..], &five.samples[..]);

        let ten = AudioClip::new(vec![0.1; TARGET_LEN], 16000).unwrap();
        assert_eq!(tile_to_duration(&ten, 10.0).unwrap(), ten);

        let four = AudioClip::new((0..64000).map(|i| i as f64).collect(), 16000).unwrap();
        let t = tile_to_duration(&four, 10.0).unwrap();
        assert_eq!(t.len(), TARGET_LEN);
        assert_eq!(&t.samples[128000..], &four.samples[..32000]);

        let long = AudioClip::new(vec![0.0; 200_000], 16000).unwrap();
        assert_eq!(tile_to_duration(&long, 10.0).unwrap().len(), TARGET_LEN);

        let empty = AudioClip::new(vec![], 16000).unwrap();
        assert!(matches!(tile_to_duration(&empty, 10.0), Err(Error::EmptyClip)));
    }

    #[test]
    fn normalize_reaches_target_geometry() {
        let clip = AudioClip::new(vec![0.0; 22050 * 3], 22050).unwrap();
        let n = normalize(&clip).unwrap();
        assert_eq!(n.rate, TARGET_RATE);
        assert_eq!(n.len(), TARGET_LEN);
    }
}
