use std::fs;
use std::path::{Path, PathBuf};

use super::{Spectrogram, SpectrogramConfig, SpectrogramKind};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

/// Write the matrix as little-endian `f32`, band-major, with a one-line
/// `kind,bands,frames` sidecar at `<path>.hdr`.
pub fn write_spectrogram_dump(path: impl AsRef<Path>, spec: &Spectrogram) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(spec.matrix.as_slice().len() * 4);
    for &v in spec.matrix.as_slice() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let header = format!("{},{},{}\n", spec.kind, spec.bands(), spec.frames());
    let side = sidecar(path);
    fs::write(&side, header).map_err(|e| Error::io(&side, e))
}

/// Read a dump written by [`write_spectrogram_dump`]. Values come back at
/// `f32` precision; the config is the standard one for the recorded kind.
pub fn read_spectrogram_dump(path: impl AsRef<Path>) -> Result<Spectrogram> {
    let path = path.as_ref();
    let side = sidecar(path);
    let header = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let fields: Vec<&str> = header.trim().split(',').collect();
    if fields.len() != 3 {
        return Err(Error::parse(&side, 1, "expected kind,bands,frames"));
    }
    let kind: SpectrogramKind = fields[0].parse()?;
    let bands: usize = fields[1]
        .parse()
        .map_err(|_| Error::parse(&side, 1, "bad band count"))?;
    let frames: usize = fields[2]
        .parse()
        .map_err(|_| Error::parse(&side, 1, "bad frame count"))?;

    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != bands * frames * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            bands * frames * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut config = SpectrogramConfig::standard(kind);
    config.bands = bands;
    config.frames = frames;
    Ok(Spectrogram {
        matrix: Matrix::from_vec(bands, frames, data)?,
        kind,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.f32");
        let config = SpectrogramConfig::standard(SpectrogramKind::Gammatone);
        let data: Vec<f64> = (0..128 * 154).map(|i| (i as f64 * 0.37).sin()).collect();
        let spec = Spectrogram {
            matrix: Matrix::from_vec(128, 154, data).unwrap(),
            kind: SpectrogramKind::Gammatone,
            config,
        };
        write_spectrogram_dump(&p, &spec).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("x.f32.hdr")).unwrap(),
            "gammatone,128,154\n"
        );
        let back = read_spectrogram_dump(&p).unwrap();
        assert_eq!(back.kind, SpectrogramKind::Gammatone);
        for (a, b) in back.matrix.as_slice().iter().zip(spec.matrix.as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }
}
