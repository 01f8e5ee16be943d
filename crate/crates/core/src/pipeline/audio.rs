//! 16-bit mono PCM WAV input and output.

use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::SeededRng;

pub const SAMPLE_RATE: u32 = 16_000;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => format_err(path, other.to_string()),
    }
}

/// All samples of a 16 kHz, 16-bit, mono file scaled by `1/32768`.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(format_err(path, format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(format_err(path, format!("expected {SAMPLE_RATE} Hz, found {} Hz", spec.sample_rate)));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(format_err(
            path,
            format!("expected 16-bit integer PCM, found {}-bit {:?}", spec.bits_per_sample, spec.sample_format),
        ));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(|e| map_hound(path, e)))
        .collect()
}

/// Crops (from an offset drawn from `rng`) or cyclically tiles to `len`.
pub fn fit_length(samples: &[f64], len: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Input("cannot fit an empty waveform".into()));
    }
    Ok(match samples.len() {
        n if n == len => samples.to_vec(),
        n if n > len => {
            let off = rng.below(n - len + 1);
            samples[off..off + len].to_vec()
        }
        n => (0..len).map(|i| samples[i % n]).collect(),
    })
}

/// [`read_wav`] followed by [`fit_length`].
pub fn load_wav(path: &Path, len: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let samples = read_wav(path)?;
    if samples.is_empty() {
        return Err(format_err(path, "file holds no samples"));
    }
    fit_length(&samples, len, rng)
}

/// Writes `samples` (expected in `[-1, 1]`) as 16-bit PCM, rounding and
/// saturating.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, spec: hound::WavSpec, values: &[i16]) {
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &v in values {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
    }

    fn mono16() -> hound::WavSpec {
        hound::WavSpec { channels: 1, sample_rate: 16_000, bits_per_sample: 16, sample_format: hound::SampleFormat::Int }
    }

    #[test]
    fn exact_length_and_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let mut vals = vec![0i16; 64_000];
        vals[0] = -32768;
        vals[1] = 16384;
        write_raw(&p, mono16(), &vals);
        let w = load_wav(&p, 64_000, &mut SeededRng::new(0)).unwrap();
        assert_eq!(w.len(), 64_000);
        assert_eq!(w[0], -1.0);
        assert_eq!(w[1], 0.5);
    }

    #[test]
    fn short_file_is_tiled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let vals: Vec<i16> = (0..32_000).map(|i| (i % 1000) as i16).collect();
        write_raw(&p, mono16(), &vals);
        let w = load_wav(&p, 64_000, &mut SeededRng::new(0)).unwrap();
        assert_eq!(&w[..32_000], &w[32_000..]);
    }

    #[test]
    fn long_file_crop_is_seeded() {
        let src: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let a = fit_length(&src, 10, &mut SeededRng::new(5)).unwrap();
        let b = fit_length(&src, 10, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[1] == w[0] + 1.0));
    }

    #[test]
    fn wrong_format_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_raw(&p, hound::WavSpec { channels: 2, ..mono16() }, &[0, 0]);
        let e = read_wav(&p).unwrap_err();
        assert!(matches!(&e, Error::Format { msg, .. } if msg.contains("mono")), "{e}");
        write_raw(&p, hound::WavSpec { sample_rate: 8000, ..mono16() }, &[0]);
        assert!(matches!(read_wav(&p), Err(Error::Format { msg, .. }) if msg.contains("16000 Hz")));
    }

    #[test]
    fn truncated_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        write_raw(&p, mono16(), &vec![7i16; 1000]);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 501]).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Io(_))));
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.wav");
        let x = vec![0.0, 0.5, -0.25, -1.0, 0.999];
        write_wav(&p, &x).unwrap();
        let y = read_wav(&p).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() <= 0.5 / 32768.0 + 1e-12);
        }
    }
}
