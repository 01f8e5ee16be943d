//! Seeded two-class synthetic corpus.
//!
//! Bonafide: 3–5 harmonics of a random fundamental in [100, 300] Hz, each
//! with a slow (0.2–1 Hz) amplitude envelope, plus faint white noise.
//! Spoof: the same construction, then a 16 Hz amplitude modulation of depth
//! 0.5 and a -6 dB peaking cut at 700 Hz. Every file is peak-normalized to
//! 0.9.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::audio::{write_wav, SAMPLE_RATE};
use super::protocol::{render_protocol, ProtocolEntry};
use crate::error::Result;
use crate::layers::SeededRng;
use crate::metrics::Label;

pub const MODULATION_HZ: f64 = 16.0;
pub const MODULATION_DEPTH: f64 = 0.5;
pub const NOTCH_HZ: f64 = 700.0;
const NOTCH_GAIN_DB: f64 = -6.0;
const NOTCH_Q: f64 = 1.4;
const NOISE_STD: f64 = 0.01;
const PEAK: f64 = 0.9;
pub const SPOOF_ATTACK: &str = "AM16";

/// One utterance of the given class.
pub fn synth_waveform(rng: &mut SeededRng, label: Label, len: usize) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = rng.uniform(100.0, 300.0);
    let harmonics = 3 + rng.below(3);
    let partials: Vec<[f64; 4]> = (1..=harmonics)
        .map(|h| {
            [
                rng.uniform(0.3, 1.0) / h as f64,
                rng.uniform(0.2, 1.0),
                rng.uniform(0.0, 2.0 * PI),
                rng.uniform(0.0, 2.0 * PI),
            ]
        })
        .collect();
    let noise_bound = NOISE_STD * 3f64.sqrt();
    let mut x: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 / sr;
            let tone: f64 = partials
                .iter()
                .enumerate()
                .map(|(h, &[amp, env_hz, env_phase, phase])| {
                    let env = 0.6 + 0.4 * (2.0 * PI * env_hz * t + env_phase).sin();
                    amp * env * (2.0 * PI * (h + 1) as f64 * f0 * t + phase).sin()
                })
                .sum();
            tone + rng.uniform(-noise_bound, noise_bound)
        })
        .collect();
    if label == Label::Spoof {
        for (i, v) in x.iter_mut().enumerate() {
            *v *= 1.0 + MODULATION_DEPTH * (2.0 * PI * MODULATION_HZ * i as f64 / sr).sin();
        }
        peaking_cut(&mut x, sr);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    x
}

/// Biquad peaking equalizer with negative gain.
fn peaking_cut(x: &mut [f64], sr: f64) {
    let a = 10f64.powf(NOTCH_GAIN_DB / 40.0);
    let w0 = 2.0 * PI * NOTCH_HZ / sr;
    let alpha = w0.sin() / (2.0 * NOTCH_Q);
    let (b0, b1, b2) = (1.0 + alpha * a, -2.0 * w0.cos(), 1.0 - alpha * a);
    let (a0, a1, a2) = (1.0 + alpha / a, -2.0 * w0.cos(), 1.0 - alpha / a);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = (b0 * *v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2) / a0;
        (x2, x1) = (x1, *v);
        (y2, y1) = (y1, y);
        *v = y;
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub protocol_path: PathBuf,
    /// Protocol entries with their WAV paths, in protocol order.
    pub items: Vec<(ProtocolEntry, PathBuf)>,
}

/// Writes `2 · n_per_class` WAVs under `out_dir/wav` and `out_dir/protocol.txt`.
/// Classes alternate, bonafide first.
pub fn generate_synthetic_corpus(seed: u64, n_per_class: usize, len: usize, out_dir: &Path) -> Result<Manifest> {
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir)?;
    let mut rng = SeededRng::new(seed);
    let mut items = Vec::with_capacity(2 * n_per_class);
    for i in 0..n_per_class {
        for label in [Label::Bonafide, Label::Spoof] {
            let tag = if label == Label::Bonafide { 'B' } else { 'S' };
            let utt_id = format!("SYN_{tag}_{i:04}");
            let path = wav_dir.join(format!("{utt_id}.wav"));
            write_wav(&path, &synth_waveform(&mut rng, label, len))?;
            let attack = if label == Label::Spoof { SPOOF_ATTACK } else { "-" };
            items.push((ProtocolEntry { utt_id, label, attack: attack.into() }, path));
        }
    }
    let protocol_path = out_dir.join("protocol.txt");
    let entries: Vec<ProtocolEntry> = items.iter().map(|(e, _)| e.clone()).collect();
    fs::write(&protocol_path, render_protocol(&entries))?;
    Ok(Manifest { protocol_path, items })
}

/// Hann-windowed magnitude spectrum, bins `0..=N/2`.
pub fn magnitude_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| Complex::new(v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..=n / 2].iter().map(|c| c.norm()).collect()
}

/// Level (dB) of the stronger modulation sideband at `peak ± mod_hz`
/// relative to the strongest spectral peak.
pub fn sideband_level_db(x: &[f64], mod_hz: f64) -> f64 {
    let mag = magnitude_spectrum(x);
    let bin_hz = SAMPLE_RATE as f64 / x.len() as f64;
    let (k0, peak) = mag
        .iter()
        .enumerate()
        .skip(1)
        .fold((0, 0.0), |best, (k, &m)| if m > best.1 { (k, m) } else { best });
    let off = (mod_hz / bin_hz).round() as usize;
    let around = |c: usize| {
        (c.saturating_sub(2)..=(c + 2).min(mag.len() - 1)).map(|k| mag[k]).fold(0.0, f64::max)
    };
    let side = around(k0 + off).max(if k0 > off { around(k0 - off) } else { 0.0 });
    20.0 * (side / peak).log10()
}
