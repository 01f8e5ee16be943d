//! Raw-waveform frontend: learnable sinc band-pass filters, log-magnitude
//! compression, SE-residual 2-D blocks, and the frequency-major flatten into
//! a `(B, f·t, C)` token sequence.
//!
//! Each band-pass impulse response is the difference of two Hamming-windowed
//! sinc low-passes, each scaled to unit DC gain, so every filter has an exact
//! DC null. Cutoffs are reparameterized as
//! `f1 = min(min_low + |low|, nyq - 2·min_band)` and
//! `f2 = min(f1 + min_band + |band|, nyq - min_band/2)`, which keeps
//! `0 < f1 < f2 < nyq` for any parameter values.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::layers::{join, Linear, Parameterized, SeededRng};
use crate::tensor::{Conv2dSpec, PoolSpec, Tensor};

/// Floor added before the logarithm of the filter magnitudes.
pub const LOG_FLOOR: f64 = 1e-6;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPlan {
    pub channels: usize,
    /// Max-pool window (frequency, time) closing the block.
    pub pool: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendConfig {
    pub n_filters: usize,
    pub kernel_len: usize,
    pub sample_rate: f64,
    /// Max-pool width applied to the rectified filter outputs.
    pub sinc_pool: usize,
    pub min_low_hz: f64,
    pub min_band_hz: f64,
    pub init_low_hz: f64,
    pub trainable_sinc: bool,
    pub blocks: Vec<BlockPlan>,
    pub se_reduction: usize,
}

impl FrontendConfig {
    /// 70 filters, four blocks 32/32/64/64.
    pub fn paper() -> Self {
        FrontendConfig {
            n_filters: 70,
            kernel_len: 129,
            sample_rate: 16_000.0,
            sinc_pool: 3,
            min_low_hz: 10.0,
            min_band_hz: 20.0,
            init_low_hz: 30.0,
            trainable_sinc: true,
            blocks: [32, 32, 64, 64].map(|channels| BlockPlan { channels, pool: (2, 3) }).to_vec(),
            se_reduction: 8,
        }
    }

    /// 4 filters, two blocks 16/32.
    pub fn tiny() -> Self {
        FrontendConfig {
            n_filters: 4,
            sinc_pool: 16,
            blocks: vec![BlockPlan { channels: 16, pool: (2, 4) }, BlockPlan { channels: 32, pool: (2, 4) }],
            ..Self::paper()
        }
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(1, |b| b.channels)
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate / 2.0;
        if self.n_filters == 0 || self.sinc_pool == 0 || self.se_reduction == 0 {
            return Err(Error::Config("filter count, sinc pool and SE reduction must be positive".into()));
        }
        if self.kernel_len < 3 || self.kernel_len % 2 == 0 {
            return Err(Error::Config(format!("sinc kernel length must be odd and ≥ 3, got {}", self.kernel_len)));
        }
        if !(self.min_low_hz > 0.0 && self.min_band_hz > 0.0 && self.min_low_hz + 3.0 * self.min_band_hz < nyq) {
            return Err(Error::Config("minimum cutoff and bandwidth must be positive and fit below Nyquist".into()));
        }
        if !(self.init_low_hz >= self.min_low_hz && self.init_low_hz < nyq) {
            return Err(Error::Config(format!("initial low cutoff {} Hz is outside the valid range", self.init_low_hz)));
        }
        if self.blocks.is_empty() {
            return Err(Error::Config("frontend needs at least one SE-Res block".into()));
        }
        for b in &self.blocks {
            if b.channels == 0 || b.pool.0 == 0 || b.pool.1 == 0 {
                return Err(Error::Config(format!("invalid block plan {b:?}")));
            }
        }
        Ok(())
    }
}

/// Shapes through the frontend for a waveform of `samples` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeProbe {
    pub n_filters: usize,
    /// Frames after the sinc stage.
    pub frames: usize,
    /// Frequency rows `f` after the last block.
    pub freq: usize,
    /// Time columns `t` after the last block.
    pub time: usize,
    /// Tokens `f·t`.
    pub tokens: usize,
    pub channels: usize,
}

pub fn shape_probe(config: &FrontendConfig, samples: usize) -> Result<ShapeProbe> {
    config.validate()?;
    if samples < config.kernel_len {
        return Err(Error::Input(format!("{samples} samples is shorter than the {}-tap filters", config.kernel_len)));
    }
    let frames = (samples - config.kernel_len + 1) / config.sinc_pool;
    let (mut f, mut t) = (config.n_filters, frames);
    for b in &config.blocks {
        if f < b.pool.0 || t < b.pool.1 {
            return Err(Error::Input(format!("{samples} samples collapse to nothing before block pool {:?}", b.pool)));
        }
        f /= b.pool.0;
        t /= b.pool.1;
    }
    Ok(ShapeProbe { n_filters: config.n_filters, frames, freq: f, time: t, tokens: f * t, channels: config.out_channels() })
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub fn hamming(len: usize) -> Vec<f64> {
    (0..len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()).collect()
}

#[derive(Debug, Clone)]
pub struct SincFilterbank {
    /// Raw low-cutoff parameters (Hz), `(F)`.
    pub low_hz: Tensor,
    /// Raw bandwidth parameters (Hz), `(F)`.
    pub band_hz: Tensor,
    pub kernel_len: usize,
    pub sample_rate: f64,
    pub min_low_hz: f64,
    pub min_band_hz: f64,
    window: Tensor,
    /// `2π n / sr` for the centered tap offsets, `(1, K)`.
    phase: Tensor,
}

impl SincFilterbank {
    /// Bands evenly spaced on the mel scale over `[init_low, nyquist]`.
    pub fn new(config: &FrontendConfig) -> Self {
        let nyq = config.sample_rate / 2.0;
        let (m0, m1) = (hz_to_mel(config.init_low_hz), hz_to_mel(nyq));
        let f = config.n_filters;
        let edges: Vec<f64> = (0..=f).map(|i| mel_to_hz(m0 + (m1 - m0) * i as f64 / f as f64)).collect();
        let low: Vec<f64> = edges[..f].iter().map(|e| e - config.min_low_hz).collect();
        let band: Vec<f64> = edges.windows(2).map(|w| (w[1] - w[0] - config.min_band_hz).max(0.0)).collect();
        Self::from_raw(config, low, band)
    }

    /// Filterbank from raw `low`/`band` parameter values.
    pub fn from_raw(config: &FrontendConfig, low: Vec<f64>, band: Vec<f64>) -> Self {
        let make = |v: Vec<f64>| {
            let n = v.len();
            if config.trainable_sinc {
                Tensor::param(v, &[n])
            } else {
                Tensor::new(v, &[n])
            }
            .expect("filter parameter shape")
        };
        let k = config.kernel_len;
        let half = (k / 2) as f64;
        let phase: Vec<f64> = (0..k).map(|i| 2.0 * PI * (i as f64 - half) / config.sample_rate).collect();
        SincFilterbank {
            low_hz: make(low),
            band_hz: make(band),
            kernel_len: k,
            sample_rate: config.sample_rate,
            min_low_hz: config.min_low_hz,
            min_band_hz: config.min_band_hz,
            window: Tensor::new(hamming(k), &[1, k]).expect("window shape"),
            phase: Tensor::new(phase, &[1, k]).expect("phase shape"),
        }
    }

    pub fn n_filters(&self) -> usize {
        self.low_hz.numel()
    }

    /// Effective `(f1, f2)` in Hz, each `(F)`.
    pub fn cutoffs(&self) -> (Tensor, Tensor) {
        let nyq = self.sample_rate / 2.0;
        let f1 = self.low_hz.abs().add_scalar(self.min_low_hz).clamp_max(nyq - 2.0 * self.min_band_hz);
        let f2 = f1
            .add(&self.band_hz.abs().add_scalar(self.min_band_hz))
            .expect("matching filter counts")
            .clamp_max(nyq - self.min_band_hz / 2.0);
        (f1, f2)
    }

    pub fn bands(&self) -> Vec<(f64, f64)> {
        let (f1, f2) = self.cutoffs();
        f1.data().iter().copied().zip(f2.data().iter().copied()).collect()
    }

    /// Errors unless every band satisfies `0 < f1 < f2 < nyquist`.
    pub fn check_bands(&self) -> Result<()> {
        let nyq = self.sample_rate / 2.0;
        for (i, (a, b)) in self.bands().into_iter().enumerate() {
            if !(0.0 < a && a < b && b < nyq) {
                return Err(Error::Numeric(format!("filter {i} has invalid band ({a}, {b}) Hz")));
            }
        }
        Ok(())
    }

    /// Impulse responses `(F, K)` for explicit cutoffs.
    pub fn kernels_for(&self, f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
        let lowpass = |fc: &Tensor| -> Result<Tensor> {
            let n = fc.numel();
            let h = fc.reshape(&[n, 1])?.mul(&self.phase)?.sinc().mul(&self.window)?;
            let dc = h.sum_axis(1, true)?;
            h.div(&dc)
        };
        lowpass(f2)?.sub(&lowpass(f1)?)
    }

    pub fn kernels(&self) -> Result<Tensor> {
        let (f1, f2) = self.cutoffs();
        self.kernels_for(&f1, &f2)
    }

    /// Linear filter outputs `(B, S) → (B, F, T)` sampled every `stride`.
    pub fn forward(&self, wave: &Tensor, stride: usize) -> Result<Tensor> {
        self.check_wave(wave)?;
        wave.conv1d_bank(&self.kernels()?, stride)
    }

    /// `log(maxpool(|filter outputs|) + floor)`, `(B, S) → (B, F, T)`.
    pub fn log_magnitudes(&self, wave: &Tensor, pool: usize) -> Result<Tensor> {
        self.check_wave(wave)?;
        Ok(wave.conv1d_bank_abs_maxpool(&self.kernels()?, pool)?.add_scalar(LOG_FLOOR).ln())
    }

    fn check_wave(&self, wave: &Tensor) -> Result<()> {
        if wave.ndim() != 2 {
            return Err(Error::dim("sinc_forward", wave.shape(), &[self.kernel_len]));
        }
        if wave.shape()[1] < self.kernel_len {
            return Err(Error::Input(format!(
                "waveform of {} samples is shorter than the {}-tap filters",
                wave.shape()[1],
                self.kernel_len
            )));
        }
        Ok(())
    }
}

impl Parameterized for SincFilterbank {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "low_hz"), &self.low_hz);
        f(&join(prefix, "band_hz"), &self.band_hz);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "low_hz"), &mut self.low_hz);
        f(&join(prefix, "band_hz"), &mut self.band_hz);
    }
}

/// Squeeze-and-excitation: per-channel gate from globally averaged channel
/// statistics, `(B, C, f, t) → (B, C, f, t)`.
pub fn se_gate(x: &Tensor, reduce: &Linear, expand: &Linear) -> Result<Tensor> {
    let g = se_gate_values(x, reduce, expand)?;
    let (b, c) = (x.shape()[0], x.shape()[1]);
    x.mul(&g.reshape(&[b, c, 1, 1])?)
}

/// Gate values `(B, C)` in `(0, 1)`.
pub fn se_gate_values(x: &Tensor, reduce: &Linear, expand: &Linear) -> Result<Tensor> {
    let &[b, c, h, w] = x.shape() else {
        return Err(Error::dim("se_gate", x.shape(), reduce.weight.shape()));
    };
    let pooled = x.reshape(&[b, c, h * w])?.mean_axis(2, false)?;
    Ok(expand.forward(&reduce.forward(&pooled)?.silu())?.sigmoid())
}

fn conv_param(rng: &mut SeededRng, co: usize, ci: usize, k: usize) -> (Tensor, Tensor) {
    let bound = 1.0 / ((ci * k * k) as f64).sqrt();
    let w = Tensor::param(rng.uniform_vec(co * ci * k * k, -bound, bound), &[co, ci, k, k]).expect("conv shape");
    let b = Tensor::param(vec![0.0; co], &[co]).expect("bias shape");
    (w, b)
}

#[derive(Debug, Clone)]
pub struct SeResBlock {
    pub conv1: (Tensor, Tensor),
    pub conv2: (Tensor, Tensor),
    /// 1×1 projection when the channel count changes.
    pub skip: Option<(Tensor, Tensor)>,
    pub se_reduce: Linear,
    pub se_expand: Linear,
    pub pool: PoolSpec,
    pub pre_activation: bool,
}

impl SeResBlock {
    pub fn new(rng: &mut SeededRng, in_ch: usize, plan: BlockPlan, se_reduction: usize, pre_activation: bool) -> Self {
        let co = plan.channels;
        let conv1 = conv_param(rng, co, in_ch, 3);
        let conv2 = conv_param(rng, co, co, 3);
        let skip = (in_ch != co).then(|| conv_param(rng, co, in_ch, 1));
        let hidden = (co / se_reduction).max(1);
        SeResBlock {
            conv1,
            conv2,
            skip,
            se_reduce: Linear::new(rng, co, hidden, true),
            se_expand: Linear::new(rng, hidden, co, true),
            pool: PoolSpec { kernel: plan.pool },
            pre_activation,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.0.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let same = Conv2dSpec { padding: (1, 1) };
        let a = if self.pre_activation { x.silu() } else { x.clone() };
        let r = a.conv2d(&self.conv1.0, &self.conv1.1, same)?.silu();
        let r = r.conv2d(&self.conv2.0, &self.conv2.1, same)?;
        let r = se_gate(&r, &self.se_reduce, &self.se_expand)?;
        let s = match &self.skip {
            Some((w, b)) => x.conv2d(w, b, Conv2dSpec { padding: (0, 0) })?,
            None => x.clone(),
        };
        r.add(&s)?.max_pool2d(self.pool)
    }
}

impl Parameterized for SeResBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "conv1.weight"), &self.conv1.0);
        f(&join(prefix, "conv1.bias"), &self.conv1.1);
        f(&join(prefix, "conv2.weight"), &self.conv2.0);
        f(&join(prefix, "conv2.bias"), &self.conv2.1);
        if let Some((w, b)) = &self.skip {
            f(&join(prefix, "skip.weight"), w);
            f(&join(prefix, "skip.bias"), b);
        }
        self.se_reduce.visit_params(&join(prefix, "se_reduce"), f);
        self.se_expand.visit_params(&join(prefix, "se_expand"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "conv1.weight"), &mut self.conv1.0);
        f(&join(prefix, "conv1.bias"), &mut self.conv1.1);
        f(&join(prefix, "conv2.weight"), &mut self.conv2.0);
        f(&join(prefix, "conv2.bias"), &mut self.conv2.1);
        if let Some((w, b)) = &mut self.skip {
            f(&join(prefix, "skip.weight"), w);
            f(&join(prefix, "skip.bias"), b);
        }
        self.se_reduce.visit_params_mut(&join(prefix, "se_reduce"), f);
        self.se_expand.visit_params_mut(&join(prefix, "se_expand"), f);
    }
}

#[derive(Debug, Clone)]
pub struct FeatureMaps {
    /// Normalized log filter magnitudes `(B, F, T)`.
    pub lfm: Tensor,
    /// Last block output `(B, C, f, t)`.
    pub hfm: Tensor,
    /// `(B, f·t, C)` with `sequence[b, i·t + j, c] = hfm[b, c, i, j]`.
    pub sequence: Tensor,
}

/// `(B, C, f, t) → (B, f·t, C)`, frequency-major.
pub fn flatten_tokens(hfm: &Tensor) -> Result<Tensor> {
    let &[b, c, f, t] = hfm.shape() else {
        return Err(Error::dim("flatten_tokens", hfm.shape(), &[0, 0, 0, 0]));
    };
    hfm.permute(&[0, 2, 3, 1])?.reshape(&[b, f * t, c])
}

/// Inverse of [`flatten_tokens`].
pub fn unflatten_tokens(seq: &Tensor, freq: usize, time: usize) -> Result<Tensor> {
    let &[b, l, c] = seq.shape() else {
        return Err(Error::dim("unflatten_tokens", seq.shape(), &[freq, time]));
    };
    if l != freq * time {
        return Err(Error::dim("unflatten_tokens", seq.shape(), &[freq, time]));
    }
    seq.reshape(&[b, freq, time, c])?.permute(&[0, 3, 1, 2])
}

/// Zero-mean, unit-variance scaling of each utterance's `(F, T)` map.
pub fn normalize_utterance(x: &Tensor) -> Result<Tensor> {
    let b = x.shape()[0];
    let flat = x.reshape(&[b, x.numel() / b])?;
    let centered = flat.sub(&flat.mean_axis(1, true)?)?;
    let std = centered.square().mean_axis(1, true)?.add_scalar(NORM_EPS).sqrt();
    centered.div(&std)?.reshape(x.shape())
}

#[derive(Debug, Clone)]
pub struct Frontend {
    pub config: FrontendConfig,
    pub sinc: SincFilterbank,
    pub blocks: Vec<SeResBlock>,
}

impl Frontend {
    pub fn new(rng: &mut SeededRng, config: FrontendConfig) -> Result<Self> {
        config.validate()?;
        let sinc = SincFilterbank::new(&config);
        let mut in_ch = 1;
        let mut blocks = Vec::with_capacity(config.blocks.len());
        for (i, &plan) in config.blocks.iter().enumerate() {
            blocks.push(SeResBlock::new(rng, in_ch, plan, config.se_reduction, i > 0));
            in_ch = plan.channels;
        }
        Ok(Frontend { config, sinc, blocks })
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels()
    }

    pub fn forward(&self, wave: &Tensor) -> Result<FeatureMaps> {
        let logmag = self.sinc.log_magnitudes(wave, self.config.sinc_pool)?;
        let lfm = normalize_utterance(&logmag)?;
        let (b, f, t) = (lfm.shape()[0], lfm.shape()[1], lfm.shape()[2]);
        let mut h = lfm.reshape(&[b, 1, f, t])?;
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        let sequence = flatten_tokens(&h)?;
        Ok(FeatureMaps { lfm, hfm: h, sequence })
    }
}

impl Parameterized for Frontend {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.sinc.visit_params(&join(prefix, "sinc"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("blocks.{i}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.sinc.visit_params_mut(&join(prefix, "sinc"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
    }
}
