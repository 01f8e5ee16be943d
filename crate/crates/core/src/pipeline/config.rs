//! Flat TOML run configuration.
//!
//! A config file names a `preset` (`paper` or `tiny`, default `paper`) and
//! overrides any subset of its keys. Unknown keys are rejected. The file path
//! may come from [`CONFIG_ENV`] when no explicit path is given.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bimamba::FusionMode;
use crate::error::{Error, Result};
use crate::frontend::{BlockPlan, FrontendConfig};
use crate::mamba::MambaConfig;
use crate::metrics::{AsvRates, TdcfCosts};

/// Environment variable holding a config path.
pub const CONFIG_ENV: &str = "RAWBMAMBA_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: String,

    // optimization
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// End training once a full pass over the training set scores EER 0.
    pub stop_at_zero_eer: bool,

    // data
    pub samples: usize,
    pub protocol_utt_column: usize,

    // frontend
    pub sample_rate: f64,
    pub n_filters: usize,
    pub sinc_kernel: usize,
    pub sinc_pool: usize,
    pub min_low_hz: f64,
    pub min_band_hz: f64,
    pub init_low_hz: f64,
    pub trainable_sinc: bool,
    pub block_channels: Vec<usize>,
    pub block_pool_freq: Vec<usize>,
    pub block_pool_time: Vec<usize>,
    pub se_reduction: usize,

    // backbone
    pub layers_per_direction: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_kernel: usize,
    pub residual: bool,
    pub bias: bool,
    pub fusion: FusionMode,
    /// Classifier hidden width; 0 means the fused width.
    pub mlp_hidden: usize,

    // loss
    pub margin: u32,
    pub lambda_start: f64,
    pub lambda_decay: f64,
    pub lambda_min: f64,

    // t-DCF
    pub p_spoof: f64,
    pub p_tar: f64,
    pub p_non: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub asv_p_miss: f64,
    pub asv_p_fa: f64,
    pub asv_p_miss_spoof: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl TrainConfig {
    /// Full-size model with the published training schedule.
    pub fn paper() -> Self {
        let costs = TdcfCosts::default();
        let asv = AsvRates::default();
        TrainConfig {
            preset: "paper".into(),
            learning_rate: 1e-5,
            batch_size: 32,
            epochs: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            stop_at_zero_eer: false,
            samples: 64_000,
            protocol_utt_column: 1,
            sample_rate: 16_000.0,
            n_filters: 70,
            sinc_kernel: 129,
            sinc_pool: 3,
            min_low_hz: 10.0,
            min_band_hz: 20.0,
            init_low_hz: 30.0,
            trainable_sinc: true,
            block_channels: vec![32, 32, 64, 64],
            block_pool_freq: vec![2, 2, 2, 2],
            block_pool_time: vec![3, 3, 3, 3],
            se_reduction: 8,
            layers_per_direction: 6,
            d_state: 16,
            expand: 2,
            conv_kernel: 4,
            residual: true,
            bias: true,
            fusion: FusionMode::Concat,
            mlp_hidden: 0,
            margin: 4,
            lambda_start: 1000.0,
            lambda_decay: 0.99,
            lambda_min: 5.0,
            p_spoof: costs.p_spoof,
            p_tar: costs.p_tar,
            p_non: costs.p_non,
            c_miss_asv: costs.c_miss_asv,
            c_fa_asv: costs.c_fa_asv,
            c_miss_cm: costs.c_miss_cm,
            c_fa_cm: costs.c_fa_cm,
            asv_p_miss: asv.p_miss,
            asv_p_fa: asv.p_fa,
            asv_p_miss_spoof: asv.p_miss_spoof,
        }
    }

    /// Desk-scale model and schedule: 4 filters, blocks 16/32, C = 32,
    /// 2 layers per direction, E = 64, N = 8.
    pub fn tiny() -> Self {
        TrainConfig {
            preset: "tiny".into(),
            learning_rate: 3e-3,
            batch_size: 8,
            epochs: 30,
            stop_at_zero_eer: true,
            n_filters: 4,
            sinc_pool: 16,
            block_channels: vec![16, 32],
            block_pool_freq: vec![2, 2],
            block_pool_time: vec![4, 4],
            layers_per_direction: 2,
            d_state: 8,
            ..Self::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected paper or tiny)"))),
        }
    }

    /// Parses a config document: preset first, then the file's keys on top.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        let preset = match table.get("preset") {
            None => "paper".to_string(),
            Some(toml::Value::String(s)) => s.clone(),
            Some(other) => return Err(Error::Config(format!("`preset` must be a string, got {other}"))),
        };
        let mut merged = toml::Table::try_from(Self::preset(&preset)?)
            .map_err(|e| Error::Config(format!("cannot serialize preset: {e}")))?;
        for (k, v) in table {
            merged.insert(k, v);
        }
        let cfg: TrainConfig = merged.try_into().map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: format!("cannot read config: {e}"),
        })?;
        Self::from_toml_str(&text)
    }

    /// Explicit path, else [`CONFIG_ENV`], else `fallback` (or the paper
    /// preset when `None`).
    pub fn resolve(path: Option<&Path>, fallback: Option<&str>) -> Result<Self> {
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        match path.map(Path::to_path_buf).or(env_path) {
            Some(p) => Self::load(&p),
            None => Self::preset(fallback.unwrap_or("paper")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("samples", self.samples),
            ("layers_per_direction", self.layers_per_direction),
            ("d_state", self.d_state),
            ("expand", self.expand),
            ("conv_kernel", self.conv_kernel),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if i64::try_from(self.seed).is_err() {
            // TOML integers are signed 64-bit
            return Err(Error::Config(format!("seed must be at most {}, got {}", i64::MAX, self.seed)));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if self.margin == 0 {
            return Err(Error::Config("margin must be at least 1".into()));
        }
        if !(self.lambda_start >= 0.0 && self.lambda_min >= 0.0 && self.lambda_decay > 0.0) {
            return Err(Error::Config("margin blend schedule must be non-negative".into()));
        }
        let n = self.block_channels.len();
        if self.block_pool_freq.len() != n || self.block_pool_time.len() != n {
            return Err(Error::Config(format!(
                "block_channels, block_pool_freq and block_pool_time must have equal lengths ({n}, {}, {})",
                self.block_pool_freq.len(),
                self.block_pool_time.len()
            )));
        }
        self.frontend().validate()?;
        crate::metrics::tdcf_coefficients(&self.asv_rates(), &self.tdcf_costs())?;
        crate::frontend::shape_probe(&self.frontend(), self.samples)
            .map_err(|e| Error::Config(format!("samples = {} is too short for the frontend: {e}", self.samples)))?;
        Ok(())
    }

    pub fn frontend(&self) -> FrontendConfig {
        FrontendConfig {
            n_filters: self.n_filters,
            kernel_len: self.sinc_kernel,
            sample_rate: self.sample_rate,
            sinc_pool: self.sinc_pool,
            min_low_hz: self.min_low_hz,
            min_band_hz: self.min_band_hz,
            init_low_hz: self.init_low_hz,
            trainable_sinc: self.trainable_sinc,
            blocks: self
                .block_channels
                .iter()
                .zip(self.block_pool_freq.iter().zip(&self.block_pool_time))
                .map(|(&channels, (&pf, &pt))| BlockPlan { channels, pool: (pf, pt) })
                .collect(),
            se_reduction: self.se_reduction,
        }
    }

    pub fn mamba(&self) -> MambaConfig {
        let c = self.block_channels.last().copied().unwrap_or(1);
        MambaConfig {
            d_model: c,
            d_inner: self.expand * c,
            d_state: self.d_state,
            conv_kernel: self.conv_kernel,
            residual: self.residual,
            bias: self.bias,
        }
    }

    pub fn tdcf_costs(&self) -> TdcfCosts {
        TdcfCosts {
            p_spoof: self.p_spoof,
            p_tar: self.p_tar,
            p_non: self.p_non,
            c_miss_asv: self.c_miss_asv,
            c_fa_asv: self.c_fa_asv,
            c_miss_cm: self.c_miss_cm,
            c_fa_cm: self.c_fa_cm,
        }
    }

    pub fn asv_rates(&self) -> AsvRates {
        AsvRates { p_miss: self.asv_p_miss, p_fa: self.asv_p_fa, p_miss_spoof: self.asv_p_miss_spoof }
    }
}
