//! Normalized tandem detection cost with a fixed ASV operating point.
//!
//! ```text
//! C1 = P_tar (C_miss_cm - C_miss_asv P_miss_asv) - P_non C_fa_asv P_fa_asv
//! C2 = C_fa_cm P_spoof (1 - P_miss_spoof_asv)
//! t-DCF(t) = (C1 P_miss_cm(t) + C2 P_fa_cm(t)) / min(C1, C2)
//! ```
//!
//! CM rates follow the EER sweep convention and the minimum is taken over
//! every distinct score plus `+∞`.

use serde::{Deserialize, Serialize};

use super::eer::operating_points;
use super::records::ScoreRecord;
use crate::error::{Error, Result};

/// Name written to reports next to every t-DCF value.
pub const TDCF_VARIANT: &str = "asvspoof2019";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdcfCosts {
    pub p_spoof: f64,
    pub p_tar: f64,
    pub p_non: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
}

impl Default for TdcfCosts {
    fn default() -> Self {
        TdcfCosts {
            p_spoof: 0.05,
            p_tar: 0.95 * 0.99,
            p_non: 0.95 * 0.01,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
        }
    }
}

/// Error rates of the fixed ASV system the CM is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsvRates {
    pub p_miss: f64,
    pub p_fa: f64,
    pub p_miss_spoof: f64,
}

impl Default for AsvRates {
    fn default() -> Self {
        AsvRates { p_miss: 0.01, p_fa: 0.01, p_miss_spoof: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcfResult {
    pub min_tdcf: f64,
    pub threshold: f64,
}

/// `(C1, C2)` after validating every constant.
pub fn tdcf_coefficients(asv: &AsvRates, costs: &TdcfCosts) -> Result<(f64, f64)> {
    let named = [
        ("c_miss_asv", costs.c_miss_asv),
        ("c_fa_asv", costs.c_fa_asv),
        ("c_miss_cm", costs.c_miss_cm),
        ("c_fa_cm", costs.c_fa_cm),
    ];
    for (name, v) in named {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("t-DCF cost {name} must be a non-negative number, got {v}")));
        }
    }
    let probs = [
        ("p_spoof", costs.p_spoof),
        ("p_tar", costs.p_tar),
        ("p_non", costs.p_non),
        ("asv p_miss", asv.p_miss),
        ("asv p_fa", asv.p_fa),
        ("asv p_miss_spoof", asv.p_miss_spoof),
    ];
    for (name, v) in probs {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    let c1 = costs.p_tar * (costs.c_miss_cm - costs.c_miss_asv * asv.p_miss) - costs.p_non * costs.c_fa_asv * asv.p_fa;
    let c2 = costs.c_fa_cm * costs.p_spoof * (1.0 - asv.p_miss_spoof);
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(Error::Config(format!(
            "t-DCF weights must be positive, got C1 = {c1}, C2 = {c2}"
        )));
    }
    Ok((c1, c2))
}

pub fn compute_min_tdcf(cm: &[ScoreRecord], asv: &AsvRates, costs: &TdcfCosts) -> Result<TdcfResult> {
    let (c1, c2) = tdcf_coefficients(asv, costs)?;
    let norm = c1.min(c2);
    let mut best = TdcfResult { min_tdcf: f64::INFINITY, threshold: f64::NAN };
    for p in operating_points(cm)? {
        let v = (c1 * p.frr + c2 * p.far) / norm;
        if v < best.min_tdcf {
            best = TdcfResult { min_tdcf: v, threshold: p.threshold };
        }
    }
    Ok(best)
}
