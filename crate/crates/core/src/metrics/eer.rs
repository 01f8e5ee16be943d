//! Equal error rate by threshold sweep.
//!
//! A threshold `t` rejects bonafide scores `< t` and accepts spoof scores
//! `≥ t`. The operating points are taken at every distinct score plus a final
//! point at `+∞` (everything rejected). Along the sweep `d = FRR - FAR`
//! strictly increases; the EER is read off the first point with `d ≥ 0`,
//! linearly interpolated against its predecessor:
//!
//! ```text
//! α   = d_prev / (d_prev - d_cur)
//! FRR = FRR_prev + α (FRR_cur - FRR_prev), FAR likewise
//! EER = (FRR + FAR) / 2
//! ```

use super::records::{validate_records, Label, ScoreRecord};
use crate::error::{Error, Result};

/// Rates at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub frr: f64,
    pub far: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    /// Threshold at the crossing, interpolated like the rates when both
    /// bracketing thresholds are finite.
    pub threshold: f64,
}

pub(crate) fn class_counts(records: &[ScoreRecord]) -> Result<(usize, usize)> {
    let nb = records.iter().filter(|r| r.label == Label::Bonafide).count();
    let ns = records.len() - nb;
    if nb == 0 || ns == 0 {
        return Err(Error::Input(format!(
            "need both classes, got {nb} bonafide and {ns} spoof records"
        )));
    }
    Ok((nb, ns))
}

/// Sweep over distinct scores, then `+∞`.
pub fn operating_points(records: &[ScoreRecord]) -> Result<Vec<OperatingPoint>> {
    validate_records(records)?;
    let (nb, ns) = class_counts(records)?;
    let mut sorted: Vec<(f64, Label)> = records.iter().map(|r| (r.score, r.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::new();
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        points.push(OperatingPoint {
            threshold: t,
            frr: bona_below as f64 / nb as f64,
            far: (ns - spoof_below) as f64 / ns as f64,
        });
        while i < sorted.len() && sorted[i].0 == t {
            match sorted[i].1 {
                Label::Bonafide => bona_below += 1,
                Label::Spoof => spoof_below += 1,
            }
            i += 1;
        }
    }
    points.push(OperatingPoint { threshold: f64::INFINITY, frr: 1.0, far: 0.0 });
    Ok(points)
}

pub fn compute_eer(records: &[ScoreRecord]) -> Result<EerResult> {
    let points = operating_points(records)?;
    let idx = points
        .iter()
        .position(|p| p.frr - p.far >= 0.0)
        .expect("the +inf point always has FRR - FAR = 1");
    let cur = points[idx];
    if idx == 0 {
        return Ok(EerResult { eer: (cur.frr + cur.far) / 2.0, threshold: cur.threshold });
    }
    let prev = points[idx - 1];
    Ok(interpolate(prev, cur))
}

pub(crate) fn interpolate(prev: OperatingPoint, cur: OperatingPoint) -> EerResult {
    let (dp, dc) = (prev.frr - prev.far, cur.frr - cur.far);
    let alpha = dp / (dp - dc);
    let frr = prev.frr + alpha * (cur.frr - prev.frr);
    let far = prev.far + alpha * (cur.far - prev.far);
    let threshold = if cur.threshold.is_finite() {
        prev.threshold + alpha * (cur.threshold - prev.threshold)
    } else {
        prev.threshold
    };
    EerResult { eer: (frr + far) / 2.0, threshold }
}
