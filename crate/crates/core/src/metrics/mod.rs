//! Training loss and detection metrics.

mod asoftmax;
mod eer;
mod records;
mod tdcf;

pub use asoftmax::{asoftmax_loss, margin_psi, ASoftmaxHead, BONAFIDE, SPOOF};
pub use eer::{compute_eer, operating_points, EerResult, OperatingPoint};
pub use records::{
    join_scores, parse_key_file, read_key_file, render_key_file, validate_records, Label, ScoreFile,
    ScoreRecord,
};
pub use tdcf::{compute_min_tdcf, tdcf_coefficients, AsvRates, TdcfCosts, TdcfResult, TDCF_VARIANT};
