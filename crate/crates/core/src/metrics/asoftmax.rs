//! Angular-margin softmax head and loss.
//!
//! The head holds one unit vector per class as the columns of a `(d, 2)`
//! matrix, so the plain logits are `‖h‖ cos θ_j`. During training the
//! target-class cosine is replaced by a blend of `cos θ` and the margin
//! function `ψ(θ) = (-1)^k cos(mθ) - 2k`, `θ ∈ [kπ/m, (k+1)π/m]`.

use crate::error::{Error, Result};
use crate::layers::{join, Parameterized, SeededRng};
use crate::tensor::Tensor;

/// Class index of genuine speech in logits and labels.
pub const BONAFIDE: usize = 1;
/// Class index of spoofed speech.
pub const SPOOF: usize = 0;

#[derive(Debug, Clone)]
pub struct ASoftmaxHead {
    /// `(d, 2)`; column `j` is the class-`j` direction.
    pub weight: Tensor,
    pub margin: u32,
    pub lambda_start: f64,
    pub lambda_decay: f64,
    pub lambda_min: f64,
}

impl ASoftmaxHead {
    pub fn new(rng: &mut SeededRng, dim: usize, margin: u32) -> Self {
        let mut w = rng.uniform_vec(dim * 2, -1.0, 1.0);
        normalize_columns(&mut w, dim);
        ASoftmaxHead {
            weight: Tensor::param(w, &[dim, 2]).expect("head shape"),
            margin,
            lambda_start: 1000.0,
            lambda_decay: 0.99,
            lambda_min: 5.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Blend weight for the margin term at optimizer step `step`.
    pub fn lambda(&self, step: usize) -> f64 {
        (self.lambda_start * self.lambda_decay.powi(step.min(i32::MAX as usize) as i32)).max(self.lambda_min)
    }

    fn unit_weight(&self) -> Result<Tensor> {
        let norms = self.weight.square().sum_axis(0, true)?.sqrt();
        if norms.data().iter().any(|&n| !(n > 0.0)) {
            return Err(Error::Numeric("A-Softmax class vector has zero norm".into()));
        }
        self.weight.div(&norms)
    }

    /// Margin-free logits `‖h‖ cos θ_j`, `(B, d) → (B, 2)`.
    pub fn logits(&self, h: &Tensor) -> Result<Tensor> {
        h.matmul(&self.unit_weight()?)
    }

    /// Rescales each class column to unit norm. Columns already within 1e-12
    /// of unit norm are left bitwise untouched; returns whether anything
    /// changed.
    pub fn renormalize(&mut self) -> bool {
        let d = self.dim();
        let mut w = self.weight.to_vec();
        let off = column_norms(&w, d).iter().any(|n| (n - 1.0).abs() > 1e-12);
        if off {
            normalize_columns(&mut w, d);
            self.weight = self.weight.with_data(w).expect("same shape");
        }
        off
    }
}

fn column_norms(w: &[f64], d: usize) -> [f64; 2] {
    let mut n = [0.0; 2];
    for r in 0..d {
        n[0] += w[2 * r] * w[2 * r];
        n[1] += w[2 * r + 1] * w[2 * r + 1];
    }
    [n[0].sqrt(), n[1].sqrt()]
}

fn normalize_columns(w: &mut [f64], d: usize) {
    let n = column_norms(w, d);
    for r in 0..d {
        for j in 0..2 {
            if n[j] > 0.0 {
                w[2 * r + j] /= n[j];
            }
        }
    }
}

impl Parameterized for ASoftmaxHead {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
    }
}

/// `(T_m(c), U_{m-1}(c))` by the three-term recurrences.
fn chebyshev(m: u32, c: f64) -> (f64, f64) {
    if m == 0 {
        return (1.0, 0.0);
    }
    let (mut t0, mut t1) = (1.0, c);
    let (mut u0, mut u1) = (0.0, 1.0);
    for _ in 1..m {
        (t0, t1) = (t1, 2.0 * c * t1 - t0);
        (u0, u1) = (u1, 2.0 * c * u1 - u0);
    }
    (t1, u1)
}

/// Margin function evaluated from the cosine, with its derivative in `c`.
pub fn margin_psi(m: u32, c: f64) -> (f64, f64) {
    let theta = c.clamp(-1.0, 1.0).acos();
    let k = ((m as f64 * theta / std::f64::consts::PI).floor() as u32).min(m.saturating_sub(1));
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    let (t, u) = chebyshev(m, c);
    (sign * t - 2.0 * k as f64, sign * m as f64 * u)
}

impl Tensor {
    fn margin_psi(&self, m: u32) -> Tensor {
        let (vals, derivs): (Vec<f64>, Vec<f64>) = self.data().iter().map(|&c| margin_psi(m, c)).unzip();
        Tensor::from_op("margin_psi", self.shape().to_vec(), vals, vec![self.clone()], move |g, _| {
            vec![Some(g.iter().zip(&derivs).map(|(g, d)| g * d).collect())]
        })
    }
}

/// Mean cross-entropy over margin-adjusted logits. `labels[b]` is
/// [`BONAFIDE`] or [`SPOOF`]; `lambda` blends `cos θ` back into the target
/// logit (`0` gives the pure margin form).
pub fn asoftmax_loss(head: &ASoftmaxHead, embedding: &Tensor, labels: &[usize], lambda: f64) -> Result<Tensor> {
    if embedding.ndim() != 2 || embedding.shape()[1] != head.dim() {
        return Err(Error::dim("asoftmax_loss", embedding.shape(), head.weight.shape()));
    }
    let (b, d) = (embedding.shape()[0], embedding.shape()[1]);
    if labels.len() != b {
        return Err(Error::Input(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Input(format!("label {bad} is not 0 or 1")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("margin blend must be non-negative, got {lambda}")));
    }
    for row in embedding.data().chunks(d) {
        let n2: f64 = row.iter().map(|v| v * v).sum();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(Error::Numeric("embedding with zero or non-finite norm".into()));
        }
    }

    let norm = embedding.square().sum_axis(1, true)?.sqrt();
    let cos = embedding.matmul(&head.unit_weight()?)?.div(&norm)?;
    let mut onehot = vec![0.0; b * 2];
    for (i, &l) in labels.iter().enumerate() {
        onehot[2 * i + l] = 1.0;
    }
    let mask = Tensor::new(onehot, &[b, 2])?;
    let target = cos.mul_scalar(lambda).add(&cos.margin_psi(head.margin))?.mul_scalar(1.0 / (1.0 + lambda));
    let adjusted = cos.add(&mask.mul(&target.sub(&cos)?)?)?;
    let logits = adjusted.mul(&norm)?;
    Ok(logits.log_softmax_last()?.mul(&mask)?.sum().mul_scalar(-1.0 / b as f64))
}
