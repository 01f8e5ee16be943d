//! Small building blocks shared by the model modules: seeded initialization,
//! affine maps, RMS normalization, and named-parameter traversal.

use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Explicitly seeded xorshift generator used for every initialization.
pub struct SeededRng(XorShiftRng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(XorShiftRng::seed_from_u64(seed))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.gen::<f64>()
    }

    pub fn uniform_vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.gen()
    }

    pub fn inner(&mut self) -> &mut XorShiftRng {
        &mut self.0
    }
}

/// Anything holding named trainable tensors.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, t| n += t.numel());
        n
    }

    fn zero_grads(&self) {
        self.visit_params("", &mut |_, t| t.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map over the last axis: `y = x · W + b`, `W: (in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` weights, zero bias.
    pub fn new(rng: &mut SeededRng, input: usize, output: usize, bias: bool) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = Tensor::param(rng.uniform_vec(input * output, -bound, bound), &[input, output])
            .expect("linear weight shape");
        let bias = bias.then(|| Tensor::param(vec![0.0; output], &[output]).expect("bias shape"));
        Linear { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight).map_err(|_| {
            Error::dim("linear", x.shape(), self.weight.shape())
        })?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

impl Parameterized for Linear {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// RMS normalization over the last axis with a learned per-channel scale.
#[derive(Debug, Clone)]
pub struct RmsNorm {
    pub scale: Tensor,
    pub eps: f64,
}

impl RmsNorm {
    pub fn new(dim: usize) -> Self {
        RmsNorm {
            scale: Tensor::param(vec![1.0; dim], &[dim]).expect("norm shape"),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let axis = x.ndim() - 1;
        let ms = x.square().mean_axis(axis, true)?;
        let inv = ms.add_scalar(self.eps).sqrt().recip();
        x.mul(&inv)?.mul(&self.scale)
    }
}

impl Parameterized for RmsNorm {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "scale"), &self.scale);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "scale"), &mut self.scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_rng_is_reproducible() {
        let a = SeededRng::new(42).uniform_vec(5, -1.0, 1.0);
        let b = SeededRng::new(42).uniform_vec(5, -1.0, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, SeededRng::new(43).uniform_vec(5, -1.0, 1.0));
    }

    #[test]
    fn linear_applies_over_last_axis() {
        let mut rng = SeededRng::new(1);
        let lin = Linear::new(&mut rng, 3, 2, true);
        let x = Tensor::new(vec![1.0; 12], &[2, 2, 3]).unwrap();
        let y = lin.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        let names: Vec<_> = lin.named_params().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["weight", "bias"]);
    }

    #[test]
    fn rms_norm_of_zero_is_zero() {
        let n = RmsNorm::new(4);
        let y = n.forward(&Tensor::zeros(&[1, 3, 4])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
