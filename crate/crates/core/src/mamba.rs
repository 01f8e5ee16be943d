//! One Mamba layer and a unidirectional stack of them.
//!
//! Per layer: `(x, z) = split(in_proj(u))`, `x' = SiLU(causal_conv(x))`,
//! `y = SSM(x')`, `out = out_proj(y ⊙ SiLU(z))`. In residual mode `u` is the
//! RMS-normalized input and the layer input is added back to `out`; with
//! residual mode off the layer is the literal `x ← y` composition.

use crate::error::{Error, Result};
use crate::layers::{join, Linear, Parameterized, RmsNorm, SeededRng};
use crate::ssm::{ssm_forward, SsmParams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MambaConfig {
    /// Token channels C.
    pub d_model: usize,
    /// Expanded channels E.
    pub d_inner: usize,
    /// State size N.
    pub d_state: usize,
    pub conv_kernel: usize,
    pub residual: bool,
    /// Biases on in_proj, out_proj and the causal conv.
    pub bias: bool,
}

impl MambaConfig {
    /// E = 2C, k = 4, residual + bias on.
    pub fn new(d_model: usize, d_state: usize) -> Self {
        MambaConfig {
            d_model,
            d_inner: 2 * d_model,
            d_state,
            conv_kernel: 4,
            residual: true,
            bias: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MambaLayer {
    pub config: MambaConfig,
    pub norm: Option<RmsNorm>,
    pub in_proj: Linear,
    /// `(E, k)` depthwise taps; tap `k-1` is the current position.
    pub conv_weight: Tensor,
    pub conv_bias: Option<Tensor>,
    pub ssm: SsmParams,
    pub out_proj: Linear,
}

impl MambaLayer {
    pub fn new(rng: &mut SeededRng, config: MambaConfig) -> Self {
        let MambaConfig { d_model, d_inner, d_state, conv_kernel, residual, bias } = config;
        let in_proj = Linear::new(rng, d_model, 2 * d_inner, bias);
        let bound = 1.0 / (conv_kernel as f64).sqrt();
        let conv_weight = Tensor::param(rng.uniform_vec(d_inner * conv_kernel, -bound, bound), &[d_inner, conv_kernel])
            .expect("conv shape");
        let conv_bias = bias.then(|| Tensor::param(vec![0.0; d_inner], &[d_inner]).expect("conv bias"));
        let ssm = SsmParams::new(rng, d_inner, d_state);
        let out_proj = Linear::new(rng, d_inner, d_model, bias);
        MambaLayer {
            config,
            norm: residual.then(|| RmsNorm::new(d_model)),
            in_proj,
            conv_weight,
            conv_bias,
            ssm,
            out_proj,
        }
    }

    /// `(B, L, C) → (B, L, C)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.config.d_model;
        if x.ndim() != 3 || x.shape()[2] != c {
            return Err(Error::dim("mamba_layer", x.shape(), &[c]));
        }
        let e = self.config.d_inner;
        let u = match &self.norm {
            Some(n) => n.forward(x)?,
            None => x.clone(),
        };
        let xz = self.in_proj.forward(&u)?;
        let xi = xz.narrow(2, 0, e)?;
        let z = xz.narrow(2, e, e)?;
        let bias = match &self.conv_bias {
            Some(b) => b.clone(),
            None => Tensor::zeros(&[e]),
        };
        let xc = xi.depthwise_causal_conv1d(&self.conv_weight, &bias)?.silu();
        let y = ssm_forward(&self.ssm, &xc)?;
        let out = self.out_proj.forward(&y.mul(&z.silu())?)?;
        if self.config.residual {
            out.add(x)
        } else {
            Ok(out)
        }
    }
}

impl Parameterized for MambaLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(n) = &self.norm {
            n.visit_params(&join(prefix, "norm"), f);
        }
        self.in_proj.visit_params(&join(prefix, "in_proj"), f);
        f(&join(prefix, "conv.weight"), &self.conv_weight);
        if let Some(b) = &self.conv_bias {
            f(&join(prefix, "conv.bias"), b);
        }
        self.ssm.visit_params(&join(prefix, "ssm"), f);
        self.out_proj.visit_params(&join(prefix, "out_proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(n) = &mut self.norm {
            n.visit_params_mut(&join(prefix, "norm"), f);
        }
        self.in_proj.visit_params_mut(&join(prefix, "in_proj"), f);
        f(&join(prefix, "conv.weight"), &mut self.conv_weight);
        if let Some(b) = &mut self.conv_bias {
            f(&join(prefix, "conv.bias"), b);
        }
        self.ssm.visit_params_mut(&join(prefix, "ssm"), f);
        self.out_proj.visit_params_mut(&join(prefix, "out_proj"), f);
    }
}

/// Layers applied in order for one direction.
#[derive(Debug, Clone)]
pub struct MambaStack {
    pub layers: Vec<MambaLayer>,
}

impl MambaStack {
    pub fn new(rng: &mut SeededRng, config: MambaConfig, n_layers: usize) -> Self {
        MambaStack {
            layers: (0..n_layers).map(|_| MambaLayer::new(rng, config)).collect(),
        }
    }

    pub fn config(&self) -> Option<MambaConfig> {
        self.layers.first().map(|l| l.config)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::Config("Mamba stack has no layers".into()))?;
        if self.layers.iter().any(|l| l.config != first.config) {
            return Err(Error::Config("Mamba stack layers disagree on hyperparameters".into()));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }
}

impl Parameterized for MambaStack {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&join(prefix, &format!("layers.{i}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_difference_check, silu, softplus, zoh_coefficient};

    fn random_input(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(rng.uniform_vec(n, -1.0, 1.0), shape).unwrap()
    }

    #[test]
    fn bias_free_literal_layer_preserves_zero() {
        let mut rng = SeededRng::new(5);
        let cfg = MambaConfig { residual: false, bias: false, ..MambaConfig::new(4, 3) };
        let layer = MambaLayer::new(&mut rng, cfg);
        let y = layer.forward(&Tensor::zeros(&[2, 6, 4])).unwrap();
        assert_eq!(y.shape(), &[2, 6, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let layer = MambaLayer::new(&mut SeededRng::new(0), MambaConfig::new(4, 2));
        assert!(matches!(layer.forward(&Tensor::zeros(&[1, 3, 5])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_step_matches_scalar_composition() {
        let mut rng = SeededRng::new(9);
        let cfg = MambaConfig { residual: false, ..MambaConfig::new(3, 2) };
        let mut layer = MambaLayer::new(&mut rng, cfg);
        // nonzero biases so every affine piece is exercised
        let e = cfg.d_inner;
        layer.in_proj.bias = Some(Tensor::new(rng.uniform_vec(2 * e, -0.3, 0.3), &[2 * e]).unwrap());
        layer.conv_bias = Some(Tensor::new(rng.uniform_vec(e, -0.3, 0.3), &[e]).unwrap());
        layer.out_proj.bias = Some(Tensor::new(rng.uniform_vec(3, -0.3, 0.3), &[3]).unwrap());
        let x = random_input(&mut rng, &[1, 1, 3]);
        let got = layer.forward(&x).unwrap();

        let (c, n, k) = (3, 2, cfg.conv_kernel);
        let lin = |l: &Linear, v: &[f64]| -> Vec<f64> {
            let (i, o) = (l.in_dim(), l.out_dim());
            (0..o)
                .map(|j| {
                    let b = l.bias.as_ref().map_or(0.0, |b| b.data()[j]);
                    b + (0..i).map(|r| v[r] * l.weight.data()[r * o + j]).sum::<f64>()
                })
                .collect()
        };
        let xz = lin(&layer.in_proj, x.data());
        let (xi, z) = xz.split_at(e);
        // only the last tap sees the single position
        let xc: Vec<f64> = (0..e)
            .map(|ch| silu(layer.conv_weight.data()[ch * k + k - 1] * xi[ch] + layer.conv_bias.as_ref().unwrap().data()[ch]))
            .collect();
        let bsel = lin(&layer.ssm.b_proj, &xc);
        let csel = lin(&layer.ssm.c_proj, &xc);
        let delta: Vec<f64> = lin(&layer.ssm.delta_proj, &xc).into_iter().map(softplus).collect();
        let gated: Vec<f64> = (0..e)
            .map(|ch| {
                let y: f64 = (0..n)
                    .map(|s| {
                        let a = -layer.ssm.a_log.data()[ch * n + s].exp();
                        csel[s] * zoh_coefficient(delta[ch], a) * bsel[s] * xc[ch]
                    })
                    .sum();
                y * silu(z[ch])
            })
            .collect();
        let want = lin(&layer.out_proj, &gated);
        for i in 0..c {
            assert!((got.data()[i] - want[i]).abs() < 1e-13, "{i}: {} vs {}", got.data()[i], want[i]);
        }
    }

    #[test]
    fn perturbation_never_reaches_earlier_positions() {
        let mut rng = SeededRng::new(21);
        let layer = MambaLayer::new(&mut rng, MambaConfig::new(4, 4));
        let l = 16;
        let x = random_input(&mut rng, &[1, l, 4]);
        let base = layer.forward(&x).unwrap();
        for pos in 0..l {
            let mut d = x.to_vec();
            d[pos * 4 + 1] += 0.5;
            let y = layer.forward(&Tensor::new(d, &[1, l, 4]).unwrap()).unwrap();
            assert_eq!(&y.data()[..pos * 4], &base.data()[..pos * 4]);
            assert_ne!(&y.data()[pos * 4..], &base.data()[pos * 4..]);
        }
    }

    #[test]
    fn stack_composition() {
        let mut rng = SeededRng::new(2);
        let cfg = MambaConfig::new(4, 3);
        let stack = MambaStack::new(&mut rng, cfg, 2);
        let x = random_input(&mut rng, &[1, 7, 4]);
        let manual = stack.layers[1].forward(&stack.layers[0].forward(&x).unwrap()).unwrap();
        let y = stack.forward(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), manual.data());

        let one = MambaStack { layers: vec![stack.layers[0].clone()] };
        assert_eq!(one.forward(&x).unwrap().data(), stack.layers[0].forward(&x).unwrap().data());

        let empty = MambaStack { layers: vec![] };
        assert!(matches!(empty.forward(&x), Err(Error::Config(_))));
    }

    #[test]
    fn two_layer_stack_gradients() {
        let mut rng = SeededRng::new(33);
        let stack = MambaStack::new(&mut rng, MambaConfig::new(4, 4), 2);
        let x = random_input(&mut rng, &[1, 8, 4]);
        let w = random_input(&mut rng, &[1, 8, 4]);
        let named = stack.named_params();
        let mut params: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
        params.push(x);
        let f = |p: &[Tensor]| -> Result<Tensor> {
            let mut s = stack.clone();
            let mut i = 0;
            s.visit_params_mut("", &mut |_, t| {
                *t = p[i].clone();
                i += 1;
            });
            Ok(s.forward(&p[i])?.mul(&w)?.sum())
        };
        let r = finite_difference_check(f, &params, 1e-5).unwrap();
        assert!(r.max_error() < 1e-4, "{r:?}");
    }
}
