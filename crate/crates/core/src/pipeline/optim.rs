use crate::error::{Error, Result};
use crate::layers::Parameterized;

/// Adam without weight decay. Moments are kept per parameter in visit
/// order; tensors that do not track gradients are skipped.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, steps: 0, moments: Vec::new() }
    }

    /// Applies one update from the gradients accumulated on `model`.
    pub fn step(&mut self, model: &mut dyn Parameterized) -> Result<()> {
        self.steps += 1;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let moments = &mut self.moments;
        let mut idx = 0;
        let mut failure = None;
        model.visit_params_mut("", &mut |name, p| {
            if !p.requires_grad() || failure.is_some() {
                return;
            }
            if moments.len() <= idx {
                moments.push((vec![0.0; p.numel()], vec![0.0; p.numel()]));
            }
            let (m, v) = &mut moments[idx];
            idx += 1;
            if m.len() != p.numel() {
                failure = Some(Error::Contract(format!("parameter `{name}` changed size between steps")));
                return;
            }
            let Some(g) = p.grad() else { return };
            let mut data = p.to_vec();
            for i in 0..data.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
            *p = p.with_data(data).expect("same shape");
        });
        failure.map_or(Ok(()), Err)
    }
}
