//! Selective state space core.
//!
//! The continuous system `h' = A h + B x, y = C h` is discretized with a
//! zero-order hold per step size Δ:
//!
//! ```text
//! Ā = exp(Δ A)            B̄ x = (exp(Δ A) − 1) / A · B · x
//! h_l = Ā_l ⊙ h_{l−1} + B̄_l x_l        y_l = Σ_n C_l[n] h_l[n]
//! ```
//!
//! `A` is diagonal per `(e, n)` pair and parameterized as `A = −exp(a_log)`,
//! so `0 < Ā < 1` whenever `Δ > 0`. With time-invariant `B, C, Δ` the scan
//! equals a causal convolution with `K̄[m] = C Ā^m B̄`, which
//! [`lti_kernel`] builds as an independent route.

use crate::error::{Error, Result};
use crate::layers::{join, Linear, Parameterized, SeededRng};
use crate::tensor::Tensor;

/// Per-layer selective SSM parameters.
#[derive(Debug, Clone)]
pub struct SsmParams {
    /// `(E, N)`; the state matrix is `−exp(a_log)`.
    pub a_log: Tensor,
    /// E → E, its bias is the Δ offset parameter.
    pub delta_proj: Linear,
    /// E → N, bias-free.
    pub b_proj: Linear,
    /// E → N, bias-free.
    pub c_proj: Linear,
    pub state_dim: usize,
    pub inner_dim: usize,
}

impl SsmParams {
    /// `A[e, n] = −(n + 1)`; Δ bias set so that `softplus(bias)` is
    /// log-uniform in `[1e-3, 1e-1]`.
    pub fn new(rng: &mut SeededRng, inner_dim: usize, state_dim: usize) -> Self {
        let a_log = (0..inner_dim)
            .flat_map(|_| (0..state_dim).map(|n| ((n + 1) as f64).ln()))
            .collect();
        let a_log = Tensor::param(a_log, &[inner_dim, state_dim]).expect("a_log shape");
        let mut delta_proj = Linear::new(rng, inner_dim, inner_dim, true);
        let dt: Vec<f64> = (0..inner_dim)
            .map(|_| {
                let u = rng.uniform(0.0, 1.0);
                (1e-3f64.ln() + u * (1e-1f64.ln() - 1e-3f64.ln())).exp()
            })
            .collect();
        // inverse softplus
        let bias = dt.iter().map(|&d| d + (-(-d).exp_m1()).ln()).collect();
        delta_proj.bias = Some(Tensor::param(bias, &[inner_dim]).expect("delta bias shape"));
        SsmParams {
            a_log,
            delta_proj,
            b_proj: Linear::new(rng, inner_dim, state_dim, false),
            c_proj: Linear::new(rng, inner_dim, state_dim, false),
            state_dim,
            inner_dim,
        }
    }

    /// State matrix `A = −exp(a_log)`, strictly negative.
    pub fn a_matrix(&self) -> Tensor {
        self.a_log.exp().neg()
    }
}

impl Parameterized for SsmParams {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "a_log"), &self.a_log);
        self.delta_proj.visit_params(&join(prefix, "delta_proj"), f);
        self.b_proj.visit_params(&join(prefix, "b_proj"), f);
        self.c_proj.visit_params(&join(prefix, "c_proj"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "a_log"), &mut self.a_log);
        self.delta_proj.visit_params_mut(&join(prefix, "delta_proj"), f);
        self.b_proj.visit_params_mut(&join(prefix, "b_proj"), f);
        self.c_proj.visit_params_mut(&join(prefix, "c_proj"), f);
    }
}

/// Discrete transition and input-scaled input term, both `(B, L, E, N)`.
#[derive(Debug, Clone)]
pub struct DiscretizedPair {
    pub a_bar: Tensor,
    pub b_bar_x: Tensor,
}

/// How the ZOH input coefficient is evaluated. `Naive` evaluates
/// `(exp(ΔA) − 1) / A` literally and exists only for fault injection in the
/// verification harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZohForm {
    #[default]
    Stable,
    Naive,
}

/// Zero-order-hold discretization.
///
/// Shapes: `a (E, N)`, `delta (B, L, E)`, `b_sel (B, L, N)`, `x (B, L, E)`.
pub fn discretize_zoh(a: &Tensor, delta: &Tensor, b_sel: &Tensor, x: &Tensor) -> Result<DiscretizedPair> {
    discretize_zoh_with(a, delta, b_sel, x, ZohForm::Stable)
}

pub fn discretize_zoh_with(
    a: &Tensor,
    delta: &Tensor,
    b_sel: &Tensor,
    x: &Tensor,
    form: ZohForm,
) -> Result<DiscretizedPair> {
    let &[e, n] = a.shape() else {
        return Err(Error::dim("discretize_zoh", a.shape(), delta.shape()));
    };
    let &[bs, l, e2] = delta.shape() else {
        return Err(Error::dim("discretize_zoh", a.shape(), delta.shape()));
    };
    if e2 != e || x.shape() != delta.shape() {
        return Err(Error::dim("discretize_zoh", delta.shape(), x.shape()));
    }
    if b_sel.shape() != [bs, l, n] {
        return Err(Error::dim("discretize_zoh", b_sel.shape(), &[bs, l, n]));
    }
    if let Some(bad) = delta.data().iter().find(|d| !(**d > 0.0)) {
        return if bad.is_nan() {
            Err(Error::Numeric("NaN step size in discretize_zoh".into()))
        } else {
            Err(Error::Contract(format!("step size must be positive, got {bad}")))
        };
    }
    if a.data().iter().chain(b_sel.data()).chain(x.data()).any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN input to discretize_zoh".into()));
    }

    let d4 = delta.reshape(&[bs, l, e, 1])?;
    let da = d4.mul(a)?;
    let a_bar = da.exp();
    let coef = match form {
        ZohForm::Stable => d4.zoh_coefficient(a)?,
        ZohForm::Naive => da.exp().add_scalar(-1.0).div(a)?,
    };
    let b_bar_x = coef
        .mul(&b_sel.reshape(&[bs, l, 1, n])?)?
        .mul(&x.reshape(&[bs, l, e, 1])?)?;
    Ok(DiscretizedPair { a_bar, b_bar_x })
}

/// Left-to-right recurrence from a zero state; returns `y (B, L, E)`.
pub fn selective_scan(pair: &DiscretizedPair, c_sel: &Tensor) -> Result<Tensor> {
    let DiscretizedPair { a_bar, b_bar_x } = pair;
    let &[b, l, e, n] = a_bar.shape() else {
        return Err(Error::dim("selective_scan", a_bar.shape(), c_sel.shape()));
    };
    if b_bar_x.shape() != a_bar.shape() || c_sel.shape() != [b, l, n] {
        return Err(Error::dim("selective_scan", a_bar.shape(), c_sel.shape()));
    }
    let (ad, bd, cd) = (a_bar.data(), b_bar_x.data(), c_sel.data());
    let mut hist = vec![0.0; b * l * e * n];
    let mut y = vec![0.0; b * l * e];
    for bi in 0..b {
        for li in 0..l {
            let cur = (bi * l + li) * e * n;
            let c = &cd[(bi * l + li) * n..(bi * l + li + 1) * n];
            for ei in 0..e {
                let off = cur + ei * n;
                let mut acc = 0.0;
                for ni in 0..n {
                    let prev = if li == 0 { 0.0 } else { hist[off - e * n + ni] };
                    let h = ad[off + ni] * prev + bd[off + ni];
                    hist[off + ni] = h;
                    acc += c[ni] * h;
                }
                y[(bi * l + li) * e + ei] = acc;
            }
        }
    }

    let (at, ct) = (a_bar.clone(), c_sel.clone());
    Ok(Tensor::from_op(
        "selective_scan",
        vec![b, l, e],
        y,
        vec![a_bar.clone(), b_bar_x.clone(), c_sel.clone()],
        move |g, needs| {
            let (ad, cd) = (at.data(), ct.data());
            let mut ga = needs[0].then(|| vec![0.0; b * l * e * n]);
            let mut gbx = needs[1].then(|| vec![0.0; b * l * e * n]);
            let mut gc = needs[2].then(|| vec![0.0; b * l * n]);
            // adjoint of h_l, already including the contribution from step l+1
            let mut carry = vec![0.0; e * n];
            for bi in 0..b {
                carry.iter_mut().for_each(|v| *v = 0.0);
                for li in (0..l).rev() {
                    let cur = (bi * l + li) * e * n;
                    let c = &cd[(bi * l + li) * n..(bi * l + li + 1) * n];
                    for ei in 0..e {
                        let gy = g[(bi * l + li) * e + ei];
                        let off = cur + ei * n;
                        for ni in 0..n {
                            let dh = gy * c[ni] + carry[ei * n + ni];
                            if let Some(gbx) = gbx.as_mut() {
                                gbx[off + ni] = dh;
                            }
                            if let Some(ga) = ga.as_mut() {
                                if li > 0 {
                                    ga[off + ni] = dh * hist[off - e * n + ni];
                                }
                            }
                            if let Some(gc) = gc.as_mut() {
                                gc[(bi * l + li) * n + ni] += gy * hist[off + ni];
                            }
                            carry[ei * n + ni] = dh * ad[off + ni];
                        }
                    }
                }
            }
            vec![ga, gbx, gc]
        },
    ))
}

/// Convolution kernel of the time-invariant system, `(E, M)`:
/// `K̄[e, m] = Σ_n C[n] · Ā[e, n]^m · B̄[e, n]`.
pub fn lti_kernel(a: &Tensor, delta: f64, b: &Tensor, c: &Tensor, len: usize) -> Result<Tensor> {
    if !(delta > 0.0) {
        return Err(Error::Contract(format!("step size must be positive, got {delta}")));
    }
    let &[e, n] = a.shape() else {
        return Err(Error::dim("lti_kernel", a.shape(), b.shape()));
    };
    if b.shape() != [n] || c.shape() != [n] {
        return Err(Error::dim("lti_kernel", b.shape(), c.shape()));
    }
    if len == 0 {
        return Err(Error::Contract("kernel length must be positive".into()));
    }
    let (ad, bd, cd) = (a.data(), b.data(), c.data());
    let mut k = vec![0.0; e * len];
    for ei in 0..e {
        for ni in 0..n {
            let av = ad[ei * n + ni];
            let a_bar = (delta * av).exp();
            let mut term = cd[ni] * crate::tensor::zoh_coefficient(delta, av) * bd[ni];
            for m in 0..len {
                k[ei * len + m] += term;
                term *= a_bar;
            }
        }
    }
    Tensor::new(k, &[e, len])
}

/// Causal convolution of `x (B, L, E)` with a per-channel kernel `(E, M)`:
/// `y[l] = Σ_{j ≤ min(l, M−1)} K[j] · x[l − j]`.
pub fn causal_convolve(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let &[b, l, e] = x.shape() else {
        return Err(Error::dim("causal_convolve", x.shape(), kernel.shape()));
    };
    let &[e2, m] = kernel.shape() else {
        return Err(Error::dim("causal_convolve", x.shape(), kernel.shape()));
    };
    if e != e2 {
        return Err(Error::dim("causal_convolve", x.shape(), kernel.shape()));
    }
    let (xd, kd) = (x.data(), kernel.data());
    let mut y = vec![0.0; b * l * e];
    for bi in 0..b {
        for li in 0..l {
            for ei in 0..e {
                let mut acc = 0.0;
                for j in 0..=li.min(m - 1) {
                    acc += kd[ei * m + j] * xd[(bi * l + li - j) * e + ei];
                }
                y[(bi * l + li) * e + ei] = acc;
            }
        }
    }
    Tensor::new(y, &[b, l, e])
}

/// Input-dependent selection: `(B_sel, C_sel, Δ)` from `x_conv (B, L, E)`.
pub fn select_projections(params: &SsmParams, x_conv: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    if x_conv.ndim() != 3 || x_conv.shape()[2] != params.inner_dim {
        return Err(Error::dim("select_projections", x_conv.shape(), &[params.inner_dim]));
    }
    let b_sel = params.b_proj.forward(x_conv)?;
    let c_sel = params.c_proj.forward(x_conv)?;
    let delta = params.delta_proj.forward(x_conv)?.softplus();
    Ok((b_sel, c_sel, delta))
}

/// Full selective SSM: selection, discretization, scan.
pub fn ssm_forward(params: &SsmParams, x_conv: &Tensor) -> Result<Tensor> {
    let (b_sel, c_sel, delta) = select_projections(params, x_conv)?;
    let pair = discretize_zoh(&params.a_matrix(), &delta, &b_sel, x_conv)?;
    selective_scan(&pair, &c_sel)
}
