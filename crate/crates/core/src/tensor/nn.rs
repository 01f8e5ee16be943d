//! Convolution and pooling kernels with hand-written adjoints.

use super::ops::{axpy, dot};
use super::Tensor;
use crate::error::{Error, Result};

/// Zero padding of a stride-1 2-D convolution, per (frequency, time) axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub padding: (usize, usize),
}

/// Non-overlapping max-pool window, per (frequency, time) axis. Trailing
/// rows/columns that do not fill a window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: (usize, usize),
}

impl Tensor {
    /// Valid 1-D correlation of every waveform row `(B, S)` with every kernel
    /// row `(F, K)`, sampled with `stride`, giving `(B, F, T)`.
    pub fn conv1d_bank(&self, kernels: &Tensor, stride: usize) -> Result<Tensor> {
        let (b, s, f, k) = bank_dims(self, kernels)?;
        if stride == 0 {
            return Err(Error::Contract("conv1d_bank stride must be positive".into()));
        }
        let t = (s - k) / stride + 1;
        let (wd, kd) = (self.data(), kernels.data());
        let mut out = vec![0.0; b * f * t];
        for bi in 0..b {
            let wave = &wd[bi * s..(bi + 1) * s];
            for fi in 0..f {
                let kern = &kd[fi * k..(fi + 1) * k];
                let row = &mut out[(bi * f + fi) * t..(bi * f + fi + 1) * t];
                if stride == 1 {
                    for (kk, &kv) in kern.iter().enumerate() {
                        axpy(kv, &wave[kk..kk + t], row);
                    }
                } else {
                    for (ti, o) in row.iter_mut().enumerate() {
                        *o = dot(kern, &wave[ti * stride..ti * stride + k]);
                    }
                }
            }
        }
        let (w, kt) = (self.clone(), kernels.clone());
        Ok(Tensor::from_op("conv1d_bank", vec![b, f, t], out, vec![self.clone(), kernels.clone()], move |g, needs| {
            let (wd, kd) = (w.data(), kt.data());
            let mut gw = needs[0].then(|| vec![0.0; b * s]);
            let mut gk = needs[1].then(|| vec![0.0; f * k]);
            for bi in 0..b {
                let wave = &wd[bi * s..(bi + 1) * s];
                for fi in 0..f {
                    let grow = &g[(bi * f + fi) * t..(bi * f + fi + 1) * t];
                    for ti in 0..t {
                        let gv = grow[ti];
                        if gv == 0.0 {
                            continue;
                        }
                        let at = ti * stride;
                        if let Some(gk) = gk.as_mut() {
                            axpy(gv, &wave[at..at + k], &mut gk[fi * k..(fi + 1) * k]);
                        }
                        if let Some(gw) = gw.as_mut() {
                            axpy(gv, &kd[fi * k..(fi + 1) * k], &mut gw[bi * s + at..bi * s + at + k]);
                        }
                    }
                }
            }
            vec![gw, gk]
        }))
    }

    /// Fused `max_pool(|conv1d_bank(wave, kernels, 1)|)` over windows of
    /// `pool` samples. Equivalent to the unfused composition but never
    /// materializes the full-rate filter outputs in the graph.
    pub fn conv1d_bank_abs_maxpool(&self, kernels: &Tensor, pool: usize) -> Result<Tensor> {
        let (b, s, f, k) = bank_dims(self, kernels)?;
        if pool == 0 {
            return Err(Error::Contract("pool width must be positive".into()));
        }
        let t_full = s - k + 1;
        let t = t_full / pool;
        if t == 0 {
            return Err(Error::Input(format!(
                "{s} samples give no complete pooling window of {pool} after a {k}-tap filter"
            )));
        }
        let (wd, kd) = (self.data(), kernels.data());
        let mut out = vec![0.0; b * f * t];
        // (position of the winning sample, sign of the filter output there)
        let mut arg = vec![(0usize, 1.0f64); b * f * t];
        let mut row = vec![0.0; t * pool];
        for bi in 0..b {
            let wave = &wd[bi * s..(bi + 1) * s];
            for fi in 0..f {
                let kern = &kd[fi * k..(fi + 1) * k];
                row.iter_mut().for_each(|v| *v = 0.0);
                for (kk, &kv) in kern.iter().enumerate() {
                    axpy(kv, &wave[kk..kk + t * pool], &mut row);
                }
                let base = (bi * f + fi) * t;
                for ti in 0..t {
                    let win = &row[ti * pool..(ti + 1) * pool];
                    let (mut best, mut at) = (win[0].abs(), 0);
                    for (j, v) in win.iter().enumerate().skip(1) {
                        if v.abs() > best {
                            best = v.abs();
                            at = j;
                        }
                    }
                    out[base + ti] = best;
                    let sign = if win[at] >= 0.0 { 1.0 } else { -1.0 };
                    arg[base + ti] = (ti * pool + at, sign);
                }
            }
        }
        let (w, kt) = (self.clone(), kernels.clone());
        Ok(Tensor::from_op("conv1d_bank_abs_maxpool", vec![b, f, t], out, vec![self.clone(), kernels.clone()], move |g, needs| {
            let (wd, kd) = (w.data(), kt.data());
            let mut gw = needs[0].then(|| vec![0.0; b * s]);
            let mut gk = needs[1].then(|| vec![0.0; f * k]);
            for bi in 0..b {
                for fi in 0..f {
                    let base = (bi * f + fi) * t;
                    for ti in 0..t {
                        let (pos, sign) = arg[base + ti];
                        let gv = g[base + ti] * sign;
                        if gv == 0.0 {
                            continue;
                        }
                        if let Some(gk) = gk.as_mut() {
                            axpy(gv, &wd[bi * s + pos..bi * s + pos + k], &mut gk[fi * k..(fi + 1) * k]);
                        }
                        if let Some(gw) = gw.as_mut() {
                            axpy(gv, &kd[fi * k..(fi + 1) * k], &mut gw[bi * s + pos..bi * s + pos + k]);
                        }
                    }
                }
            }
            vec![gw, gk]
        }))
    }

    /// Stride-1 2-D convolution: input `(B, Ci, H, W)`, weight
    /// `(Co, Ci, kh, kw)`, bias `(Co)`.
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, spec: Conv2dSpec) -> Result<Tensor> {
        let err = || Error::dim("conv2d", self.shape(), weight.shape());
        let &[b, ci, h, w] = self.shape() else { return Err(err()) };
        let &[co, ci2, kh, kw] = weight.shape() else { return Err(err()) };
        if ci != ci2 || bias.shape() != [co] {
            return Err(err());
        }
        let (ph, pw) = spec.padding;
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(err());
        }
        let (ho, wo) = (h + 2 * ph - kh + 1, w + 2 * pw - kw + 1);
        let geom = Conv2dGeom { b, ci, h, w, co, kh, kw, ph, pw, ho, wo };
        let mut out = vec![0.0; b * co * ho * wo];
        let (xd, wd, bd) = (self.data(), weight.data(), bias.data());
        for bi in 0..b {
            for oc in 0..co {
                let oplane = &mut out[(bi * co + oc) * ho * wo..(bi * co + oc + 1) * ho * wo];
                oplane.iter_mut().for_each(|v| *v = bd[oc]);
                for ic in 0..ci {
                    let xplane = &xd[(bi * ci + ic) * h * w..(bi * ci + ic + 1) * h * w];
                    for i in 0..kh {
                        for j in 0..kw {
                            let wv = wd[((oc * ci + ic) * kh + i) * kw + j];
                            geom.for_each_row(i, j, |orow, xrow, o0, x0, len| {
                                axpy(wv, &xplane[xrow * w + x0..xrow * w + x0 + len], &mut oplane[orow * wo + o0..orow * wo + o0 + len]);
                            });
                        }
                    }
                }
            }
        }
        let (x, wt) = (self.clone(), weight.clone());
        Ok(Tensor::from_op(
            "conv2d",
            vec![b, co, ho, wo],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g, needs| {
                let (xd, wd) = (x.data(), wt.data());
                let mut gx = needs[0].then(|| vec![0.0; xd.len()]);
                let mut gw = needs[1].then(|| vec![0.0; wd.len()]);
                let mut gb = needs[2].then(|| vec![0.0; co]);
                let Conv2dGeom { b, ci, h, w, co, kh, kw, ho, wo, .. } = geom;
                for bi in 0..b {
                    for oc in 0..co {
                        let gplane = &g[(bi * co + oc) * ho * wo..(bi * co + oc + 1) * ho * wo];
                        if let Some(gb) = gb.as_mut() {
                            gb[oc] += gplane.iter().sum::<f64>();
                        }
                        for ic in 0..ci {
                            let xoff = (bi * ci + ic) * h * w;
                            for i in 0..kh {
                                for j in 0..kw {
                                    let widx = ((oc * ci + ic) * kh + i) * kw + j;
                                    if let Some(gw) = gw.as_mut() {
                                        let mut acc = 0.0;
                                        geom.for_each_row(i, j, |orow, xrow, o0, x0, len| {
                                            acc += dot(
                                                &gplane[orow * wo + o0..orow * wo + o0 + len],
                                                &xd[xoff + xrow * w + x0..xoff + xrow * w + x0 + len],
                                            );
                                        });
                                        gw[widx] += acc;
                                    }
                                    if let Some(gx) = gx.as_mut() {
                                        let wv = wd[widx];
                                        geom.for_each_row(i, j, |orow, xrow, o0, x0, len| {
                                            axpy(
                                                wv,
                                                &gplane[orow * wo + o0..orow * wo + o0 + len],
                                                &mut gx[xoff + xrow * w + x0..xoff + xrow * w + x0 + len],
                                            );
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
                vec![gx, gw, gb]
            },
        ))
    }

    /// Non-overlapping 2-D max-pool over the last two axes of `(B, C, H, W)`.
    pub fn max_pool2d(&self, spec: PoolSpec) -> Result<Tensor> {
        let &[b, c, h, w] = self.shape() else {
            return Err(Error::dim("max_pool2d", self.shape(), &[spec.kernel.0, spec.kernel.1]));
        };
        let (kh, kw) = spec.kernel;
        if kh == 0 || kw == 0 || h < kh || w < kw {
            return Err(Error::dim("max_pool2d", self.shape(), &[kh, kw]));
        }
        let (ho, wo) = (h / kh, w / kw);
        let xd = self.data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        let mut arg = Vec::with_capacity(b * c * ho * wo);
        for plane in 0..b * c {
            let off = plane * h * w;
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for i in 0..kh {
                        let row = off + (oi * kh + i) * w + oj * kw;
                        for (j, &v) in xd[row..row + kw].iter().enumerate() {
                            if v > best {
                                best = v;
                                at = row + j;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(at);
                }
            }
        }
        let n = self.numel();
        Ok(Tensor::from_op("max_pool2d", vec![b, c, ho, wo], out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; n];
            for (gv, &at) in g.iter().zip(&arg) {
                gx[at] += gv;
            }
            vec![Some(gx)]
        }))
    }

    /// Depthwise causal convolution along L for `(B, L, E)` input, weight
    /// `(E, k)`, bias `(E)`. Tap `k-1` aligns with the current position; the
    /// sequence is left-padded with zeros.
    pub fn depthwise_causal_conv1d(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let err = || Error::dim("depthwise_causal_conv1d", self.shape(), weight.shape());
        let &[b, l, e] = self.shape() else { return Err(err()) };
        let &[e2, k] = weight.shape() else { return Err(err()) };
        if e != e2 || bias.shape() != [e] {
            return Err(err());
        }
        let (xd, wd, bd) = (self.data(), weight.data(), bias.data());
        let mut out = vec![0.0; b * l * e];
        for bi in 0..b {
            for li in 0..l {
                let orow = &mut out[(bi * l + li) * e..(bi * l + li + 1) * e];
                orow.copy_from_slice(bd);
                for j in 0..k {
                    let Some(src) = (li + j).checked_sub(k - 1) else { continue };
                    let xrow = &xd[(bi * l + src) * e..(bi * l + src + 1) * e];
                    for ch in 0..e {
                        orow[ch] += wd[ch * k + j] * xrow[ch];
                    }
                }
            }
        }
        let (x, wt) = (self.clone(), weight.clone());
        Ok(Tensor::from_op(
            "depthwise_causal_conv1d",
            vec![b, l, e],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |g, needs| {
                let (xd, wd) = (x.data(), wt.data());
                let mut gx = needs[0].then(|| vec![0.0; xd.len()]);
                let mut gw = needs[1].then(|| vec![0.0; wd.len()]);
                let mut gb = needs[2].then(|| vec![0.0; e]);
                for bi in 0..b {
                    for li in 0..l {
                        let grow = &g[(bi * l + li) * e..(bi * l + li + 1) * e];
                        if let Some(gb) = gb.as_mut() {
                            axpy(1.0, grow, gb);
                        }
                        for j in 0..k {
                            let Some(src) = (li + j).checked_sub(k - 1) else { continue };
                            let base = (bi * l + src) * e;
                            for ch in 0..e {
                                if let Some(gw) = gw.as_mut() {
                                    gw[ch * k + j] += grow[ch] * xd[base + ch];
                                }
                                if let Some(gx) = gx.as_mut() {
                                    gx[base + ch] += grow[ch] * wd[ch * k + j];
                                }
                            }
                        }
                    }
                }
                vec![gx, gw, gb]
            },
        ))
    }
}

fn bank_dims(wave: &Tensor, kernels: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let err = || Error::dim("conv1d_bank", wave.shape(), kernels.shape());
    let &[b, s] = wave.shape() else { return Err(err()) };
    let &[f, k] = kernels.shape() else { return Err(err()) };
    if s < k {
        return Err(Error::Input(format!(
            "waveform of {s} samples is shorter than the {k}-tap filter"
        )));
    }
    Ok((b, s, f, k))
}

#[derive(Clone, Copy)]
struct Conv2dGeom {
    b: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Conv2dGeom {
    /// For tap `(i, j)`, yields each output row paired with its input row and
    /// the overlapping column span `(out_row, in_row, out_col0, in_col0, len)`.
    #[inline]
    fn for_each_row(&self, i: usize, j: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        // output column o reads input column o + j - pw
        let o0 = self.pw.saturating_sub(j);
        let o1 = (self.w + self.pw).saturating_sub(j).min(self.wo);
        if o1 <= o0 {
            return;
        }
        let x0 = o0 + j - self.pw;
        for orow in 0..self.ho {
            let xr = orow + i;
            if xr < self.ph || xr - self.ph >= self.h {
                continue;
            }
            f(orow, xr - self.ph, o0, x0, o1 - o0);
        }
    }
}
