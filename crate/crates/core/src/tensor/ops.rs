use super::shape::{broadcast_shape, numel, strides, walk2};
use super::Tensor;
use crate::error::{Error, Result};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `sin(x) / x`, continuous at zero.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn sinc_deriv(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        -x / 3.0
    } else {
        (x * x.cos() - x.sin()) / (x * x)
    }
}

/// Below this magnitude of `delta * a` the zero-order-hold input coefficient
/// switches to its second-order series.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-8;

/// Zero-order-hold input coefficient `(exp(delta*a) - 1) / a` in expm1 form,
/// with the series `delta * (1 + delta*a/2)` near the singular point.
pub fn zoh_coefficient(delta: f64, a: f64) -> f64 {
    let u = delta * a;
    if u.abs() < ZOH_SERIES_THRESHOLD {
        delta * (1.0 + 0.5 * u)
    } else {
        u.exp_m1() / a
    }
}

fn zoh_coefficient_partials(delta: f64, a: f64) -> (f64, f64) {
    let u = delta * a;
    let eu = u.exp();
    if u.abs() < ZOH_SERIES_THRESHOLD {
        (eu, delta * delta * (0.5 + u / 3.0))
    } else {
        (eu, (u * eu - u.exp_m1()) / (a * a))
    }
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tensor {
    fn check_axis(&self, axis: usize, op: &'static str) -> Result<()> {
        if axis >= self.ndim() {
            return Err(Error::dim(op, self.shape(), &[axis]));
        }
        Ok(())
    }

    fn unary(&self, name: &'static str, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = out.clone();
        let keep = if self.requires_grad() { y } else { Vec::new() };
        Tensor::from_op(name, self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            let gx = g
                .iter()
                .zip(x.data())
                .zip(&keep)
                .map(|((g, &xv), &yv)| g * df(xv, yv))
                .collect();
            vec![Some(gx)]
        })
    }

    fn binary(
        &self,
        other: &Tensor,
        name: &'static str,
        f: fn(f64, f64) -> f64,
        partials: fn(f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let out_shape = broadcast_shape(self.shape(), other.shape())
            .ok_or_else(|| Error::dim(name, self.shape(), other.shape()))?;
        let same = self.shape() == other.shape();
        let (ad, bd) = (self.data(), other.data());
        let out: Vec<f64> = if same {
            ad.iter().zip(bd).map(|(&a, &b)| f(a, b)).collect()
        } else {
            let mut out = vec![0.0; numel(&out_shape)];
            walk2(&out_shape, self.shape(), other.shape(), |o, ia, ib| {
                out[o] = f(ad[ia], bd[ib]);
            });
            out
        };
        let (a, b) = (self.clone(), other.clone());
        let shape = out_shape.clone();
        Ok(Tensor::from_op(name, out_shape, out, vec![self.clone(), other.clone()], move |g, needs| {
            let (ad, bd) = (a.data(), b.data());
            let mut ga = needs[0].then(|| vec![0.0; a.numel()]);
            let mut gb = needs[1].then(|| vec![0.0; b.numel()]);
            if same {
                for i in 0..g.len() {
                    let (pa, pb) = partials(ad[i], bd[i]);
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = g[i] * pa;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[i] = g[i] * pb;
                    }
                }
            } else {
                walk2(&shape, a.shape(), b.shape(), |o, ia, ib| {
                    let (pa, pb) = partials(ad[ia], bd[ib]);
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += g[o] * pa;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += g[o] * pb;
                    }
                });
            }
            vec![ga, gb]
        }))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |a, b| (1.0 / b, -a / (b * b)))
    }

    /// Elementwise zero-order-hold input coefficient, see [`zoh_coefficient`].
    /// `self` holds step sizes, `a` the (negative) state entries.
    pub fn zoh_coefficient(&self, a: &Tensor) -> Result<Tensor> {
        self.binary(a, "zoh_coefficient", zoh_coefficient, zoh_coefficient_partials)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(&self) -> Tensor {
        self.unary("silu", silu, |x, _| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn softplus(&self) -> Tensor {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    pub fn neg(&self) -> Tensor {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn recip(&self) -> Tensor {
        self.unary("recip", |x| 1.0 / x, |_, y| -y * y)
    }

    pub fn abs(&self) -> Tensor {
        self.unary("abs", f64::abs, |x, _| if x >= 0.0 { 1.0 } else { -1.0 })
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn sinc(&self) -> Tensor {
        self.unary("sinc", sinc, |x, _| sinc_deriv(x))
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out = self.data().iter().map(|x| x + c).collect();
        Tensor::from_op("add_scalar", self.shape().to_vec(), out, vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let out = self.data().iter().map(|x| x * c).collect();
        Tensor::from_op("mul_scalar", self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|g| g * c).collect())]
        })
    }

    /// `min(x, hi)`; the gradient is cut where the bound is active.
    pub fn clamp_max(&self, hi: f64) -> Tensor {
        let out = self.data().iter().map(|&x| x.min(hi)).collect();
        let x = self.clone();
        Tensor::from_op("clamp_max", self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            let gx = g
                .iter()
                .zip(x.data())
                .map(|(g, &x)| if x < hi { *g } else { 0.0 })
                .collect();
            vec![Some(gx)]
        })
    }

    /// Sum of all entries, as a scalar-shaped tensor.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![], vec![s], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        self.sum().mul_scalar(1.0 / self.numel() as f64)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.check_axis(axis, "sum_axis")?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let d = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &d[(o * len + k) * inner..(o * len + k + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let n = self.numel();
        Ok(Tensor::from_op("sum_axis", shape, out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; n];
            for o in 0..outer {
                for k in 0..len {
                    gx[(o * len + k) * inner..(o * len + k + 1) * inner]
                        .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.check_axis(axis, "mean_axis")?;
        let len = self.shape()[axis] as f64;
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / len))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::dim("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            |g, _| vec![Some(g.to_vec())],
        ))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim("permute", self.shape(), perm));
        }
        let in_strides = strides(self.shape());
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        // gather index for each output position
        let mut index = Vec::with_capacity(self.numel());
        let mut counter = vec![0usize; nd];
        let mut src = 0usize;
        for _ in 0..self.numel() {
            index.push(src);
            let mut d = nd;
            while d > 0 {
                d -= 1;
                counter[d] += 1;
                src += src_strides[d];
                if counter[d] < out_shape[d] {
                    break;
                }
                src -= src_strides[d] * out_shape[d];
                counter[d] = 0;
            }
        }
        let d = self.data();
        let out = index.iter().map(|&i| d[i]).collect();
        let n = self.numel();
        Ok(Tensor::from_op("permute", out_shape, out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; n];
            for (o, &i) in index.iter().enumerate() {
                gx[i] = g[o];
            }
            vec![Some(gx)]
        }))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.check_axis(axis, "narrow")?;
        if len == 0 || start + len > self.shape()[axis] {
            return Err(Error::dim("narrow", self.shape(), &[axis, start, len]));
        }
        let (outer, full, inner) = split_axis(self.shape(), axis);
        let d = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[(o * full + start) * inner..(o * full + start + len) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let n = self.numel();
        Ok(Tensor::from_op("narrow", shape, out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; n];
            for o in 0..outer {
                gx[(o * full + start) * inner..(o * full + start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        first.check_axis(axis, "concat")?;
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op("concat", shape, out, parts.to_vec(), move |g, needs| {
            let mut grads: Vec<Option<Vec<f64>>> = lens
                .iter()
                .zip(needs)
                .map(|(&l, &n)| n.then(|| Vec::with_capacity(outer * l * inner)))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gp, &l) in grads.iter_mut().zip(&lens) {
                    if let Some(gp) = gp {
                        gp.extend_from_slice(&g[off..off + l * inner]);
                    }
                    off += l * inner;
                }
            }
            grads
        }))
    }

    /// Reverses the order of entries along `axis`.
    pub fn flip(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis, "flip")?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let flip = move |src: &[f64]| {
            let mut out = Vec::with_capacity(src.len());
            for o in 0..outer {
                for k in (0..len).rev() {
                    out.extend_from_slice(&src[(o * len + k) * inner..(o * len + k + 1) * inner]);
                }
            }
            out
        };
        let out = flip(self.data());
        Ok(Tensor::from_op("flip", self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            vec![Some(flip(g))]
        }))
    }

    /// Softmax along the last axis.
    pub fn softmax_last(&self) -> Result<Tensor> {
        let n = *self
            .shape()
            .last()
            .ok_or_else(|| Error::Contract("softmax of a scalar".into()))?;
        let mut out = self.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let y = out.clone();
        Ok(Tensor::from_op("softmax", self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), gxr) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for i in 0..n {
                    gxr[i] = yr[i] * (gr[i] - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax_last(&self) -> Result<Tensor> {
        let n = *self
            .shape()
            .last()
            .ok_or_else(|| Error::Contract("log_softmax of a scalar".into()))?;
        let mut out = self.data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let y = out.clone();
        Ok(Tensor::from_op("log_softmax", self.shape().to_vec(), out, vec![self.clone()], move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), gxr) in g.chunks(n).zip(y.chunks(n)).zip(gx.chunks_mut(n)) {
                let s: f64 = gr.iter().sum();
                for i in 0..n {
                    gxr[i] = gr[i] - yr[i].exp() * s;
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Matrix product over the last two axes. Leading (batch) axes follow the
    /// broadcasting rules; a 2-D right operand is shared by every batch.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let err = || Error::dim("matmul", self.shape(), other.shape());
        if self.ndim() < 2 || other.ndim() < 2 {
            return Err(err());
        }
        let (ar, br) = (self.ndim() - 2, other.ndim() - 2);
        let (m, k) = (self.shape()[ar], self.shape()[ar + 1]);
        let (k2, n) = (other.shape()[br], other.shape()[br + 1]);
        if k != k2 {
            return Err(err());
        }
        let a_batch = &self.shape()[..ar];
        let b_batch = &other.shape()[..br];
        let batch = broadcast_shape(a_batch, b_batch).ok_or_else(err)?;
        let mut pairs = Vec::with_capacity(numel(&batch));
        walk2(&batch, a_batch, b_batch, |_, ia, ib| pairs.push((ia, ib)));

        let (ad, bd) = (self.data(), other.data());
        let mut out = vec![0.0; pairs.len() * m * n];
        for (bi, &(ia, ib)) in pairs.iter().enumerate() {
            gemm_acc(
                &ad[ia * m * k..(ia + 1) * m * k],
                &bd[ib * k * n..(ib + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = batch;
        shape.extend([m, n]);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op("matmul", shape, out, vec![self.clone(), other.clone()], move |g, needs| {
            let (ad, bd) = (a.data(), b.data());
            let mut ga = needs[0].then(|| vec![0.0; a.numel()]);
            let mut gb = needs[1].then(|| vec![0.0; b.numel()]);
            for (bi, &(ia, ib)) in pairs.iter().enumerate() {
                let gblk = &g[bi * m * n..(bi + 1) * m * n];
                let ablk = &ad[ia * m * k..(ia + 1) * m * k];
                let bblk = &bd[ib * k * n..(ib + 1) * k * n];
                if let Some(ga) = ga.as_mut() {
                    // dA = dY · Bᵀ
                    let gab = &mut ga[ia * m * k..(ia + 1) * m * k];
                    for i in 0..m {
                        let grow = &gblk[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &bblk[kk * n..(kk + 1) * n];
                            gab[i * k + kk] += dot(grow, brow);
                        }
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    // dB = Aᵀ · dY
                    let gbb = &mut gb[ib * k * n..(ib + 1) * k * n];
                    for i in 0..m {
                        let grow = &gblk[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let av = ablk[i * k + kk];
                            if av != 0.0 {
                                axpy(av, grow, &mut gbb[kk * n..(kk + 1) * n]);
                            }
                        }
                    }
                }
            }
            vec![ga, gb]
        }))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize the reduction
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * c + j] * b[4 * c + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (y, x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av != 0.0 {
                axpy(av, &b[kk * n..(kk + 1) * n], crow);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn matmul_hand_products() {
        let id = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
        let v = t(&[3.0, 4.0], &[2, 1]);
        assert_eq!(id.matmul(&v).unwrap().data(), &[3.0, 4.0]);
        let r = t(&[1.0, 2.0], &[1, 2]);
        assert_eq!(r.matmul(&v).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        match a.matmul(&b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn batched_matmul_broadcasts_leading_axes() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 1, 2]);
        let b = t(&[1.0, 0.0, 0.0, 1.0], &[1, 2, 2]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn closed_form_activations() {
        assert_eq!(silu(0.0), 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        let e = t(&[0.0, 1.0], &[2]).exp();
        assert_eq!(e.data(), &[1.0, std::f64::consts::E]);
        assert!((softplus(10.0) - 10.000045398899218).abs() < 1e-12);
        assert_eq!(softplus(800.0), 800.0);
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn binary_broadcast_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(a.add(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn broadcast_mul_gradient_reduces() {
        let a = Tensor::param(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::param(vec![10.0, 20.0, 30.0], &[3]).unwrap();
        a.mul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![5.0, 7.0, 9.0]);
        assert_eq!(a.grad().unwrap(), vec![10.0, 20.0, 30.0, 10.0, 20.0, 30.0]);
    }

    #[test]
    fn shape_ops_roundtrip() {
        let x = t(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &[1, 2, 3]);
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[3, 1, 2]);
        assert_eq!(p.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.data(), x.data());
        let f = x.flip(2).unwrap();
        assert_eq!(f.data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        let n = x.narrow(2, 1, 2).unwrap();
        assert_eq!(n.data(), &[1.0, 2.0, 4.0, 5.0]);
        let c = Tensor::concat(&[n.clone(), x.narrow(2, 0, 1).unwrap()], 2).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 0.0, 4.0, 5.0, 3.0]);
        assert!(x.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn zoh_coefficient_limits() {
        let ln2 = std::f64::consts::LN_2;
        assert!((zoh_coefficient(ln2, -1.0) - 0.5).abs() < 1e-15);
        let tiny = 1e-12;
        let c = zoh_coefficient(tiny, -1.0);
        assert!(((c - tiny) / tiny).abs() < 1e-11);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[1.0, 2.0, 3.0, -1.0, 0.0, 1000.0], &[2, 3]);
        let s = x.softmax_last().unwrap();
        for row in s.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ls = x.log_softmax_last().unwrap();
        for (a, b) in ls.data().iter().zip(s.data()) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }
}
