//! Shape algebra: row-major strides and trailing-aligned broadcasting.

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Trailing-aligned broadcast of two shapes; `None` when an aligned pair of
/// extents differs and neither is 1.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `inp` viewed in the index space of `out`, zero on broadcast axes.
pub(crate) fn broadcast_strides(inp: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(inp);
    let off = out.len() - inp.len();
    (0..out.len())
        .map(|i| {
            if i < off || inp[i - off] == 1 {
                0
            } else {
                s[i - off]
            }
        })
        .collect()
}

/// Visits every output position of a two-operand broadcast in row-major
/// order, passing `(out_index, a_index, b_index)`.
pub(crate) fn walk2(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel(out);
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let nd = out.len();
    let inner = out[nd - 1];
    let (ia_step, ib_step) = (sa[nd - 1], sb[nd - 1]);
    let mut counter = vec![0usize; nd - 1];
    let (mut base_a, mut base_b) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        let (mut ia, mut ib) = (base_a, base_b);
        for _ in 0..inner {
            f(o, ia, ib);
            o += 1;
            ia += ia_step;
            ib += ib_step;
        }
        // odometer over the outer axes
        let mut d = nd - 1;
        while d > 0 {
            d -= 1;
            counter[d] += 1;
            base_a += sa[d];
            base_b += sb[d];
            if counter[d] < out[d] {
                break;
            }
            base_a -= sa[d] * out[d];
            base_b -= sb[d] * out[d];
            counter[d] = 0;
        }
    }
}
