//! Differentiable operators on [`Var`].
//!
//! Matrix operators treat a tensor as `rows × cols` over its last axis.

use std::rc::Rc;

use rand::Rng;

use crate::autodiff::tape::{GradSink, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn mismatch(op: &'static str, left: Vec<usize>, right: Vec<usize>) -> Error {
    Error::ShapeMismatch { op, left, right }
}

fn matrix_dims(op: &'static str, shape: &[usize], other: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(mismatch(op, shape.to_vec(), other.to_vec())),
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let n: usize = shape.iter().product();
    (n.checked_div(cols).unwrap_or(0), cols)
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn gemm_nt<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · b[m,n]`
pub(crate) fn gemm_tn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    fn derive(
        self,
        shape: Vec<usize>,
        value: Vec<S>,
        pullback: impl Fn(&[S], &mut GradSink<S>) + 'static,
    ) -> Var<'t, S> {
        self.tape.push(shape, value, Some(Box::new(pullback)))
    }

    fn same_shape(self, other: Var<'t, S>, op: &'static str) -> Result<Vec<usize>> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(mismatch(op, a, b));
        }
        Ok(a)
    }

    fn map_unary(self, f: impl Fn(S) -> S, df: impl Fn(S, S) -> S + 'static) -> Var<'t, S> {
        let x = self.value();
        let y: Rc<Vec<S>> = Rc::new(x.iter().map(|&v| f(v)).collect());
        let yc = Rc::clone(&y);
        let id = self.id;
        self.tape.push_rc(
            self.shape(),
            y,
            Some(Box::new(move |g, sink| {
                let slot = sink.slot(id);
                for i in 0..g.len() {
                    slot[i] += g[i] * df(x[i], yc[i]);
                }
            })),
        )
    }

    // ---- elementwise ---------------------------------------------------

    pub fn add(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = self.same_shape(other, "add")?;
        let (a, b) = (self.value(), other.value());
        let v = a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.derive(shape, v, move |g, sink| {
            sink.accumulate(ia, g);
            sink.accumulate(ib, g);
        }))
    }

    pub fn sub(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = self.same_shape(other, "sub")?;
        let (a, b) = (self.value(), other.value());
        let v = a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.derive(shape, v, move |g, sink| {
            sink.accumulate(ia, g);
            for (d, &s) in sink.slot(ib).iter_mut().zip(g) {
                *d -= s;
            }
        }))
    }

    pub fn mul(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let shape = self.same_shape(other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let v = a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect();
        let (ia, ib) = (self.id, other.id);
        Ok(self.derive(shape, v, move |g, sink| {
            for (i, d) in sink.slot(ia).iter_mut().enumerate() {
                *d += g[i] * b[i];
            }
            for (i, d) in sink.slot(ib).iter_mut().enumerate() {
                *d += g[i] * a[i];
            }
        }))
    }

    pub fn scale(self, c: S) -> Var<'t, S> {
        self.map_unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: S) -> Var<'t, S> {
        self.map_unary(move |x| x + c, |_, _| S::one())
    }

    pub fn neg(self) -> Var<'t, S> {
        self.scale(-S::one())
    }

    pub fn tanh(self) -> Var<'t, S> {
        self.map_unary(S::tanh, |_, y| S::one() - y * y)
    }

    pub fn exp(self) -> Var<'t, S> {
        self.map_unary(S::exp, |_, y| y)
    }

    pub fn log(self) -> Var<'t, S> {
        self.map_unary(S::ln, |x, _| x.recip())
    }

    pub fn relu(self) -> Var<'t, S> {
        self.map_unary(
            |x| x.max(S::zero()),
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t, S> {
        let c = S::of((2.0 / std::f64::consts::PI).sqrt());
        let k = S::of(0.044_715);
        let half = S::of(0.5);
        let three = S::of(3.0);
        self.map_unary(
            move |x| half * x * (S::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _| {
                let u = c * (x + k * x * x * x);
                let t = u.tanh();
                half * (S::one() + t)
                    + half * x * (S::one() - t * t) * c * (S::one() + three * k * x * x)
            },
        )
    }

    // ---- shape ---------------------------------------------------------

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, S>> {
        let old = self.shape();
        if old.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(mismatch("reshape", old, shape.to_vec()));
        }
        let id = self.id;
        Ok(self.tape.push_rc(
            shape.to_vec(),
            self.value(),
            Some(Box::new(move |g, sink| sink.accumulate(id, g))),
        ))
    }

    pub fn transpose(self) -> Result<Var<'t, S>> {
        let (m, n) = matrix_dims("transpose", &self.shape(), &[])?;
        let x = self.value();
        let mut v = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                v[j * m + i] = x[i * n + j];
            }
        }
        let id = self.id;
        Ok(self.derive(vec![n, m], v, move |g, sink| {
            let slot = sink.slot(id);
            for i in 0..m {
                for j in 0..n {
                    slot[i * n + j] += g[j * m + i];
                }
            }
        }))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let (m, n) = rows_cols(&shape);
        if start > end || end > n {
            return Err(mismatch("slice_cols", shape, vec![start, end]));
        }
        let w = end - start;
        let x = self.value();
        let mut v = Vec::with_capacity(m * w);
        for i in 0..m {
            v.extend_from_slice(&x[i * n + start..i * n + end]);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank ≥ 1") = w;
        let id = self.id;
        Ok(self.derive(out_shape, v, move |g, sink| {
            let slot = sink.slot(id);
            for i in 0..m {
                for j in 0..w {
                    slot[i * n + start + j] += g[i * w + j];
                }
            }
        }))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let (m, n) = matrix_dims("slice_rows", &shape, &[start, end])?;
        if start > end || end > m {
            return Err(mismatch("slice_rows", shape, vec![start, end]));
        }
        let v = self.value()[start * n..end * n].to_vec();
        let id = self.id;
        Ok(self.derive(vec![end - start, n], v, move |g, sink| {
            for (d, &s) in sink.slot(id)[start * n..end * n].iter_mut().zip(g) {
                *d += s;
            }
        }))
    }

    /// Rows of `self` selected by `idx` (repeats allowed). Doubles as
    /// embedding lookup when `self` is a table.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let (m, n) = matrix_dims("gather_rows", &shape, &[idx.len()])?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::OutOfRange { index: bad, len: m });
        }
        let x = self.value();
        let mut v = Vec::with_capacity(idx.len() * n);
        for &r in idx {
            v.extend_from_slice(&x[r * n..(r + 1) * n]);
        }
        let idx = idx.to_vec();
        let id = self.id;
        Ok(self.derive(vec![idx.len(), n], v, move |g, sink| {
            let slot = sink.slot(id);
            for (k, &r) in idx.iter().enumerate() {
                for j in 0..n {
                    slot[r * n + j] += g[k * n + j];
                }
            }
        }))
    }

    /// Embedding lookup: rows of the table `self` for each id.
    pub fn embedding_lookup(self, ids: &[usize]) -> Result<Var<'t, S>> {
        self.gather_rows(ids)
    }

    /// Elements of the flattened `self` at `idx`, arranged into `shape`.
    pub fn gather_flat(self, idx: &[usize], shape: &[usize]) -> Result<Var<'t, S>> {
        let len = self.value().len();
        if shape.iter().product::<usize>() != idx.len() {
            return Err(mismatch("gather_flat", vec![idx.len()], shape.to_vec()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
            return Err(Error::OutOfRange { index: bad, len });
        }
        let x = self.value();
        let v = idx.iter().map(|&i| x[i]).collect();
        let idx = idx.to_vec();
        let id = self.id;
        Ok(self.derive(shape.to_vec(), v, move |g, sink| {
            let slot = sink.slot(id);
            for (k, &i) in idx.iter().enumerate() {
                slot[i] += g[k];
            }
        }))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of nothing".into()))?;
        let (m, _) = matrix_dims("concat_cols", &first.shape(), &[])?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = matrix_dims("concat_cols", &p.shape(), &first.shape())?;
            if pm != m {
                return Err(mismatch("concat_cols", first.shape(), p.shape()));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut v = Vec::with_capacity(m * total);
        for i in 0..m {
            for (val, &w) in vals.iter().zip(&widths) {
                v.extend_from_slice(&val[i * w..(i + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.derive(vec![m, total], v, move |g, sink| {
            let mut off = 0;
            for (&id, &w) in ids.iter().zip(&widths) {
                let slot = sink.slot(id);
                for i in 0..m {
                    for j in 0..w {
                        slot[i * w + j] += g[i * total + off + j];
                    }
                }
                off += w;
            }
        }))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of nothing".into()))?;
        let (_, n) = matrix_dims("concat_rows", &first.shape(), &[])?;
        let mut rows = Vec::with_capacity(parts.len());
        let mut v = Vec::new();
        for p in parts {
            let (pm, pn) = matrix_dims("concat_rows", &p.shape(), &first.shape())?;
            if pn != n {
                return Err(mismatch("concat_rows", first.shape(), p.shape()));
            }
            rows.push(pm);
            v.extend_from_slice(&p.value());
        }
        let total: usize = rows.iter().sum();
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(first.derive(vec![total, n], v, move |g, sink| {
            let mut off = 0;
            for (&id, &r) in ids.iter().zip(&rows) {
                sink.accumulate(id, &g[off * n..(off + r) * n]);
                off += r;
            }
        }))
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (sa, sb) = (self.shape(), other.shape());
        let (m, k) = matrix_dims("matmul", &sa, &sb)?;
        let (k2, n) = matrix_dims("matmul", &sb, &sa)?;
        if k != k2 {
            return Err(mismatch("matmul", sa, sb));
        }
        let (a, b) = (self.value(), other.value());
        let mut v = vec![S::zero(); m * n];
        gemm_nn(&a, &b, &mut v, m, k, n);
        let (ia, ib) = (self.id, other.id);
        Ok(self.derive(vec![m, n], v, move |g, sink| {
            gemm_nt(g, &b, sink.slot(ia), m, n, k);
            gemm_tn(&a, g, sink.slot(ib), m, k, n);
        }))
    }

    /// Adds a length-`n` vector to every row of a `[.., n]` tensor.
    pub fn add_row(self, bias: Var<'t, S>) -> Result<Var<'t, S>> {
        let (shape, bshape) = (self.shape(), bias.shape());
        let (m, n) = rows_cols(&shape);
        if bshape.iter().product::<usize>() != n {
            return Err(mismatch("add_row", shape, bshape));
        }
        let (x, b) = (self.value(), bias.value());
        let v = x.iter().enumerate().map(|(i, &xv)| xv + b[i % n]).collect();
        let (ix, ib) = (self.id, bias.id);
        Ok(self.derive(shape, v, move |g, sink| {
            sink.accumulate(ix, g);
            let slot = sink.slot(ib);
            for i in 0..m {
                for j in 0..n {
                    slot[j] += g[i * n + j];
                }
            }
        }))
    }

    /// Broadcast sum over a grid: row `t·U + u` of the result is
    /// `self[t] + other[u]`.
    pub fn outer_add_rows(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        let (sa, sb) = (self.shape(), other.shape());
        let (t_len, h) = matrix_dims("outer_add_rows", &sa, &sb)?;
        let (u_len, h2) = matrix_dims("outer_add_rows", &sb, &sa)?;
        if h != h2 {
            return Err(mismatch("outer_add_rows", sa, sb));
        }
        let (a, b) = (self.value(), other.value());
        let mut v = Vec::with_capacity(t_len * u_len * h);
        for t in 0..t_len {
            for u in 0..u_len {
                v.extend((0..h).map(|j| a[t * h + j] + b[u * h + j]));
            }
        }
        let (ia, ib) = (self.id, other.id);
        Ok(self.derive(vec![t_len * u_len, h], v, move |g, sink| {
            {
                let sa = sink.slot(ia);
                for t in 0..t_len {
                    for u in 0..u_len {
                        let row = (t * u_len + u) * h;
                        for j in 0..h {
                            sa[t * h + j] += g[row + j];
                        }
                    }
                }
            }
            let sb = sink.slot(ib);
            for t in 0..t_len {
                for u in 0..u_len {
                    let row = (t * u_len + u) * h;
                    for j in 0..h {
                        sb[u * h + j] += g[row + j];
                    }
                }
            }
        }))
    }

    /// Unfolds `[T, C]` into `[ceil(T/stride), kernel·C]` patches with
    /// "same" zero padding (left pad `(kernel−1)/2`).
    pub fn unfold1d(self, kernel: usize, stride: usize) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let (t_in, c) = matrix_dims("unfold1d", &shape, &[kernel, stride])?;
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidTensor(
                "unfold1d needs kernel ≥ 1 and stride ≥ 1".into(),
            ));
        }
        let t_out = t_in.div_ceil(stride);
        let pad = (kernel - 1) / 2;
        let width = kernel * c;
        // source row of each (output, tap), or None for padding
        let taps: Vec<Option<usize>> = (0..t_out)
            .flat_map(|t| {
                (0..kernel).map(move |j| {
                    let src = (t * stride + j) as isize - pad as isize;
                    (src >= 0 && (src as usize) < t_in).then_some(src as usize)
                })
            })
            .collect();
        let x = self.value();
        let mut v = vec![S::zero(); t_out * width];
        for (k, tap) in taps.iter().enumerate() {
            if let Some(src) = tap {
                v[k * c..(k + 1) * c].copy_from_slice(&x[src * c..(src + 1) * c]);
            }
        }
        let id = self.id;
        Ok(self.derive(vec![t_out, width], v, move |g, sink| {
            let slot = sink.slot(id);
            for (k, tap) in taps.iter().enumerate() {
                if let Some(src) = tap {
                    for j in 0..c {
                        slot[src * c + j] += g[k * c + j];
                    }
                }
            }
        }))
    }

    /// Strided 1-D convolution over time. `weight` is `[kernel·C_in, C_out]`
    /// (tap-major), `bias` is `[C_out]`.
    pub fn conv1d(
        self,
        weight: Var<'t, S>,
        bias: Var<'t, S>,
        kernel: usize,
        stride: usize,
    ) -> Result<Var<'t, S>> {
        self.unfold1d(kernel, stride)?.matmul(weight)?.add_row(bias)
    }

    // ---- reductions & normalisation ------------------------------------

    pub fn sum(self) -> Var<'t, S> {
        let x = self.value();
        let s: S = x.iter().copied().sum();
        let n = x.len();
        let id = self.id;
        self.derive(vec![], vec![s], move |g, sink| {
            let g0 = g[0];
            sink.slot(id).iter_mut().take(n).for_each(|d| *d += g0);
        })
    }

    pub fn mean(self) -> Var<'t, S> {
        let n = self.value().len().max(1);
        self.sum().scale(S::one() / S::of_usize(n))
    }

    /// Sums over the last axis.
    pub fn sum_cols(self) -> Var<'t, S> {
        let shape = self.shape();
        let (m, n) = rows_cols(&shape);
        let x = self.value();
        let v = (0..m)
            .map(|i| x[i * n..(i + 1) * n].iter().copied().sum())
            .collect();
        let id = self.id;
        self.derive(
            shape[..shape.len().saturating_sub(1)].to_vec(),
            v,
            move |g, sink| {
                let slot = sink.slot(id);
                for i in 0..m {
                    for j in 0..n {
                        slot[i * n + j] += g[i];
                    }
                }
            },
        )
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(self) -> Var<'t, S> {
        let shape = self.shape();
        let (m, n) = rows_cols(&shape);
        let y = Rc::new(softmax_rows(&self.value(), m, n));
        let yc = Rc::clone(&y);
        let id = self.id;
        self.tape.push_rc(
            shape,
            y,
            Some(Box::new(move |g, sink| {
                let slot = sink.slot(id);
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let dot: S = g[r.clone()]
                        .iter()
                        .zip(&yc[r.clone()])
                        .map(|(&a, &b)| a * b)
                        .sum();
                    for j in r {
                        slot[j] += yc[j] * (g[j] - dot);
                    }
                }
            })),
        )
    }

    /// Log-softmax over the last axis via log-sum-exp.
    pub fn log_softmax(self) -> Var<'t, S> {
        let shape = self.shape();
        let (m, n) = rows_cols(&shape);
        let x = self.value();
        let mut v = Vec::with_capacity(x.len());
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let lse = log_sum_exp(row);
            v.extend(row.iter().map(|&z| z - lse));
        }
        let p: Vec<S> = v.iter().map(|&z| z.exp()).collect();
        let id = self.id;
        self.derive(shape, v, move |g, sink| {
            let slot = sink.slot(id);
            for i in 0..m {
                let r = i * n..(i + 1) * n;
                let gs: S = g[r.clone()].iter().copied().sum();
                for j in r {
                    slot[j] += g[j] - p[j] * gs;
                }
            }
        })
    }

    /// Layer normalisation over the last axis with learned gain and bias.
    pub fn layer_norm(self, gain: Var<'t, S>, bias: Var<'t, S>, eps: S) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let (m, n) = rows_cols(&shape);
        for p in [gain, bias] {
            if p.value().len() != n {
                return Err(mismatch("layer_norm", shape, p.shape()));
            }
        }
        let (x, gv, bv) = (self.value(), gain.value(), bias.value());
        let nn = S::of_usize(n);
        let mut xhat = vec![S::zero(); m * n];
        let mut inv_std = vec![S::zero(); m];
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mu = row.iter().copied().sum::<S>() / nn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / nn;
            let is = (var + eps).sqrt().recip();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mu) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * gv[j] + bv[j];
            }
        }
        let (ix, ig, ib) = (self.id, gain.id, bias.id);
        Ok(self.derive(shape, out, move |g, sink| {
            {
                let sg = sink.slot(ig);
                for i in 0..m {
                    for j in 0..n {
                        sg[j] += g[i * n + j] * xhat[i * n + j];
                    }
                }
            }
            {
                let sb = sink.slot(ib);
                for i in 0..m {
                    for j in 0..n {
                        sb[j] += g[i * n + j];
                    }
                }
            }
            let sx = sink.slot(ix);
            for i in 0..m {
                let r = i * n..(i + 1) * n;
                let gh: Vec<S> = r.clone().map(|k| g[k] * gv[k - i * n]).collect();
                let mean_gh = gh.iter().copied().sum::<S>() / nn;
                let mean_ghx = gh
                    .iter()
                    .zip(&xhat[r.clone()])
                    .map(|(&a, &b)| a * b)
                    .sum::<S>()
                    / nn;
                for (j, k) in r.enumerate() {
                    sx[k] += inv_std[i] * (gh[j] - mean_gh - xhat[k] * mean_ghx);
                }
            }
        }))
    }

    /// Scales every row to unit L2 norm. Fails on a zero row.
    pub fn l2_normalize_rows(self) -> Result<Var<'t, S>> {
        let shape = self.shape();
        let (m, n) = rows_cols(&shape);
        let x = self.value();
        let mut norms = Vec::with_capacity(m);
        for i in 0..m {
            let nr = x[i * n..(i + 1) * n]
                .iter()
                .map(|&v| v * v)
                .sum::<S>()
                .sqrt();
            if nr == S::zero() || !nr.is_finite() {
                return Err(Error::ZeroNorm);
            }
            norms.push(nr);
        }
        let y: Vec<S> = x
            .iter()
            .enumerate()
            .map(|(k, &v)| v / norms[k / n])
            .collect();
        let yc = y.clone();
        let id = self.id;
        Ok(self.derive(shape, y, move |g, sink| {
            let slot = sink.slot(id);
            for i in 0..m {
                let r = i * n..(i + 1) * n;
                let dot: S = g[r.clone()]
                    .iter()
                    .zip(&yc[r.clone()])
                    .map(|(&a, &b)| a * b)
                    .sum();
                for k in r {
                    slot[k] += (g[k] - yc[k] * dot) / norms[i];
                }
            }
        }))
    }

    /// Row-wise cosine similarity of two equally shaped matrices.
    pub fn cosine_similarity(self, other: Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_shape(other, "cosine_similarity")?;
        Ok(self
            .l2_normalize_rows()?
            .mul(other.l2_normalize_rows()?)?
            .sum_cols())
    }

    // ---- stochastic / structural ---------------------------------------

    /// Inverted dropout. `p = 0` returns `self` unchanged.
    pub fn dropout(self, p: f64, rng: &mut impl Rng) -> Var<'t, S> {
        if p <= 0.0 {
            return self;
        }
        let keep = S::of(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.value().len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    S::zero()
                } else {
                    keep
                }
            })
            .collect();
        let x = self.value();
        let v = x.iter().zip(&mask).map(|(&a, &b)| a * b).collect();
        let id = self.id;
        self.derive(self.shape(), v, move |g, sink| {
            for (k, d) in sink.slot(id).iter_mut().enumerate() {
                *d += g[k] * mask[k];
            }
        })
    }

    /// Identity in the forward pass; contributes nothing in the backward pass.
    pub fn stop_gradient(self) -> Var<'t, S> {
        self.tape.push_rc(self.shape(), self.value(), None)
    }
}

pub(crate) fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
    if mx == S::neg_infinity() {
        return mx;
    }
    mx + row.iter().map(|&z| (z - mx).exp()).sum::<S>().ln()
}

pub(crate) fn softmax_rows<S: Scalar>(x: &[S], m: usize, n: usize) -> Vec<S> {
    let mut y = Vec::with_capacity(x.len());
    for i in 0..m {
        let row = &x[i * n..(i + 1) * n];
        let mx = row.iter().copied().fold(S::neg_infinity(), S::max);
        let start = y.len();
        y.extend(row.iter().map(|&z| (z - mx).exp()));
        let s: S = y[start..].iter().copied().sum();
        y[start..].iter_mut().for_each(|v| *v /= s);
    }
    y
}
