use super::{gelu, gelu_grad, matmul_at_into, matmul_bt_into, transpose_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `x[m,n] + b[n]` broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    MaskedMse {
        x: Var,
        target: Vec<f64>,
        positions: Vec<usize>,
    },
    CrossEntropy {
        scores: Var,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<usize>,
}

/// Records one loss evaluation. Nodes are appended in evaluation order, which
/// is a topological order of the graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// A tape that panics as soon as any op produces a non-finite value.
    pub fn with_finite_check() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        if self.check_finite {
            assert!(
                value.is_finite(),
                "non-finite value produced by {op:?} at node {}",
                self.nodes.len()
            );
        }
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a trainable tensor under parameter id `id`.
    pub fn param(&mut self, value: &Tensor, id: usize) -> Var {
        let v = self.push(value.clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Binds every tensor in order, parameter ids being their positions.
    pub fn params(&mut self, values: &[Tensor]) -> Vec<Var> {
        values.iter().enumerate().map(|(i, t)| self.param(t, i)).collect()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::shape(op, other, &[0, 0])),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::Matmul(a, b)))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(a, b, op)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `[m,n]` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(x, "add_row")?;
        if self.shape(bias) != [n] {
            return Err(Error::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        Ok(self.push(value, Op::AddRow(x, bias)))
    }

    /// `x · w + b` for `x[m,k]`, `w[k,n]`, `b[n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * c).collect())
            .expect("shape preserved");
        self.push(value, Op::Scale(x, c))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| gelu(a)).collect())
            .expect("shape preserved");
        self.push(value, Op::Gelu(x))
    }

    /// Softmax along `axis`, max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Contract(format!("softmax axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { x, outer, n, inner }))
    }

    /// Normalizes each row of `x[m,n]` to zero mean and unit variance, then
    /// applies `gain[n]` and `bias[n]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = if var + eps > 0.0 { 1.0 / (var + eps).sqrt() } else { 0.0 };
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims2(x, "slice_cols")?;
        if start > end || end > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, end]));
        }
        let src = self.value(x).data();
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + end]);
        }
        let value = Tensor::new(vec![m, w], data)?;
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        let (m, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_cols")?;
            if pm != m {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat_rows of nothing".into()))?;
        let (_, n) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pm, pn) = self.dims2(p, "concat_rows")?;
            if pn != n {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += pm;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, n], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Output row `i` is row `index[i]` of `x`; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (m, n) = self.dims2(x, "gather_rows")?;
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", &[m, n], &[bad]));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * n);
        for &i in index {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(vec![index.len(), n], data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean of `(x - target)^2` over the flat `positions`; zero when empty.
    /// Other positions take no part in the value or the gradient.
    pub fn masked_mse(&mut self, x: Var, target: &[f64], positions: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if v.len() != target.len() {
            return Err(Error::shape("masked_mse", v.shape(), &[target.len()]));
        }
        if let Some(&bad) = positions.iter().find(|&&p| p >= v.len()) {
            return Err(Error::Contract(format!("masked position {bad} out of range")));
        }
        let value = if positions.is_empty() {
            0.0
        } else {
            let d = v.data();
            positions.iter().map(|&p| (d[p] - target[p]).powi(2)).sum::<f64>() / positions.len() as f64
        };
        Ok(self.push(
            Tensor::scalar(value),
            Op::MaskedMse {
                x,
                target: target.to_vec(),
                positions: positions.to_vec(),
            },
        ))
    }

    /// `-log softmax(scores)[label]` for a score vector.
    pub fn cross_entropy(&mut self, scores: Var, label: usize) -> Result<Var> {
        let s = self.value(scores).data();
        if label >= s.len() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                s.len()
            )));
        }
        let top = crate::model::argmax(s);
        let max = s[top];
        // log-sum-exp as ln(1 + rest) around the largest score
        let rest: f64 = s
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != top)
            .map(|(_, v)| (v - max).exp())
            .sum();
        let log_norm = rest.ln_1p();
        let probs: Vec<f64> = s.iter().map(|v| (v - max - log_norm).exp()).collect();
        let loss = log_norm + (max - s[label]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                scores,
                label,
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let n = self.value(*b).shape()[1];
                    let mut da = vec![0.0; m * k];
                    matmul_bt_into(&g, self.value(*b).data(), &mut da, m, n, k);
                    let mut db = vec![0.0; k * n];
                    matmul_at_into(self.value(*a).data(), &g, &mut db, k, m, n);
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::AddRow(x, bias) => {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, &g);
                    accumulate(&mut grads, *bias, &db);
                }
                Op::Scale(x, c) => {
                    let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Gelu(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(gv, xv)| gv * gelu_grad(*xv))
                        .collect();
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Softmax { x, outer, n, inner } => {
                    let y = node.value.data();
                    let mut dx = vec![0.0; y.len()];
                    for o in 0..*outer {
                        for i in 0..*inner {
                            let at = |j: usize| o * n * inner + j * inner + i;
                            let dot: f64 = (0..*n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..*n {
                                dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let n = self.value(*gain).len();
                    let m = inv_std.len();
                    let gn = self.value(*gain).data();
                    let mut dx = vec![0.0; m * n];
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for r in 0..m {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * gn[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                            dg[j] += gr[j] * hr[j];
                            db[j] += gr[j];
                        }
                        let nf = n as f64;
                        for j in 0..n {
                            let dh = gr[j] * gn[j];
                            dx[r * n + j] = inv_std[r] / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                    accumulate(&mut grads, *gain, &dg);
                    accumulate(&mut grads, *bias, &db);
                }
                Op::Transpose(x) => {
                    let (r, c) = self.value(*x).dims2()?;
                    accumulate(&mut grads, *x, &transpose_raw(&g, c, r));
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, &g),
                Op::SliceCols { x, start } => {
                    let (m, n) = self.value(*x).dims2()?;
                    let w = node.value.shape()[1];
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        dx[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::ConcatCols(parts) => {
                    let (m, total) = node.value.dims2()?;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut grads, p, &dp);
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        accumulate(&mut grads, p, &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::GatherRows { x, index } => {
                    let (m, n) = self.value(*x).dims2()?;
                    let mut dx = vec![0.0; m * n];
                    for (out_row, &src_row) in index.iter().enumerate() {
                        for j in 0..n {
                            dx[src_row * n + j] += g[out_row * n + j];
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Sum(x) => {
                    let dx = vec![g[0]; self.value(*x).len()];
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Mean(x) => {
                    let len = self.value(*x).len();
                    let dx = vec![g[0] / len.max(1) as f64; len];
                    accumulate(&mut grads, *x, &dx);
                }
                Op::MaskedMse { x, target, positions } => {
                    let d = self.value(*x).data();
                    let mut dx = vec![0.0; d.len()];
                    if !positions.is_empty() {
                        let scale = 2.0 * g[0] / positions.len() as f64;
                        for &p in positions {
                            dx[p] = scale * (d[p] - target[p]);
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::CrossEntropy { scores, label, probs } => {
                    let mut ds: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                    ds[*label] -= g[0];
                    accumulate(&mut grads, *scores, &ds);
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            params: self.nodes.iter().map(|n| n.param).collect(),
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Result of [`Tape::backward`]: gradients for every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<usize>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to any recorded node; zeros when the
    /// node does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Per-parameter gradients, indexed by parameter id. Parameters the loss
    /// does not reach (or that were never bound) get zeros of the given shape.
    pub fn for_params(&self, params: &[Tensor]) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        for (node, pid) in self.params.iter().enumerate() {
            let Some(pid) = *pid else { continue };
            let Some(g) = &self.grads[node] else { continue };
            if let Some(slot) = out.get_mut(pid) {
                for (a, b) in slot.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        out
    }
}
