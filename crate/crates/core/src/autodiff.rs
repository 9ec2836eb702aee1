//! Reverse-mode differentiation over a per-sample computation tape.
//!
//! Every operation appends a node holding its forward value. Parameters are
//! borrowed from the model and never copied into the tape; `backward` returns
//! one gradient matrix per parameter that took part in the graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{dot, Matrix, Scalar};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    MaskedMeanRows(Var, Vec<bool>),
    Dropout(Var, Vec<T>),
    BceWithLogits(Var, Vec<T>),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Option<Matrix<T>>,
    op: Op<T>,
}

pub struct Tape<'p, T: Scalar> {
    params: &'p [Matrix<T>],
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p [Matrix<T>]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            dropout: None,
        }
    }

    /// Enables inverted dropout with probability `p` drawn from `rng`.
    pub fn with_dropout(mut self, p: f64, rng: ChaCha8Rng) -> Self {
        if p > 0.0 {
            self.dropout = Some((p, rng));
        }
        self
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(i)) => &self.params[*i],
            _ => unreachable!("node without value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, index: usize) -> Var {
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(index),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    /// `x · W + b` with `W: d_in x d_out` and `b: 1 x d_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let out = self
            .value(x)
            .matmul(self.value(w))
            .add_row_broadcast(self.value(b).data());
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add_row_broadcast(self.value(b).data());
        self.push(out, Op::AddRow(a, b))
    }

    /// Multiplies every row of `a` element-wise by the `1 x n` row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).mul_row_broadcast(self.value(b).data());
        self.push(out, Op::MulRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    /// Row-wise softmax over the entries where `allowed(row, col)` holds.
    /// Disallowed entries are exactly zero; a row with no allowed entry is
    /// all zeros.
    pub fn masked_softmax(&mut self, a: Var, allowed: impl Fn(usize, usize) -> bool) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.shape();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let xr = x.row(r);
            let mut max = T::neg_infinity();
            for (c, &v) in xr.iter().enumerate() {
                if allowed(r, c) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let orow = out.row_mut(r);
            let mut sum = T::zero();
            for c in 0..cols {
                if allowed(r, c) {
                    let e = (xr[c] - max).exp();
                    orow[c] = e;
                    sum += e;
                }
            }
            for o in orow.iter_mut() {
                *o = *o / sum;
            }
        }
        self.push(out, Op::Softmax(a))
    }

    /// Per-row layer normalization with learned gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let n = T::lit(cols as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut out = Matrix::zeros(rows, cols);
        let mut xhat = vec![T::zero(); rows * cols];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let xr = xv.row(r);
            let mean = xr.iter().copied().sum::<T>() / n;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let orow = out.row_mut(r);
            for c in 0..cols {
                let h = (xr[c] - mean) * rs;
                xhat[r * cols + c] = h;
                orow[c] = h * g[c] + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = parts
            .iter()
            .next()
            .map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows width");
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let out = Matrix::from_vec(rows, cols, data).expect("concat shape");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_cols(start, len);
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let cols: usize = widths.iter().sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols height");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(v.row(r));
            }
            offset += w;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = self.value(table);
        let cols = t.cols();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let out = Matrix::from_vec(indices.len(), cols, data).expect("gather shape");
        self.push(out, Op::Gather(table, indices.to_vec()))
    }

    /// Mean over the rows whose `include` flag is set, as a `1 x cols` row.
    pub fn masked_mean_rows(&mut self, a: Var, include: &[bool]) -> Var {
        let v = self.value(a);
        assert_eq!(v.rows(), include.len(), "mask length");
        let count = include.iter().filter(|&&k| k).count().max(1);
        let mut out = Matrix::zeros(1, v.cols());
        for (r, _) in include.iter().enumerate().filter(|(_, &k)| k) {
            for (o, &x) in out.data_mut().iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        out.scale_in_place(T::one() / T::lit(count as f64));
        self.push(out, Op::MaskedMeanRows(a, include.to_vec()))
    }

    /// Inverted dropout; identity when the tape has no dropout configured.
    pub fn dropout(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let Some((p, rng)) = self.dropout.as_mut() else {
            return a;
        };
        let p = *p;
        let keep = T::lit(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        self.push(out, Op::Dropout(a, mask))
    }

    /// Mean binary cross-entropy of sigmoid(`logits`) against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len(), "bce target count");
        let n = T::lit(targets.len().max(1) as f64);
        let loss = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<T>()
            / n;
        self.push(
            Matrix::scalar(loss),
            Op::BceWithLogits(logits, targets.to_vec()),
        )
    }

    /// Mean categorical cross-entropy of row-wise softmax over the rows with
    /// a target. Rows with `None` are ignored; with no target rows the loss
    /// is zero.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows(), targets.len(), "cross-entropy target count");
        let cols = z.cols();
        let mut probs = vec![T::zero(); z.len()];
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = z.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
            let log_sum = sum.ln() + max;
            for c in 0..cols {
                probs[r * cols + c] = (row[c] - log_sum).exp();
            }
            total += log_sum - row[t];
            count += 1;
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::lit(count as f64)
        };
        self.push(
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Back-propagates from the scalar `root` and returns the gradient of
    /// every parameter, indexed like the parameter slice. Parameters that did
    /// not take part get `None`.
    pub fn backward(&self, root: Var) -> Vec<Option<Matrix<T>>> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::scalar(T::one()));
        let mut param_grads: Vec<Option<Matrix<T>>> = vec![None; self.params.len()];

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(i) => param_grads[*i] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Linear { x, w, b } => {
                    let gx = g.matmul_t(self.value(*w));
                    let gw = self.value(*x).t_matmul(&g);
                    let gb = g.col_sums();
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads, *b, g.col_sums());
                    accumulate(&mut grads, *a, g);
                }
                Op::MulRow(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b).data();
                    let ga = g.mul_row_broadcast(bv);
                    let mut gb = Matrix::zeros(1, bv.len());
                    for r in 0..g.rows() {
                        for ((o, &gg), &x) in gb.data_mut().iter_mut().zip(g.row(r)).zip(av.row(r)) {
                            *o += gg * x;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Relu(a) => {
                    let av = self.value(*a);
                    let mut ga = g;
                    for (o, &x) in ga.data_mut().iter_mut().zip(av.data()) {
                        if x <= T::zero() {
                            *o = T::zero();
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = self.nodes[idx].value.as_ref().expect("softmax value");
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner = dot(yr, gr);
                        for ((o, &yy), &gg) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yy * (gg - inner);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data();
                    let (rows, cols) = g.shape();
                    let n = T::lit(cols as f64);
                    let mut gx = Matrix::zeros(rows, cols);
                    let mut ggain = Matrix::zeros(1, cols);
                    let mut gbias = Matrix::zeros(1, cols);
                    let mut dxhat = vec![T::zero(); cols];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for c in 0..cols {
                            dxhat[c] = gr[c] * gv[c];
                            mean_d += dxhat[c];
                            mean_dh += dxhat[c] * hr[c];
                            ggain.data_mut()[c] += gr[c] * hr[c];
                            gbias.data_mut()[c] += gr[c];
                        }
                        mean_d = mean_d / n;
                        mean_dh = mean_dh / n;
                        let rs = rstd[r];
                        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o = rs * (dxhat[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        accumulate(&mut grads, p, g.slice_rows(start, rows));
                        start += rows;
                    }
                }
                Op::SliceRows(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    let c = av.cols();
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    let w = g.cols();
                    for r in 0..g.rows() {
                        ga.row_mut(r)[*start..start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        accumulate(&mut grads, p, g.slice_cols(offset, w));
                        offset += w;
                    }
                }
                Op::Gather(table, indices) => {
                    let tv = self.value(*table);
                    let mut gt = Matrix::zeros(tv.rows(), tv.cols());
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, &x) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::MaskedMeanRows(a, include) => {
                    let av = self.value(*a);
                    let count = include.iter().filter(|&&k| k).count().max(1);
                    let inv = T::one() / T::lit(count as f64);
                    let mut ga = Matrix::zeros(av.rows(), av.cols());
                    for (r, _) in include.iter().enumerate().filter(|(_, &k)| k) {
                        for (o, &x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o = x * inv;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Dropout(a, mask) => {
                    let mut ga = g;
                    for (o, &m) in ga.data_mut().iter_mut().zip(mask) {
                        *o *= m;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::BceWithLogits(logits, targets) => {
                    let z = self.value(*logits);
                    let scale = g.item() / T::lit(targets.len().max(1) as f64);
                    let data = z
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                        .collect();
                    let gz = Matrix::from_vec(z.rows(), z.cols(), data).expect("bce grad");
                    accumulate(&mut grads, *logits, gz);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let z = self.value(*logits);
                    let count = targets.iter().filter(|t| t.is_some()).count();
                    if count == 0 {
                        continue;
                    }
                    let scale = g.item() / T::lit(count as f64);
                    let cols = z.cols();
                    let mut gz = Matrix::zeros(z.rows(), cols);
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = gz.row_mut(r);
                        for c in 0..cols {
                            row[c] = probs[r * cols + c] * scale;
                        }
                        row[t] -= scale;
                    }
                    accumulate(&mut grads, *logits, gz);
                }
            }
        }
        param_grads
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Central differences over every parameter entry of a scalar graph.
    fn check(params: Vec<Matrix<f64>>, build: impl Fn(&mut Tape<f64>) -> Var) {
        let tape_grads = {
            let mut tape = Tape::new(&params);
            let root = build(&mut tape);
            tape.backward(root)
        };
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for k in 0..p.len() {
                let eval = |delta: f64| {
                    let mut shifted = params.clone();
                    shifted[pi].data_mut()[k] += delta;
                    let mut tape = Tape::new(&shifted);
                    let root = build(&mut tape);
                    tape.value(root).item()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = tape_grads[pi].as_ref().map_or(0.0, |g| g.data()[k]);
                assert!(
                    (numeric - analytic).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "param {pi}[{k}]: numeric {numeric} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn linear_layer_norm_relu_bce() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![
            random_matrix(&mut rng, 3, 4),
            random_matrix(&mut rng, 4, 5),
            random_matrix(&mut rng, 1, 5),
            random_matrix(&mut rng, 1, 5),
            random_matrix(&mut rng, 1, 5),
        ];
        check(params, |t| {
            let x = t.param(0);
            let (w, b, g, beta) = (t.param(1), t.param(2), t.param(3), t.param(4));
            let y = t.linear(x, w, b);
            let y = t.layer_norm(y, g, beta);
            let y = t.relu(y);
            let m = t.masked_mean_rows(y, &[true, false, true]);
            t.bce_with_logits(m, &[1.0, 0.0, 1.0, 1.0, 0.0])
        });
    }

    #[test]
    fn attention_pattern_and_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![
            random_matrix(&mut rng, 4, 6),
            random_matrix(&mut rng, 3, 6),
            random_matrix(&mut rng, 1, 6),
            random_matrix(&mut rng, 5, 6),
        ];
        check(params, |t| {
            let q = t.param(0);
            let k = t.param(1);
            let row = t.param(2);
            let table = t.param(3);
            let kq = t.slice_cols(k, 0, 3);
            let qq = t.slice_cols(q, 0, 3);
            let s = t.matmul_t(qq, kq);
            let s = t.scale(s, 0.5);
            let p = t.masked_softmax(s, |r, c| c <= r.min(2));
            let v = t.mul_row(k, row);
            let o = t.matmul(p, v);
            let o2 = t.slice_rows(q, 1, 3);
            let o2 = t.add_row(o2, row);
            let o2 = t.concat_rows(&[o, o2]);
            let e = t.gather(table, &[0, 3, 3, 1, 4, 2, 0]);
            let o3 = t.add(o2, e);
            let halves = [t.slice_cols(o3, 0, 2), t.slice_cols(o3, 2, 4)];
            let o4 = t.concat_cols(&[halves[1], halves[0]]);
            t.softmax_cross_entropy(o4, &[Some(1), None, Some(5), Some(0), None, Some(2), Some(3)])
        });
    }

    #[test]
    fn masked_softmax_rows_sum_to_one() {
        let params: Vec<Matrix<f64>> = vec![];
        let mut t = Tape::new(&params);
        let x = t.leaf(Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 5.0]).unwrap());
        let p = t.masked_softmax(x, |_, c| c != 1);
        let v = t.value(p);
        for r in 0..2 {
            assert!((v.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(v.get(r, 1), 0.0);
        }
    }

    #[test]
    fn dropout_is_identity_without_configuration() {
        let params: Vec<Matrix<f32>> = vec![];
        let mut t = Tape::new(&params);
        let x = t.leaf(Matrix::filled(2, 2, 1.0));
        assert_eq!(t.dropout(x), x);
    }
}
