use std::collections::HashMap;

use rand::{Rng, RngCore};

use super::{matmul_at_into, matmul_bt_into, matmul_into, sigmoid, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Sigmoid(Var),
    Conv1d { x: Var, kernel: Var, bias: Var, width: usize },
    Glu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, rstd: Vec<F> },
    Softmax(Var),
    Dropout { x: Var, mask: Vec<F> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    RowNorm(Var),
    MeanRows(Var),
    Sum(Var),
    Gather { table: Var, indices: Vec<usize> },
    Bce { p: Var, target: F },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records a forward pass so that [`Tape::backward`] can replay it in reverse.
///
/// Nodes are appended in execution order, so index order is a topological
/// order and backward simply walks the node list from the loss downwards.
#[derive(Debug)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    mode: Mode,
    params: HashMap<usize, Var>,
    consumed: bool,
    stochastic: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(usize, Var)>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, var: Var) -> Option<Tensor<F>> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Tensor::new(self.shapes[var.0].clone(), g.clone()).ok()
    }

    /// `(param key, gradient)` for every parameter registered on the tape,
    /// in registration order. Unreached parameters get a zero gradient.
    pub fn params(&self) -> impl Iterator<Item = (usize, Tensor<F>)> + '_ {
        self.params.iter().map(|&(key, var)| {
            let g = self.get(var).unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]));
            (key, g)
        })
    }
}

fn expect_2d<F: Scalar>(t: &Tensor<F>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{what}: expected a matrix, got shape {s:?}"))),
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new(mode: Mode) -> Self {
        Tape {
            nodes: Vec::new(),
            mode,
            params: HashMap::new(),
            consumed: false,
            stochastic: false,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True once a train-mode dropout with non-zero rate has been recorded.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {}", op_name(&op))));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Registers a trainable parameter; repeated calls with the same key
    /// return the same node.
    pub fn param(&mut self, key: usize, value: &Tensor<F>) -> Result<Var> {
        if let Some(&v) = self.params.get(&key) {
            return Ok(v);
        }
        // parameters are finite by construction; skip the scan
        self.nodes.push(Node { value: value.clone(), op: Op::Leaf, requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(key, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_2d(self.value(a), "matmul lhs")?;
        let (k2, n) = expect_2d(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul inner dims {m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = expect_2d(self.value(a), "matmul_bt lhs")?;
        let (n, k2) = expect_2d(self.value(b), "matmul_bt rhs")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul_bt inner dims {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![F::zero(); m * n];
        matmul_bt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        expect_2d(self.value(x), "transpose")?;
        let out = self.value(x).transpose();
        let rg = self.rg(x);
        self.push(out, Op::Transpose(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<F>, f: impl Fn(F, F) -> F) -> Result<Var> {
        let out: Vec<F> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, out)?, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Adds a length-`d` vector to every row of an `L×d` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (l, d) = expect_2d(self.value(x), "add_row")?;
        if self.value(bias).numel() != d {
            return Err(Error::dim(format!("add_row: bias of {} for width {d}", self.value(bias).numel())));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..l {
            for (o, &bv) in out[r * d..(r + 1) * d].iter_mut().zip(b) {
                *o = *o + bv;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        self.push(Tensor::matrix(l, d, out)?, Op::AddRow(x, bias), rg)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Scale(x, s), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Sigmoid(x), rg)
    }

    /// Same-padded cross-correlation along the sequence axis.
    ///
    /// `x` is `L×C_in`, `kernel` is `k×C_in×C_out` with odd `k`, `bias` is `C_out`.
    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (l, c_in) = expect_2d(self.value(x), "conv1d input")?;
        let (width, kc, c_out) = match self.shape(kernel) {
            [k, c, o] => (*k, *c, *o),
            s => return Err(Error::dim(format!("conv1d kernel must be k×C_in×C_out, got {s:?}"))),
        };
        if width % 2 == 0 {
            return Err(Error::config(format!("conv1d kernel width {width} must be odd")));
        }
        if kc != c_in {
            return Err(Error::dim(format!("conv1d kernel expects {kc} channels, input has {c_in}")));
        }
        if self.value(bias).numel() != c_out {
            return Err(Error::dim("conv1d bias length must equal output channels"));
        }
        let pad = width / 2;
        let xs = self.value(x).data();
        let ks = self.value(kernel).data();
        let bs = self.value(bias).data();
        let mut out = vec![F::zero(); l * c_out];
        for t in 0..l {
            let row = &mut out[t * c_out..(t + 1) * c_out];
            row.copy_from_slice(bs);
            for j in 0..width {
                let src = t as isize + j as isize - pad as isize;
                if src < 0 || src >= l as isize {
                    continue;
                }
                let xr = &xs[src as usize * c_in..(src as usize + 1) * c_in];
                for (c, &xv) in xr.iter().enumerate() {
                    let kr = &ks[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                    for (o, &kv) in row.iter_mut().zip(kr) {
                        *o = *o + xv * kv;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(kernel) || self.rg(bias);
        self.push(Tensor::matrix(l, c_out, out)?, Op::Conv1d { x, kernel, bias, width }, rg)
    }

    /// Gated linear unit: first half of the last axis is the value, second half the gate.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let (l, c) = expect_2d(self.value(x), "glu")?;
        if c % 2 != 0 {
            return Err(Error::dim(format!("glu needs an even last dimension, got {c}")));
        }
        let d = c / 2;
        let xs = self.value(x).data();
        let mut out = vec![F::zero(); l * d];
        for r in 0..l {
            for j in 0..d {
                out[r * d + j] = xs[r * c + j] * sigmoid(xs[r * c + d + j]);
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(l, d, out)?, Op::Glu(x), rg)
    }

    /// Row-wise layer normalisation with population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (l, d) = expect_2d(self.value(x), "layer_norm")?;
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::dim(format!("layer_norm affine params must have length {d}")));
        }
        let eps = F::lit(eps);
        let n = F::lit(d as f64);
        let xs = self.value(x).data();
        let gs = self.value(gamma).data();
        let bs = self.value(beta).data();
        let mut xhat = vec![F::zero(); l * d];
        let mut rstd = vec![F::zero(); l];
        let mut out = vec![F::zero(); l * d];
        for r in 0..l {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gs[j] + bs[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(Tensor::matrix(l, d, out)?, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg)
    }

    /// Softmax along the last axis (every row of a matrix).
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let c = self.value(x).cols();
        let shape = self.shape(x).to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg)
    }

    /// Inverted dropout. Identity (the same node) in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut dyn RngCore) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        self.stochastic = true;
        let keep = F::lit(1.0 / (1.0 - rate));
        let mask: Vec<F> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
            .collect();
        let out = self.value(x).data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out)?, Op::Dropout { x, mask }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat of nothing"))?;
        let rows = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = expect_2d(self.value(p), "concat_cols")?;
            if r != rows {
                return Err(Error::dim(format!("concat_cols: row counts {rows} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = expect_2d(self.value(x), "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::dim(format!("slice_cols {start}..{} of width {c}", start + len)));
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xs[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(x);
        self.push(Tensor::matrix(r, len, out)?, Op::SliceCols { x, start }, rg)
    }

    /// Euclidean norm of each row: `L×d → L×1`.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let (l, _) = expect_2d(self.value(x), "row_norm")?;
        let x_val = self.value(x);
        let out = (0..l)
            .map(|r| x_val.row(r).iter().map(|&v| v * v).sum::<F>().sqrt())
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(l, 1, out)?, Op::RowNorm(x), rg)
    }

    /// Column means: `L×d → 1×d`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (l, d) = expect_2d(self.value(x), "mean_rows")?;
        let xs = self.value(x).data();
        let n = F::lit(l as f64);
        let out = (0..d)
            .map(|j| (0..l).map(|r| xs[r * d + j]).sum::<F>() / n)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::matrix(1, d, out)?, Op::MeanRows(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Row lookup into an embedding table: output row `i` is `table[indices[i]]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, d) = expect_2d(self.value(table), "gather table")?;
        if indices.is_empty() {
            return Err(Error::dim("gather with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::dim(format!("token index {bad} outside table of {v} rows")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(table);
        let op = Op::Gather { table, indices: indices.to_vec() };
        self.push(Tensor::matrix(indices.len(), d, out)?, op, rg)
    }

    /// Binary cross-entropy of a probability against a 0/1 target.
    /// The probability is clamped to `[1e-7, 1 - 1e-7]` before the log.
    pub fn bce(&mut self, p: Var, target: f64) -> Result<Var> {
        if self.value(p).numel() != 1 {
            return Err(Error::dim("bce expects a scalar probability"));
        }
        let pv = self.value(p).data()[0].as_f64();
        let loss = crate::train::bce_loss(pv, target);
        let rg = self.rg(p);
        self.push(Tensor::scalar(F::lit(loss)), Op::Bce { p, target: F::lit(target) }, rg)
    }

    /// Reverse pass from a scalar loss. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.consumed {
            return Err(Error::usage("backward already ran on this tape; record a new forward pass"));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let mut params: Vec<(usize, Var)> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        params.sort_by_key(|&(_, v)| v.0);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            params,
        })
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![F::zero(); self.nodes[v.0].value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.cols();
                acc(*a, &mut |ga| matmul_bt_into(g, val(*b), ga, m, n, k));
                acc(*b, &mut |gb| matmul_at_into(val(*a), g, gb, m, k, n));
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                let n = self.nodes[b.0].value.rows();
                acc(*a, &mut |ga| matmul_into(g, val(*b), ga, m, n, k));
                acc(*b, &mut |gb| matmul_at_into(g, val(*a), gb, m, n, k));
            }
            Op::Transpose(x) => {
                let (r, c) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                acc(*x, &mut |gx| {
                    for a in 0..r {
                        for b in 0..c {
                            gx[a * c + b] = gx[a * c + b] + g[b * r + a];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_assign(ga, g));
                acc(*b, &mut |gb| add_assign(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_assign(ga, g));
                acc(*b, &mut |gb| {
                    for (o, &v) in gb.iter_mut().zip(g) {
                        *o = *o - v;
                    }
                });
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |ga| {
                    for ((o, &gv), &bv) in ga.iter_mut().zip(g).zip(val(*b)) {
                        *o = *o + gv * bv;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, &gv), &av) in gb.iter_mut().zip(g).zip(val(*a)) {
                        *o = *o + gv * av;
                    }
                });
            }
            Op::AddRow(x, bias) => {
                let d = self.nodes[bias.0].value.numel();
                acc(*x, &mut |gx| add_assign(gx, g));
                acc(*bias, &mut |gb| {
                    for row in g.chunks(d) {
                        add_assign(gb, row);
                    }
                });
            }
            Op::Scale(x, s) => {
                acc(*x, &mut |gx| {
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o = *o + v * *s;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for ((o, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *o = *o + gv * yv * (F::one() - yv);
                    }
                });
            }
            Op::Conv1d { x, kernel, bias, width } => {
                let (l, c_in) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                let c_out = node.value.cols();
                let pad = width / 2;
                let xs = val(*x);
                let ks = val(*kernel);
                let taps = |t: usize, j: usize| {
                    let src = t as isize + j as isize - pad as isize;
                    (src >= 0 && src < l as isize).then_some(src as usize)
                };
                acc(*bias, &mut |gb| {
                    for row in g.chunks(c_out) {
                        add_assign(gb, row);
                    }
                });
                acc(*x, &mut |gx| {
                    for t in 0..l {
                        let gr = &g[t * c_out..(t + 1) * c_out];
                        for j in 0..*width {
                            let Some(src) = taps(t, j) else { continue };
                            for c in 0..c_in {
                                let kr = &ks[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                                let s: F = gr.iter().zip(kr).map(|(&a, &b)| a * b).sum();
                                gx[src * c_in + c] = gx[src * c_in + c] + s;
                            }
                        }
                    }
                });
                acc(*kernel, &mut |gk| {
                    for t in 0..l {
                        let gr = &g[t * c_out..(t + 1) * c_out];
                        for j in 0..*width {
                            let Some(src) = taps(t, j) else { continue };
                            for c in 0..c_in {
                                let xv = xs[src * c_in + c];
                                let kr = &mut gk[(j * c_in + c) * c_out..(j * c_in + c + 1) * c_out];
                                for (o, &gv) in kr.iter_mut().zip(gr) {
                                    *o = *o + gv * xv;
                                }
                            }
                        }
                    }
                });
            }
            Op::Glu(x) => {
                let c = self.nodes[x.0].value.cols();
                let d = c / 2;
                let xs = val(*x);
                acc(*x, &mut |gx| {
                    for (r, gr) in g.chunks(d).enumerate() {
                        for j in 0..d {
                            let a = xs[r * c + j];
                            let s = sigmoid(xs[r * c + d + j]);
                            gx[r * c + j] = gx[r * c + j] + gr[j] * s;
                            gx[r * c + d + j] = gx[r * c + d + j] + gr[j] * a * s * (F::one() - s);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.nodes[gamma.0].value.numel();
                let gs = val(*gamma);
                let n = F::lit(d as f64);
                acc(*beta, &mut |gb| {
                    for row in g.chunks(d) {
                        add_assign(gb, row);
                    }
                });
                acc(*gamma, &mut |gg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] = gg[j] + gr[j] * hr[j];
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let dh: Vec<F> = gr.iter().zip(gs).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<F>() / n;
                        let mean_dhh = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<F>() / n;
                        for j in 0..d {
                            let v = rstd[r] * (dh[j] - mean_dh - hr[j] * mean_dhh);
                            gx[r * d + j] = gx[r * d + j] + v;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let c = node.value.cols();
                let y = node.value.data();
                acc(*x, &mut |gx| {
                    for ((gxr, gr), yr) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            gxr[j] = gxr[j] + yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                acc(*x, &mut |gx| {
                    for ((o, &gv), &m) in gx.iter_mut().zip(g).zip(mask) {
                        *o = *o + gv * m;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p.0].value.cols();
                    acc(p, &mut |gp| {
                        for (r, gr) in g.chunks(total).enumerate() {
                            add_assign(&mut gp[r * w..(r + 1) * w], &gr[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let c = self.nodes[x.0].value.cols();
                let len = node.value.cols();
                acc(*x, &mut |gx| {
                    for (r, gr) in g.chunks(len).enumerate() {
                        add_assign(&mut gx[r * c + start..r * c + start + len], gr);
                    }
                });
            }
            Op::RowNorm(x) => {
                let d = self.nodes[x.0].value.cols();
                let xs = val(*x);
                let norms = node.value.data();
                acc(*x, &mut |gx| {
                    for (r, (&gv, &nv)) in g.iter().zip(norms).enumerate() {
                        if nv == F::zero() {
                            continue;
                        }
                        for j in 0..d {
                            gx[r * d + j] = gx[r * d + j] + gv * xs[r * d + j] / nv;
                        }
                    }
                });
            }
            Op::MeanRows(x) => {
                let l = self.nodes[x.0].value.rows();
                let n = F::lit(l as f64);
                acc(*x, &mut |gx| {
                    for row in gx.chunks_mut(g.len()) {
                        for (o, &gv) in row.iter_mut().zip(g) {
                            *o = *o + gv / n;
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |gx| {
                    for o in gx.iter_mut() {
                        *o = *o + g[0];
                    }
                });
            }
            Op::Gather { table, indices } => {
                let d = node.value.cols();
                acc(*table, &mut |gt| {
                    for (r, &idx) in indices.iter().enumerate() {
                        add_assign(&mut gt[idx * d..(idx + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Bce { p, target } => {
                let pv = val(*p)[0];
                let lo = F::lit(crate::train::PROB_CLAMP);
                let hi = F::one() - lo;
                acc(*p, &mut |gp| {
                    // clamped region has zero slope
                    if pv > lo && pv < hi {
                        let d = -*target / pv + (F::one() - *target) / (F::one() - pv);
                        gp[0] = gp[0] + g[0] * d;
                    }
                });
            }
        }
    }
}

fn add_assign<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o = *o + v;
    }
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulBt(..) => "matmul_bt",
        Op::Transpose(..) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::AddRow(..) => "add_row",
        Op::Scale(..) => "scale",
        Op::Sigmoid(..) => "sigmoid",
        Op::Conv1d { .. } => "conv1d",
        Op::Glu(..) => "glu",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Softmax(..) => "softmax",
        Op::Dropout { .. } => "dropout",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceCols { .. } => "slice_cols",
        Op::RowNorm(..) => "row_norm",
        Op::MeanRows(..) => "mean_rows",
        Op::Sum(..) => "sum",
        Op::Gather { .. } => "gather",
        Op::Bce { .. } => "bce",
    }
}
