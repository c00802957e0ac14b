//! Reverse-mode tape over whole-tensor operations.
//!
//! Every op appends one node holding its forward value plus whatever the
//! backward rule needs. [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid topological order because a node can
//! only reference earlier nodes.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, col2im, from_channel_major, gemm, im2col, to_channel_major, ConvGeom, View};
use super::{AutodiffError, ParamId, ParamStore, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    #[cfg(test)]
    pub(crate) fn from_index_for_tests(i: usize) -> Self {
        Var(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Records caches for backward; dropout active; batchnorm uses batch statistics.
    Training,
    /// Forward only; dropout is identity; batchnorm uses running statistics.
    Inference,
}

/// Elementwise function paired with its derivative, both in terms of the input.
#[derive(Clone, Copy)]
pub struct UnaryFn {
    pub name: &'static str,
    pub value: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
}

enum Op {
    Leaf,
    Dense { x: Var, w: Var, b: Var },
    Conv { x: Var, w: Var, b: Var, geom: ConvGeom, c_in: usize, c_out: usize, cols: Vec<f64> },
    ConvTranspose { x: Var, w: Var, b: Var, geom: ConvGeom, c_in: usize, c_out: usize, x_cm: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, batch_stats: bool },
    Tanh { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    Reparameterize { mu: Var, log_var: Var, eps: Vec<f64> },
    SegmentMse { x: Var, target: Vec<f64>, coef: Vec<f64> },
    Kl { mu: Var, log_var: Var, batch: usize },
    L2 { w: Var, coef: f64 },
    Unary { x: Var, f: UnaryFn },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
    param: Option<ParamId>,
}

/// Statistics of one batchnorm application, used to update running averages.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct Tape {
    mode: Mode,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    rng: ChaCha8Rng,
}

fn shape_err(layer: &str, expected: &[usize], got: &[usize]) -> AutodiffError {
    AutodiffError::Shape { layer: layer.to_string(), expected: expected.to_vec(), got: got.to_vec() }
}

/// Splits a conv-style activation shape into `(batch, channels, length)`.
fn bcl(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [b, c, l] => Some((b, c, l)),
        [b, c] => Some((b, c, 1)),
        _ => None,
    }
}

impl Tape {
    pub fn training(seed: u64) -> Self {
        Self::with_mode(Mode::Training, seed)
    }

    pub fn inference() -> Self {
        Self::with_mode(Mode::Inference, 0)
    }

    pub fn with_mode(mode: Mode, seed: u64) -> Self {
        Self { mode, nodes: Vec::new(), params: HashMap::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Training
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
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

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.mode == Mode::Training;
        self.nodes.push(Node { value, requires_grad, op, param: None });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; gradients do not flow into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Free-standing leaf that collects a gradient (see [`Tape::gradient`]).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a parameter from the store; repeated loads share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    /// `y = x·wᵀ + b` with `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xs, ws, bs) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        let [out, inp] = ws[..] else { return Err(shape_err("dense weight", &[0, 0], &ws)) };
        let (batch, xin) = match xs[..] {
            [batch, xin] => (batch, xin),
            _ => return Err(shape_err("dense", &[0, inp], &xs)),
        };
        if xin != inp {
            return Err(shape_err("dense", &[batch, inp], &xs));
        }
        if bs != [out] {
            return Err(shape_err("dense bias", &[out], &bs));
        }
        let mut y = vec![0.0; batch * out];
        gemm(
            batch,
            inp,
            out,
            View::rows(self.value(x).data(), inp),
            View::transposed(self.value(w).data(), inp),
            &mut y,
            false,
        );
        let bias = self.value(b).data();
        for row in y.chunks_mut(out) {
            row.iter_mut().zip(bias).for_each(|(v, bb)| *v += bb);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(vec![batch, out], y)?, Op::Dense { x, w, b }, rg))
    }

    /// Strided 1-D convolution with "same" zero padding:
    /// `x: [batch, c_in, len]`, `w: [c_out, c_in, kernel]`, `b: [c_out]`,
    /// output length `ceil(len / stride)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let [c_out, c_in, kernel] = ws[..] else { return Err(shape_err("conv weight", &[0, 0, 0], &ws)) };
        let Some((batch, xc, len)) = bcl(&xs).filter(|_| xs.len() == 3) else {
            return Err(shape_err("conv", &[0, c_in, 0], &xs));
        };
        if xc != c_in {
            return Err(shape_err("conv", &[batch, c_in, len], &xs));
        }
        if self.shape(b) != [c_out] {
            return Err(shape_err("conv bias", &[c_out], self.shape(b)));
        }
        if stride == 0 || kernel == 0 {
            return Err(AutodiffError::InvalidSpec("conv stride and kernel must be >= 1".into()));
        }
        let geom = ConvGeom::same(batch, len, kernel, stride);
        let cols = im2col(self.value(x).data(), c_in, &geom);
        let width = batch * geom.len_out;
        let mut out_cm = vec![0.0; c_out * width];
        gemm(
            c_out,
            c_in * kernel,
            width,
            View::rows(self.value(w).data(), c_in * kernel),
            View::rows(&cols, width),
            &mut out_cm,
            false,
        );
        for (row, bb) in out_cm.chunks_mut(width).zip(self.value(b).data()) {
            row.iter_mut().for_each(|v| *v += bb);
        }
        let y = from_channel_major(&out_cm, batch, c_out, geom.len_out);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let cols = if self.is_training() { cols } else { Vec::new() };
        let value = Tensor::new(vec![batch, c_out, geom.len_out], y)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom, c_in, c_out, cols }, rg))
    }

    /// Transposed convolution, the adjoint of [`Tape::conv1d`] mapping length
    /// `len_out` down to the input length: `x: [batch, c_in, len]`,
    /// `w: [c_in, c_out, kernel]`, `b: [c_out]`. Requires
    /// `ceil(len_out / stride) == len`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        len_out: usize,
    ) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let [c_in, c_out, kernel] = ws[..] else { return Err(shape_err("conv_transpose weight", &[0, 0, 0], &ws)) };
        let Some((batch, xc, len)) = bcl(&xs).filter(|_| xs.len() == 3) else {
            return Err(shape_err("conv_transpose", &[0, c_in, 0], &xs));
        };
        if stride == 0 || kernel == 0 {
            return Err(AutodiffError::InvalidSpec("conv_transpose stride and kernel must be >= 1".into()));
        }
        let geom = ConvGeom::same(batch, len_out, kernel, stride);
        if xc != c_in || geom.len_out != len {
            return Err(shape_err("conv_transpose", &[batch, c_in, geom.len_out], &xs));
        }
        if self.shape(b) != [c_out] {
            return Err(shape_err("conv_transpose bias", &[c_out], self.shape(b)));
        }
        let width = batch * len;
        let x_cm = to_channel_major(self.value(x).data(), batch, c_in, len);
        let mut cols = vec![0.0; c_out * kernel * width];
        gemm(
            c_out * kernel,
            c_in,
            width,
            View::transposed(self.value(w).data(), c_out * kernel),
            View::rows(&x_cm, width),
            &mut cols,
            false,
        );
        let mut y = vec![0.0; batch * c_out * len_out];
        col2im(&cols, c_out, &geom, &mut y);
        let bias = self.value(b).data();
        for (i, row) in y.chunks_mut(len_out).enumerate() {
            let bb = bias[i % c_out];
            row.iter_mut().for_each(|v| *v += bb);
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let x_cm = if self.is_training() { x_cm } else { Vec::new() };
        let value = Tensor::new(vec![batch, c_out, len_out], y)?;
        Ok(self.push(value, Op::ConvTranspose { x, w, b, geom, c_in, c_out, x_cm }, rg))
    }

    /// Batch normalisation over the batch and length axes of `[batch, ch, len]`
    /// (or `[batch, ch]`). With `running = None` the batch statistics are used
    /// and returned; otherwise the supplied `(mean, var)` are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchStats>), AutodiffError> {
        let xs = self.shape(x).to_vec();
        let Some((batch, ch, len)) = bcl(&xs) else { return Err(shape_err("batchnorm", &[0, 0, 0], &xs)) };
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(shape_err("batchnorm scale", &[ch], self.shape(gamma)));
        }
        let n = (batch * len) as f64;
        let xd = self.value(x).data();
        let (mean, var, batch_stats) = match running {
            Some((m, v)) => {
                if m.len() != ch || v.len() != ch {
                    return Err(shape_err("batchnorm running stats", &[ch], &[m.len()]));
                }
                (m.to_vec(), v.to_vec(), false)
            }
            None => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for b in 0..batch {
                    for c in 0..ch {
                        mean[c] += xd[(b * ch + c) * len..(b * ch + c + 1) * len].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                for b in 0..batch {
                    for c in 0..ch {
                        var[c] += xd[(b * ch + c) * len..(b * ch + c + 1) * len]
                            .iter()
                            .map(|v| (v - mean[c]) * (v - mean[c]))
                            .sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                (mean, var, true)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut y = vec![0.0; xd.len()];
        for (i, (row, yrow)) in xd.chunks(len).zip(y.chunks_mut(len)).enumerate() {
            let c = i % ch;
            let xh = &mut xhat[i * len..(i + 1) * len];
            for ((v, h), o) in row.iter().zip(xh.iter_mut()).zip(yrow.iter_mut()) {
                *h = (v - mean[c]) * inv_std[c];
                *o = g[c] * *h + bt[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let stats = batch_stats.then(|| BatchStats { mean, var });
        let value = Tensor::new(xs, y)?;
        let v = self.push(value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats }, rg);
        Ok((v, stats))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let y = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| kernels::tanh(v)).collect())
            .expect("same length");
        let rg = self.rg(x);
        self.push(y, Op::Tanh { x }, rg)
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if self.mode != Mode::Training || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
            .collect();
        let t = self.value(x);
        let y = Tensor::new(t.shape().to_vec(), t.data().iter().zip(&mask).map(|(v, m)| v * m).collect())
            .expect("same length");
        let rg = self.rg(x);
        self.push(y, Op::Dropout { x, mask }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let y = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Reshape { x }, rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        Tensor::new(ta.shape().to_vec(), ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let y = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let y = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let y = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x);
        let y = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * factor).collect()).expect("same length");
        let rg = self.rg(x);
        self.push(y, Op::Scale { x, factor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Elementwise map with a caller-supplied derivative rule.
    pub fn unary(&mut self, x: Var, f: UnaryFn) -> Var {
        let t = self.value(x);
        let y = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| (f.value)(*v)).collect()).expect("same length");
        let rg = self.rg(x);
        self.push(y, Op::Unary { x, f }, rg)
    }

    /// `z = mu + exp(0.5·log_var) ⊙ eps`; `eps` is treated as a constant.
    pub fn reparameterize(&mut self, mu: Var, log_var: Var, eps: Vec<f64>) -> Result<Var, AutodiffError> {
        let (tm, tl) = (self.value(mu), self.value(log_var));
        if tm.shape() != tl.shape() || eps.len() != tm.len() {
            return Err(shape_err("reparameterize", tm.shape(), tl.shape()));
        }
        let z = tm
            .data()
            .iter()
            .zip(tl.data())
            .zip(&eps)
            .map(|((m, l), e)| m + (0.5 * l).exp() * e)
            .collect();
        let y = Tensor::new(tm.shape().to_vec(), z)?;
        let rg = self.rg(mu) || self.rg(log_var);
        Ok(self.push(y, Op::Reparameterize { mu, log_var, eps }, rg))
    }

    /// Weighted squared error `Σ coef[i]·(x[i] − target[i])²`.
    ///
    /// `coef` carries per-element weights, so segment MSEs with their own
    /// normalisation and weighting fold into one scalar node.
    pub fn weighted_square_error(&mut self, x: Var, target: &Tensor, coef: Vec<f64>) -> Result<Var, AutodiffError> {
        let tx = self.value(x);
        if tx.shape() != target.shape() || coef.len() != tx.len() {
            return Err(shape_err("weighted_square_error", target.shape(), tx.shape()));
        }
        let s: f64 = tx
            .data()
            .iter()
            .zip(target.data())
            .zip(&coef)
            .map(|((a, b), c)| c * (a - b) * (a - b))
            .sum();
        let rg = self.rg(x);
        let op = Op::SegmentMse { x, target: target.data().to_vec(), coef };
        Ok(self.push(Tensor::scalar(s), op, rg))
    }

    /// KL divergence of `N(mu, exp(log_var))` from `N(0, I)`, summed over
    /// latent dimensions and averaged over the batch (`[batch, dim]` inputs).
    pub fn kl_divergence(&mut self, mu: Var, log_var: Var) -> Result<Var, AutodiffError> {
        let (tm, tl) = (self.value(mu), self.value(log_var));
        if tm.shape() != tl.shape() || tm.shape().len() != 2 {
            return Err(shape_err("kl_divergence", tm.shape(), tl.shape()));
        }
        let batch = tm.shape()[0];
        let s: f64 = tm
            .data()
            .iter()
            .zip(tl.data())
            .map(|(m, l)| -0.5 * (1.0 + l - m * m - l.exp()))
            .sum::<f64>()
            / batch as f64;
        let rg = self.rg(mu) || self.rg(log_var);
        Ok(self.push(Tensor::scalar(s), Op::Kl { mu, log_var, batch }, rg))
    }

    /// `coef · Σ w²`.
    pub fn l2_penalty(&mut self, w: Var, coef: f64) -> Var {
        let s = coef * self.value(w).data().iter().map(|v| v * v).sum::<f64>();
        let rg = self.rg(w);
        self.push(Tensor::scalar(s), Op::L2 { w, coef }, rg)
    }

    /// Gradient of `loss` with respect to every node, indexed by node.
    fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>, AutodiffError> {
        if self.mode != Mode::Training || self.nodes.is_empty() {
            return Err(AutodiffError::NoRecordedForward);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Backpropagates a scalar `loss` and writes parameter gradients into
    /// `store` (parameters not reached get a zero gradient).
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), AutodiffError> {
        let mut grads = self.gradients(loss)?;
        store.zero_grads();
        for (&id, &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                store.get_mut(id).grad.copy_from_slice(&g);
            }
        }
        Ok(())
    }

    /// Gradient of `loss` with respect to an arbitrary node.
    pub fn gradient(&self, loss: Var, wrt: Var) -> Result<Vec<f64>, AutodiffError> {
        let mut grads = self.gradients(loss)?;
        Ok(grads[wrt.0].take().unwrap_or_else(|| vec![0.0; self.value(wrt).len()]))
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        // Accumulates into a parent's gradient buffer.
        fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], v: Var, len: usize) -> &'g mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let len_of = |v: Var| self.nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let ws = self.shape(*w);
                let (out, inp) = (ws[0], ws[1]);
                let batch = self.shape(*x)[0];
                if wants(*x) {
                    let dx = acc(grads, *x, batch * inp);
                    gemm(batch, out, inp, View::rows(g, out), View::rows(val(*w), inp), dx, true);
                }
                if wants(*w) {
                    let dw = acc(grads, *w, out * inp);
                    gemm(out, batch, inp, View::transposed(g, out), View::rows(val(*x), inp), dw, true);
                }
                if wants(*b) {
                    let db = acc(grads, *b, out);
                    for row in g.chunks(out) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                }
            }
            Op::Conv { x, w, b, geom, c_in, c_out, cols } => {
                let width = geom.batch * geom.len_out;
                let k = c_in * geom.kernel;
                let g_cm = to_channel_major(g, geom.batch, *c_out, geom.len_out);
                if wants(*w) {
                    let dw = acc(grads, *w, c_out * k);
                    gemm(*c_out, width, k, View::rows(&g_cm, width), View::transposed(cols, width), dw, true);
                }
                if wants(*b) {
                    let db = acc(grads, *b, *c_out);
                    for (d, row) in db.iter_mut().zip(g_cm.chunks(width)) {
                        *d += row.iter().sum::<f64>();
                    }
                }
                if wants(*x) {
                    let mut dcols = vec![0.0; k * width];
                    gemm(k, *c_out, width, View::transposed(val(*w), k), View::rows(&g_cm, width), &mut dcols, false);
                    let dx = acc(grads, *x, len_of(*x));
                    col2im(&dcols, *c_in, geom, dx);
                }
            }
            Op::ConvTranspose { x, w, b, geom, c_in, c_out, x_cm } => {
                let width = geom.batch * geom.len_out;
                let k = c_out * geom.kernel;
                let dcols = im2col(g, *c_out, geom);
                if wants(*w) {
                    let dw = acc(grads, *w, c_in * k);
                    gemm(*c_in, width, k, View::rows(x_cm, width), View::transposed(&dcols, width), dw, true);
                }
                if wants(*b) {
                    let db = acc(grads, *b, *c_out);
                    for (r, row) in g.chunks(geom.len_in).enumerate() {
                        db[r % c_out] += row.iter().sum::<f64>();
                    }
                }
                if wants(*x) {
                    let mut dx_cm = vec![0.0; c_in * width];
                    gemm(*c_in, k, width, View::rows(val(*w), k), View::rows(&dcols, width), &mut dx_cm, false);
                    let dx = from_channel_major(&dx_cm, geom.batch, *c_in, geom.len_out);
                    acc(grads, *x, dx.len()).iter_mut().zip(&dx).for_each(|(a, d)| *a += d);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, batch_stats } => {
                let (batch, ch, len) = bcl(self.shape(*x)).expect("validated in forward");
                let n = (batch * len) as f64;
                let gam = val(*gamma);
                let mut sum_dy = vec![0.0; ch];
                let mut sum_dy_xhat = vec![0.0; ch];
                for (r, (grow, hrow)) in g.chunks(len).zip(xhat.chunks(len)).enumerate() {
                    let c = r % ch;
                    for (dy, h) in grow.iter().zip(hrow) {
                        sum_dy[c] += dy;
                        sum_dy_xhat[c] += dy * h;
                    }
                }
                if wants(*gamma) {
                    acc(grads, *gamma, ch).iter_mut().zip(&sum_dy_xhat).for_each(|(a, d)| *a += d);
                }
                if wants(*beta) {
                    acc(grads, *beta, ch).iter_mut().zip(&sum_dy).for_each(|(a, d)| *a += d);
                }
                if wants(*x) {
                    let dx = acc(grads, *x, batch * ch * len);
                    for (r, ((grow, hrow), drow)) in g.chunks(len).zip(xhat.chunks(len)).zip(dx.chunks_mut(len)).enumerate() {
                        let c = r % ch;
                        let scale = gam[c] * inv_std[c];
                        if *batch_stats {
                            let (m1, m2) = (sum_dy[c] / n, sum_dy_xhat[c] / n);
                            for ((dy, h), d) in grow.iter().zip(hrow).zip(drow.iter_mut()) {
                                *d += scale * (dy - m1 - h * m2);
                            }
                        } else {
                            for (dy, d) in grow.iter().zip(drow.iter_mut()) {
                                *d += scale * dy;
                            }
                        }
                    }
                }
            }
            Op::Tanh { x } => {
                let y = node.value.data();
                acc(grads, *x, y.len()).iter_mut().zip(g.iter().zip(y)).for_each(|(a, (d, y))| *a += d * (1.0 - y * y));
            }
            Op::Dropout { x, mask } => {
                acc(grads, *x, mask.len()).iter_mut().zip(g.iter().zip(mask)).for_each(|(a, (d, m))| *a += d * m);
            }
            Op::Reshape { x } => {
                acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(a, d)| *a += d);
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if wants(*a) {
                    acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(s, d)| *s += d);
                }
                if wants(*b) {
                    acc(grads, *b, g.len()).iter_mut().zip(g).for_each(|(s, d)| *s += sign * d);
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    let bv = val(*b);
                    acc(grads, *a, g.len()).iter_mut().zip(g.iter().zip(bv)).for_each(|(s, (d, o))| *s += d * o);
                }
                if wants(*b) {
                    let av = val(*a);
                    acc(grads, *b, g.len()).iter_mut().zip(g.iter().zip(av)).for_each(|(s, (d, o))| *s += d * o);
                }
            }
            Op::Scale { x, factor } => {
                acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(s, d)| *s += factor * d);
            }
            Op::Sum { x } => {
                let n = len_of(*x);
                acc(grads, *x, n).iter_mut().for_each(|s| *s += g[0]);
            }
            Op::Unary { x, f } => {
                let xv = val(*x);
                acc(grads, *x, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(xv))
                    .for_each(|(s, (d, v))| *s += d * (f.derivative)(*v));
            }
            Op::Reparameterize { mu, log_var, eps } => {
                if wants(*mu) {
                    acc(grads, *mu, g.len()).iter_mut().zip(g).for_each(|(s, d)| *s += d);
                }
                if wants(*log_var) {
                    let lv = val(*log_var);
                    acc(grads, *log_var, g.len())
                        .iter_mut()
                        .zip(g.iter().zip(lv).zip(eps))
                        .for_each(|(s, ((d, l), e))| *s += d * 0.5 * (0.5 * l).exp() * e);
                }
            }
            Op::SegmentMse { x, target, coef } => {
                let xv = val(*x);
                acc(grads, *x, xv.len())
                    .iter_mut()
                    .zip(xv.iter().zip(target).zip(coef))
                    .for_each(|(s, ((a, t), c))| *s += g[0] * 2.0 * c * (a - t));
            }
            Op::Kl { mu, log_var, batch } => {
                let scale = g[0] / *batch as f64;
                if wants(*mu) {
                    let m = val(*mu);
                    acc(grads, *mu, m.len()).iter_mut().zip(m).for_each(|(s, v)| *s += scale * v);
                }
                if wants(*log_var) {
                    let l = val(*log_var);
                    acc(grads, *log_var, l.len())
                        .iter_mut()
                        .zip(l)
                        .for_each(|(s, v)| *s += scale * -0.5 * (1.0 - v.exp()));
                }
            }
            Op::L2 { w, coef } => {
                let wv = val(*w);
                acc(grads, *w, wv.len()).iter_mut().zip(wv).for_each(|(s, v)| *s += g[0] * 2.0 * coef * v);
            }
        }
    }
}
