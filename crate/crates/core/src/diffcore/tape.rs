//! Reverse-mode automatic differentiation over a linear record of ops.

use crate::scalar::Scalar;

use super::kernels;
use super::tensor::{gemm_into, Tensor};
use super::DiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Linear {
        w: Var,
        x: Var,
        b: Var,
    },
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    SliceRows(Var, usize),
    SelectCols(Var, Vec<usize>),
    GatedTanh(Var),
    ConcatRows(Vec<Var>),
    CausalConv {
        x: Var,
        w: Var,
        dilation: usize,
    },
    Embedding {
        table: Var,
        codes: Vec<usize>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor<T>,
    },
    SqError(Var, Var),
    KlStdNormal {
        mean: Var,
        log_var: Var,
    },
    Sum(Var),
    Mean(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::AddRowBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::SliceRows(..) => "slice_rows",
            Op::SelectCols(..) => "select_cols",
            Op::GatedTanh(..) => "gated_tanh",
            Op::ConcatRows(..) => "concat_rows",
            Op::CausalConv { .. } => "causal_conv",
            Op::Embedding { .. } => "embedding",
            Op::SoftmaxXent { .. } => "softmax_cross_entropy",
            Op::SqError(..) => "gaussian_nll",
            Op::KlStdNormal { .. } => "kl_std_normal",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Computation record: every executed primitive in topological order.
///
/// Values are computed eagerly when an op is recorded. The first op to
/// produce a non-finite value poisons the tape; [`Tape::backward`] then
/// reports it by name.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<DiffError>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`]. Only
/// leaves (parameters and constants) keep their gradients.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to leaf `v`; zeros when `v` does
    /// not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Moves the gradients for `vars` out, in order.
    pub fn take_all(mut self, vars: &[Var]) -> Vec<Tensor<T>> {
        vars.iter()
            .map(|&v| {
                self.grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
            })
            .collect()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// First non-finite fault recorded, if any.
    pub fn fault(&self) -> Option<&DiffError> {
        self.fault.as_ref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        if self.fault.is_none() && !value.all_finite() {
            self.fault = Some(DiffError::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
            });
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant by backward (data, recorded noise).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = super::tensor::matmul(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// Adds `b` (one value per row) to every column of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        assert_eq!(self.value(x).rows(), self.value(b).len(), "bias length");
        let v = kernels::add_row_bias(self.value(x), self.value(b));
        let ng = self.ng(x) || self.ng(b);
        self.push(v, Op::AddRowBias(x, b), ng)
    }

    /// Dense layer / 1×1 convolution: `w · x + b`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Var {
        assert_eq!(self.value(w).rows(), self.value(b).len(), "bias length");
        let v = kernels::linear(self.value(w), self.value(x), self.value(b));
        let ng = self.ng(w) || self.ng(x) || self.ng(b);
        self.push(v, Op::Linear { w, x, b }, ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "elementwise shape mismatch in {}",
            op.name()
        );
        let v = self.value(a).zip_map(self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(v, op, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_rows(start, end);
        let ng = self.ng(a);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    /// Gathers the listed columns of a 2-D tensor, in order.
    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let t = self.value(a);
        let (rows, n) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows * cols.len());
        for r in 0..rows {
            let row = &t.data()[r * n..(r + 1) * n];
            data.extend(cols.iter().map(|&c| row[c]));
        }
        let ng = self.ng(a);
        self.push(
            Tensor::matrix(rows, cols.len(), data),
            Op::SelectCols(a, cols.to_vec()),
            ng,
        )
    }

    /// Gated activation on a `[2R × T]` tensor:
    /// `tanh(a[..R]) ⊙ sigmoid(a[R..])`, giving `[R × T]`.
    pub fn gated_tanh(&mut self, a: Var) -> Var {
        let v = kernels::gated_tanh(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::GatedTanh(a), ng)
    }

    /// Stacks 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows column mismatch");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Kernel-width-2 dilated causal convolution, see [`kernels::causal_conv`].
    pub fn causal_conv(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var, DiffError> {
        if dilation < 1 {
            return Err(DiffError::InvalidArgument("dilation must be ≥ 1".into()));
        }
        let ws = self.value(w).shape();
        if ws.len() != 3 || ws[2] != 2 {
            return Err(DiffError::Shape(format!(
                "causal conv weights must be [out × in × 2], got {ws:?}"
            )));
        }
        if ws[1] != self.value(x).rows() {
            return Err(DiffError::Shape(format!(
                "causal conv expects {} input channels, got {}",
                ws[1],
                self.value(x).rows()
            )));
        }
        let v = kernels::causal_conv(self.value(x), self.value(w), dilation);
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(v, Op::CausalConv { x, w, dilation }, ng))
    }

    /// Column lookup: output column `t` is column `codes[t]` of `table`.
    pub fn embedding(&mut self, table: Var, codes: &[usize]) -> Var {
        let tab = self.value(table);
        let (c, levels) = (tab.rows(), tab.cols());
        let t = codes.len();
        let mut out = vec![T::zero(); c * t];
        for r in 0..c {
            let row = &tab.data()[r * levels..(r + 1) * levels];
            for (j, &code) in codes.iter().enumerate() {
                out[r * t + j] = row[code];
            }
        }
        let ng = self.ng(table);
        self.push(
            Tensor::matrix(c, t, out),
            Op::Embedding {
                table,
                codes: codes.to_vec(),
            },
            ng,
        )
    }

    /// Mean cross-entropy between column-wise softmax of `logits` and targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        assert_eq!(l.cols(), targets.len(), "one target per column");
        let lsm = kernels::log_softmax_columns(l);
        let t = l.cols();
        let total: T = targets.iter().enumerate().map(|(c, &k)| -lsm.data()[k * t + c]).sum();
        let value = Tensor::scalar(total / T::of(t as f64));
        let probs = lsm.map(|v| v.exp());
        let ng = self.ng(logits);
        self.push(
            value,
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Unit-variance Gaussian negative log-likelihood without constants:
    /// `0.5 · Σ (a − b)²`.
    pub fn gaussian_nll(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let s: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::scalar(T::of(0.5) * s), Op::SqError(a, b), ng)
    }

    /// `Σ 0.5 (μ² + σ² − 1 − log σ²)`: KL divergence of a diagonal Gaussian
    /// from the standard normal, summed over all entries.
    pub fn kl_std_normal(&mut self, mean: Var, log_var: Var) -> Var {
        assert_eq!(self.value(mean).shape(), self.value(log_var).shape());
        let half = T::of(0.5);
        let s: T = self
            .value(mean)
            .data()
            .iter()
            .zip(self.value(log_var).data())
            .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
            .sum();
        let ng = self.ng(mean) || self.ng(log_var);
        self.push(Tensor::scalar(s), Op::KlStdNormal { mean, log_var }, ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / T::of(t.len() as f64);
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Single reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, DiffError> {
        if let Some(f) = &self.fault {
            return Err(f.clone());
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(DiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if !g.all_finite() {
                return Err(DiffError::NonFinite {
                    op: node.op.name(),
                    node: i,
                });
            }
            self.propagate(i, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Returns a mutable accumulator for `v`, creating zeros if absent.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut Tensor<T> {
        let shape = self.nodes[v.0].value.shape();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.ng(a) {
                    let beta = if grads[a.0].is_some() { T::one() } else { T::zero() };
                    let slot = self.slot(grads, a);
                    gemm_into(slot, g, false, self.value(b), true, beta);
                }
                if self.ng(b) {
                    let beta = if grads[b.0].is_some() { T::one() } else { T::zero() };
                    let slot = self.slot(grads, b);
                    gemm_into(slot, self.value(a), true, g, false, beta);
                }
            }
            &Op::Linear { w, x, b } => {
                if self.ng(w) {
                    let beta = if grads[w.0].is_some() { T::one() } else { T::zero() };
                    let slot = self.slot(grads, w);
                    gemm_into(slot, g, false, self.value(x), true, beta);
                }
                if self.ng(x) {
                    let beta = if grads[x.0].is_some() { T::one() } else { T::zero() };
                    let slot = self.slot(grads, x);
                    gemm_into(slot, self.value(w), true, g, false, beta);
                }
                if self.ng(b) {
                    let cols = g.cols();
                    let db: Vec<T> = g.data().chunks(cols).map(|row| row.iter().copied().sum()).collect();
                    let shape = self.value(b).shape().to_vec();
                    self.accumulate(grads, b, Tensor::new(shape, db).expect("bias shape"));
                }
            }
            &Op::AddRowBias(x, b) => {
                if self.ng(b) {
                    let cols = g.cols();
                    let db: Vec<T> = g.data().chunks(cols).map(|row| row.iter().copied().sum()).collect();
                    let shape = self.value(b).shape().to_vec();
                    self.accumulate(grads, b, Tensor::new(shape, db).expect("bias shape"));
                }
                self.accumulate(grads, x, g.clone());
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                if self.ng(a) {
                    self.accumulate(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                }
                if self.ng(b) {
                    self.accumulate(grads, b, g.zip_map(self.value(a), |x, y| x * y));
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.map(|v| v * s)),
            &Op::Tanh(a) => {
                self.accumulate(grads, a, g.zip_map(out, |gv, y| gv * (T::one() - y * y)));
            }
            &Op::Sigmoid(a) => {
                self.accumulate(grads, a, g.zip_map(out, |gv, y| gv * y * (T::one() - y)));
            }
            &Op::Relu(a) => {
                self.accumulate(
                    grads,
                    a,
                    g.zip_map(self.value(a), |gv, x| if x > T::zero() { gv } else { T::zero() }),
                );
            }
            &Op::Exp(a) => self.accumulate(grads, a, g.zip_map(out, |gv, y| gv * y)),
            &Op::SliceRows(a, start) => {
                if self.ng(a) {
                    let cols = g.cols();
                    let slot = self.slot(grads, a);
                    let dst = &mut slot.data_mut()[start * cols..start * cols + g.len()];
                    for (d, &s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
            }
            Op::SelectCols(a, cols) => {
                let a = *a;
                if self.ng(a) {
                    let n = self.value(a).cols();
                    let k = cols.len();
                    let slot = self.slot(grads, a);
                    let d = slot.data_mut();
                    for (r, grow) in g.data().chunks(k).enumerate() {
                        for (j, &c) in cols.iter().enumerate() {
                            d[r * n + c] += grow[j];
                        }
                    }
                }
            }
            &Op::GatedTanh(a) => {
                if self.ng(a) {
                    let x = self.value(a);
                    let (rows, t) = (g.rows(), g.cols());
                    let mut d = vec![T::zero(); 2 * rows * t];
                    let (dt, ds) = d.split_at_mut(rows * t);
                    let (xt, xs) = x.data().split_at(rows * t);
                    for i in 0..rows * t {
                        let th = xt[i].tanh();
                        let sg = kernels::sigmoid(xs[i]);
                        dt[i] = g.data()[i] * sg * (T::one() - th * th);
                        ds[i] = g.data()[i] * th * sg * (T::one() - sg);
                    }
                    self.accumulate(grads, a, Tensor::matrix(2 * rows, t, d));
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut row = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.ng(p) {
                        let piece = Tensor::matrix(rows, cols, g.data()[row * cols..(row + rows) * cols].to_vec());
                        self.accumulate(grads, p, piece);
                    }
                    row += rows;
                }
            }
            &Op::CausalConv { x, w, dilation } => {
                let mut dx = self.ng(x).then(|| Tensor::zeros(self.value(x).shape()));
                let mut dw = self.ng(w).then(|| Tensor::zeros(self.value(w).shape()));
                kernels::causal_conv_backward(self.value(x), self.value(w), dilation, g, dx.as_mut(), dw.as_mut());
                if let Some(dx) = dx {
                    self.accumulate(grads, x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, w, dw);
                }
            }
            Op::Embedding { table, codes } => {
                let table = *table;
                if self.ng(table) {
                    let levels = self.value(table).cols();
                    let t = codes.len();
                    let slot = self.slot(grads, table);
                    let d = slot.data_mut();
                    for (r, grow) in g.data().chunks(t).enumerate() {
                        for (j, &code) in codes.iter().enumerate() {
                            d[r * levels + code] += grow[j];
                        }
                    }
                }
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                let gs = g.item() / T::of(targets.len() as f64);
                let t = targets.len();
                let mut d = probs.clone();
                {
                    let dd = d.data_mut();
                    for (c, &k) in targets.iter().enumerate() {
                        dd[k * t + c] -= T::one();
                    }
                    for v in dd.iter_mut() {
                        *v *= gs;
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            &Op::SqError(a, b) => {
                let gs = g.item();
                let diff = self.value(a).zip_map(self.value(b), |x, y| (x - y) * gs);
                if self.ng(b) {
                    self.accumulate(grads, b, diff.map(|v| -v));
                }
                self.accumulate(grads, a, diff);
            }
            &Op::KlStdNormal { mean, log_var } => {
                let gs = g.item();
                let half = T::of(0.5);
                self.accumulate(grads, mean, self.value(mean).map(|m| m * gs));
                self.accumulate(
                    grads,
                    log_var,
                    self.value(log_var).map(|lv| half * (lv.exp() - T::one()) * gs),
                );
            }
            &Op::Sum(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(grads, a, Tensor::full(&shape, g.item()));
            }
            &Op::Mean(a) => {
                let t = self.value(a);
                let v = g.item() / T::of(t.len() as f64);
                let shape = t.shape().to_vec();
                self.accumulate(grads, a, Tensor::full(&shape, v));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.scale(c, 2.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let y = tape.tanh(x);
        assert!(matches!(tape.backward(y), Err(DiffError::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_names_the_op() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1000.0));
        let y = tape.exp(x);
        let z = tape.sum(y);
        match tape.backward(z) {
            Err(DiffError::NonFinite { op, .. }) => assert_eq!(op, "exp"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn conv_rejects_bad_arguments() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 5]));
        let w = tape.param(Tensor::zeros(&[3, 2, 2]));
        assert!(tape.causal_conv(x, w, 0).is_err());
        let w_bad = tape.param(Tensor::zeros(&[3, 4, 2]));
        assert!(tape.causal_conv(x, w_bad, 1).is_err());
    }
}
