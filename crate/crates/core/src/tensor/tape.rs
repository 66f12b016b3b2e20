use super::{softmax_rows, Activation, Result, Tensor, TensorError, LAYER_NORM_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, used to prove the gradient checker
/// notices broken derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardFault {
    /// Sigmoid backward drops the `(1 - y)` factor.
    Sigmoid,
    /// Layer-norm backward ignores the variance term.
    LayerNorm,
}

/// Branch choices of the nonsmooth ops, in recording order.
#[derive(Debug, Clone, PartialEq)]
pub enum Branch {
    /// `x > 0` per entry of a piecewise-linear activation.
    Sign(Vec<bool>),
    /// Winning row per column of `max_rows`.
    Argmax(Vec<usize>),
}

#[derive(Debug, Clone, Default)]
enum Pins {
    #[default]
    Off,
    Record(Vec<Branch>),
    Replay(Vec<Branch>, usize),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    AddConst(Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Activation(Var, Activation),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    OuterSum(Var, Var),
    Element(Var, usize, usize),
    MaxRows(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    BinaryCrossEntropy {
        probs: Var,
        label: f64,
        clipped: bool,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records differentiable operations for one forward pass.
///
/// A tape belongs to a single thread; build one per example per step.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<BackwardFault>,
    pins: Pins,
}

pub const PROB_CLIP: f64 = 1e-12;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Option<BackwardFault>) -> Self {
        Self {
            nodes: Vec::new(),
            fault,
            pins: Pins::Off,
        }
    }

    /// Starts logging the branch taken by every kinked op.
    pub fn record_branches(&mut self) {
        self.pins = Pins::Record(Vec::new());
    }

    /// Forces later kinked ops to take the given branches, in order. Only
    /// values are meaningful on such a tape.
    pub fn replay_branches(&mut self, branches: Vec<Branch>) {
        self.pins = Pins::Replay(branches, 0);
    }

    pub fn take_branches(&mut self) -> Vec<Branch> {
        match std::mem::take(&mut self.pins) {
            Pins::Record(b) | Pins::Replay(b, _) => b,
            Pins::Off => Vec::new(),
        }
    }

    fn branch(&mut self, observed: impl FnOnce() -> Branch) -> Branch {
        match &mut self.pins {
            Pins::Off => observed(),
            Pins::Record(log) => {
                let b = observed();
                log.push(b.clone());
                b
            }
            Pins::Replay(log, at) => {
                let b = log.get(*at).cloned().expect("replay log shorter than forward pass");
                *at += 1;
                b
            }
        }
    }

    #[doc(hidden)]
    pub fn set_fault(&mut self, fault: Option<BackwardFault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Tensor::zeros(value.rows(), value.cols()));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Resets every accumulated gradient to zero.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            lhs: self.value(a).shape(),
            rhs: self.value(b).shape(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", a, b));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a `1×c` row vector to every row of an `r×c` tensor.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.value(a).shape();
        if self.value(row).shape() != (1, c) {
            return Err(self.shape_err("add_row", a, row));
        }
        let b = self.value(row).data().to_vec();
        let va = self.value(a);
        let value = Tensor::from_fn(r, c, |i, j| va.get(i, j) + b[j]);
        let rg = self.needs(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Adds an `r×1` column vector to every column of an `r×c` tensor.
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (r, c) = self.value(a).shape();
        if self.value(col).shape() != (r, 1) {
            return Err(self.shape_err("add_col", a, col));
        }
        let b = self.value(col).data().to_vec();
        let va = self.value(a);
        let value = Tensor::from_fn(r, c, |i, j| va.get(i, j) + b[i]);
        let rg = self.needs(&[a, col]);
        Ok(self.push(value, Op::AddCol(a, col), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant tensor (e.g. a support mask).
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(TensorError::Shape {
                op: "mul_const",
                lhs: self.value(a).shape(),
                rhs: c.shape(),
            });
        }
        let value = self.value(a).zip_map(c, |x, y| x * y);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::MulConst(a, c.clone()), rg))
    }

    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.value(a).shape() != c.shape() {
            return Err(TensorError::Shape {
                op: "add_const",
                lhs: self.value(a).shape(),
                rhs: c.shape(),
            });
        }
        let value = self.value(a).zip_map(c, |x, y| x + y);
        let rg = self.needs(&[a]);
        Ok(self.push(value, Op::AddConst(a), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.needs(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    /// Multiplies every entry of `a` by the `1×1` value `s`.
    pub fn scale_by(&mut self, s: Var, a: Var) -> Result<Var> {
        if self.value(s).shape() != (1, 1) {
            return Err(self.shape_err("scale_by", s, a));
        }
        let c = self.value(s).item();
        let value = self.value(a).map(|x| x * c);
        let rg = self.needs(&[s, a]);
        Ok(self.push(value, Op::ScaleBy(s, a), rg))
    }

    pub fn activation(&mut self, a: Var, f: Activation) -> Var {
        let value = match f {
            Activation::Sigmoid => self.value(a).map(|x| f.apply(x)),
            Activation::Relu | Activation::LeakyRelu(_) => {
                let slope = if let Activation::LeakyRelu(s) = f { s } else { 0.0 };
                let av = self.value(a);
                let pos = av.data().iter().map(|&x| x > 0.0).collect();
                let Branch::Sign(pos) = self.branch(|| Branch::Sign(pos)) else {
                    panic!("branch log out of step");
                };
                let av = self.value(a);
                let data = av.data().iter().zip(&pos).map(|(&x, &p)| if p { x } else { slope * x }).collect();
                Tensor::new(av.rows(), av.cols(), data).expect("same shape")
            }
        };
        let rg = self.needs(&[a]);
        self.push(value, Op::Activation(a, f), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.activation(a, Activation::LeakyRelu(slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// Row-wise softmax of `x + bias`. With a mask, entries where the mask
    /// is zero get probability exactly zero.
    pub fn softmax_rows(
        &mut self,
        x: Var,
        bias: Option<&Tensor>,
        mask: Option<&Tensor>,
    ) -> Result<Var> {
        let value = softmax_rows(self.value(x), bias, mask)?;
        let rg = self.needs(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Per-row layer normalization with a `1×d` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let (n, d) = self.value(x).shape();
        for p in [gain, shift] {
            if self.value(p).shape() != (1, d) {
                return Err(self.shape_err("layer_norm", x, p));
            }
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(shift).data();
        let mut xhat = Tensor::zeros(n, d);
        let mut out = Tensor::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat.set(i, j, h);
                out.set(i, j, h * g[j] + b[j]);
            }
        }
        let rg = self.needs(&[x, gain, shift]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(self.shape_err("concat_cols", parts[0], p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(rows, total, data)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let value = self.value(a).slice_cols(start, width);
        let rg = self.needs(&[a]);
        self.push(value, Op::SliceCols(a, start), rg)
    }

    /// `out[i][j] = u[i] + v[j]` for column vectors `u` and `v`.
    pub fn outer_sum(&mut self, u: Var, v: Var) -> Result<Var> {
        let (n, one) = self.value(u).shape();
        let (m, one_b) = self.value(v).shape();
        if one != 1 || one_b != 1 {
            return Err(self.shape_err("outer_sum", u, v));
        }
        let uv = self.value(u).data();
        let vv = self.value(v).data();
        let value = Tensor::from_fn(n, m, |i, j| uv[i] + vv[j]);
        let rg = self.needs(&[u, v]);
        Ok(self.push(value, Op::OuterSum(u, v), rg))
    }

    /// A single entry as a `1×1` tensor.
    pub fn element(&mut self, a: Var, r: usize, c: usize) -> Var {
        let value = Tensor::scalar(self.value(a).get(r, c));
        let rg = self.needs(&[a]);
        self.push(value, Op::Element(a, r, c), rg)
    }

    /// Coordinatewise maximum over rows, giving a `1×d` tensor. Ties go to
    /// the earliest row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (n, d) = av.shape();
        let mut arg = vec![0usize; d];
        let mut best = av.row(0).to_vec();
        for i in 1..n {
            for j in 0..d {
                if av.get(i, j) > best[j] {
                    best[j] = av.get(i, j);
                    arg[j] = i;
                }
            }
        }
        let Branch::Argmax(arg) = self.branch(|| Branch::Argmax(arg)) else {
            panic!("branch log out of step");
        };
        let best: Vec<f64> = arg.iter().enumerate().map(|(j, &i)| self.value(a).get(i, j)).collect();
        let rg = self.needs(&[a]);
        self.push(Tensor::row_vector(&best), Op::MaxRows(a, arg), rg)
    }

    /// Looks up rows of a table (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        let d = tv.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(tv.row(i));
        }
        let value = Tensor::new(indices.len(), d, data).expect("gather shape");
        let rg = self.needs(&[table]);
        self.push(value, Op::GatherRows(table, indices.to_vec()), rg)
    }

    /// Two-class cross-entropy on the fake-class probability `probs[0][1]`,
    /// clipped to `[1e-12, 1 - 1e-12]` before the logarithm.
    pub fn binary_cross_entropy(&mut self, probs: Var, label: f64) -> Result<Var> {
        let pv = self.value(probs);
        if pv.shape() != (1, 2) {
            return Err(TensorError::Shape {
                op: "binary_cross_entropy",
                lhs: pv.shape(),
                rhs: (1, 2),
            });
        }
        let raw = pv.get(0, 1);
        let p = raw.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        let clipped = p != raw;
        let loss = -label * p.ln() - (1.0 - label) * (1.0 - p).ln();
        let rg = self.needs(&[probs]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BinaryCrossEntropy {
                probs,
                label,
                clipped,
            },
            rg,
        ))
    }

    /// Back-propagates from `loss`, seeding its gradient with ones, and
    /// accumulates into every trainable leaf. Calling it twice without
    /// [`Tape::zero_grad`] doubles the accumulated gradients.
    pub fn backward(&mut self, loss: Var) {
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let lv = &self.nodes[loss.0].value;
        grads[loss.0] = Some(Tensor::filled(lv.rows(), lv.cols(), 1.0));

        for idx in (0..n).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                if let Some(acc) = self.nodes[idx].grad.as_mut() {
                    acc.add_assign(&g);
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let out = &nodes[idx].value;
        let mut send = |v: Var, contrib: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match grads[v.0].as_mut() {
                Some(acc) => acc.add_assign(&contrib),
                None => grads[v.0] = Some(contrib),
            }
        };
        let needs = |v: Var| nodes[v.0].requires_grad;
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if needs(a) {
                    send(a, g.matmul(&nodes[b.0].value.transpose()).unwrap());
                }
                if needs(b) {
                    send(b, nodes[a.0].value.transpose().matmul(g).unwrap());
                }
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if needs(a) {
                    send(a, g.clone());
                }
                if needs(b) {
                    send(b, g.clone());
                }
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                if needs(row) {
                    let (r, c) = g.shape();
                    let mut s = vec![0.0; c];
                    for i in 0..r {
                        for (j, sj) in s.iter_mut().enumerate() {
                            *sj += g.get(i, j);
                        }
                    }
                    send(row, Tensor::row_vector(&s));
                }
                if needs(a) {
                    send(a, g.clone());
                }
            }
            Op::AddCol(a, col) => {
                let (a, col) = (*a, *col);
                if needs(col) {
                    let s: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                    send(col, Tensor::column_vector(&s));
                }
                if needs(a) {
                    send(a, g.clone());
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if needs(a) {
                    send(a, g.zip_map(&nodes[b.0].value, |x, y| x * y));
                }
                if needs(b) {
                    send(b, g.zip_map(&nodes[a.0].value, |x, y| x * y));
                }
            }
            Op::MulConst(a, c) => send(*a, g.zip_map(c, |x, y| x * y)),
            Op::AddConst(a) => send(*a, g.clone()),
            Op::Scale(a, c) => {
                let c = *c;
                send(*a, g.map(|x| x * c));
            }
            Op::ScaleBy(s, a) => {
                let (s, a) = (*s, *a);
                if needs(s) {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(nodes[a.0].value.data())
                        .map(|(x, y)| x * y)
                        .sum();
                    send(s, Tensor::scalar(dot));
                }
                if needs(a) {
                    let c = nodes[s.0].value.item();
                    send(a, g.map(|x| x * c));
                }
            }
            Op::Activation(a, f) => {
                let input = &nodes[a.0].value;
                let f = *f;
                let fault = self.fault == Some(BackwardFault::Sigmoid) && f == Activation::Sigmoid;
                let mut dx = Tensor::zeros(g.rows(), g.cols());
                for (k, d) in dx.data_mut().iter_mut().enumerate() {
                    let (x, y) = (input.data()[k], out.data()[k]);
                    let deriv = if fault { y } else { f.derivative(x, y) };
                    *d = g.data()[k] * deriv;
                }
                send(*a, dx);
            }
            Op::Softmax(x) => {
                let (r, c) = out.shape();
                let mut dx = Tensor::zeros(r, c);
                for i in 0..r {
                    let dot: f64 = (0..c).map(|j| g.get(i, j) * out.get(i, j)).sum();
                    for j in 0..c {
                        dx.set(i, j, out.get(i, j) * (g.get(i, j) - dot));
                    }
                }
                send(*x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                shift,
                xhat,
                inv_std,
            } => {
                let (n, d) = g.shape();
                let gv = nodes[gain.0].value.data();
                if needs(*gain) {
                    let mut dg = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            dg[j] += g.get(i, j) * xhat.get(i, j);
                        }
                    }
                    send(*gain, Tensor::row_vector(&dg));
                }
                if needs(*shift) {
                    let mut ds = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            ds[j] += g.get(i, j);
                        }
                    }
                    send(*shift, Tensor::row_vector(&ds));
                }
                if needs(*x) {
                    let fault = self.fault == Some(BackwardFault::LayerNorm);
                    let mut dx = Tensor::zeros(n, d);
                    let df = d as f64;
                    for i in 0..n {
                        let dxhat: Vec<f64> = (0..d).map(|j| g.get(i, j) * gv[j]).collect();
                        let sum: f64 = dxhat.iter().sum();
                        let dot: f64 = (0..d).map(|j| dxhat[j] * xhat.get(i, j)).sum();
                        for j in 0..d {
                            let var_term = if fault { 0.0 } else { xhat.get(i, j) * dot };
                            dx.set(i, j, inv_std[i] / df * (df * dxhat[j] - sum - var_term));
                        }
                    }
                    send(*x, dx);
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    if needs(p) {
                        send(p, g.slice_cols(start, w));
                    }
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = nodes[a.0].value.shape();
                let mut dx = Tensor::zeros(r, c);
                for i in 0..r {
                    for j in 0..g.cols() {
                        dx.set(i, start + j, g.get(i, j));
                    }
                }
                send(*a, dx);
            }
            Op::OuterSum(u, v) => {
                let (u, v) = (*u, *v);
                if needs(u) {
                    let s: Vec<f64> = (0..g.rows()).map(|i| g.row(i).iter().sum()).collect();
                    send(u, Tensor::column_vector(&s));
                }
                if needs(v) {
                    let mut s = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for (j, sj) in s.iter_mut().enumerate() {
                            *sj += g.get(i, j);
                        }
                    }
                    send(v, Tensor::column_vector(&s));
                }
            }
            Op::Element(a, r, c) => {
                let (rows, cols) = nodes[a.0].value.shape();
                let mut dx = Tensor::zeros(rows, cols);
                dx.set(*r, *c, g.item());
                send(*a, dx);
            }
            Op::MaxRows(a, arg) => {
                let (rows, cols) = nodes[a.0].value.shape();
                let mut dx = Tensor::zeros(rows, cols);
                for (j, &i) in arg.iter().enumerate() {
                    dx.set(i, j, g.get(0, j));
                }
                send(*a, dx);
            }
            Op::GatherRows(table, indices) => {
                let (rows, cols) = nodes[table.0].value.shape();
                let mut dx = Tensor::zeros(rows, cols);
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..cols {
                        let v = dx.get(i, j) + g.get(k, j);
                        dx.set(i, j, v);
                    }
                }
                send(*table, dx);
            }
            Op::BinaryCrossEntropy {
                probs,
                label,
                clipped,
            } => {
                let mut dx = Tensor::zeros(1, 2);
                if !clipped {
                    let p = nodes[probs.0].value.get(0, 1);
                    dx.set(0, 1, g.item() * (-label / p + (1.0 - label) / (1.0 - p)));
                }
                send(*probs, dx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y);
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn replay_doubles_and_clear_zeroes() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]));
        let x = tape.constant(Tensor::column_vector(&[1.0, 3.0]));
        let y = tape.matmul(w, x).unwrap();
        let s = tape.sigmoid(y);
        let t = tape.transpose(s);
        let loss = tape.matmul(t, s).unwrap();
        tape.backward(loss);
        let once = tape.grad(w).unwrap().clone();
        tape.backward(loss);
        let twice = tape.grad(w).unwrap().clone();
        assert_eq!(twice, once.map(|v| v * 2.0));
        tape.zero_grad();
        assert!(tape.grad(w).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn constants_do_not_require_grad() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(2.0));
        let b = tape.scale(a, 3.0);
        assert!(!tape.requires_grad(b));
        assert_eq!(tape.value(b).item(), 6.0);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let gain = tape.constant(Tensor::filled(1, 3, 1.0));
        let shift = tape.constant(Tensor::zeros(1, 3));
        let x = tape.constant(Tensor::filled(1, 3, 4.2));
        let y = tape.layer_norm(x, gain, shift).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let gain = tape.constant(Tensor::filled(1, 2, 1.0));
        let shift = tape.constant(Tensor::zeros(1, 2));
        let x = tape.constant(Tensor::row_vector(&[1.0, -1.0]));
        let y = tape.layer_norm(x, gain, shift).unwrap();
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((tape.value(y).get(0, 0) - expected).abs() < 1e-15);
        assert!((tape.value(y).get(0, 1) + expected).abs() < 1e-15);

        let zero_gain = tape.constant(Tensor::zeros(1, 2));
        let shift = tape.constant(Tensor::row_vector(&[0.3, -0.7]));
        let y = tape.layer_norm(x, zero_gain, shift).unwrap();
        assert_eq!(tape.value(y).data(), &[0.3, -0.7]);
    }

    #[test]
    fn bce_clips_and_matches_closed_form() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::row_vector(&[0.5, 0.5]));
        let l = tape.binary_cross_entropy(p, 1.0).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-15);
        let sure = tape.param(Tensor::row_vector(&[0.0, 1.0]));
        let l = tape.binary_cross_entropy(sure, 1.0).unwrap();
        assert!(tape.value(l).item() < 1e-11);
        assert!(tape.value(l).item().is_finite());
        let wrong = tape.param(Tensor::row_vector(&[1.0, 0.0]));
        let l = tape.binary_cross_entropy(wrong, 1.0).unwrap();
        assert!((tape.value(l).item() - (-(1e-12f64).ln())).abs() < 1e-9);
    }

    #[test]
    fn max_rows_routes_gradient_to_argmax() {
        let mut tape = Tape::new();
        let e = tape.param(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.0, 5.0]]));
        let m = tape.max_rows(e);
        assert_eq!(tape.value(m).data(), &[1.0, 5.0]);
        let ones = tape.constant(Tensor::column_vector(&[1.0, 1.0]));
        let s = tape.matmul(m, ones).unwrap();
        tape.backward(s);
        assert_eq!(tape.grad(e).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn replayed_branches_override_the_observed_ones() {
        let mut rec = Tape::new();
        rec.record_branches();
        let x = rec.constant(Tensor::from_rows(&[vec![0.5, -1.0], vec![2.0, 3.0]]));
        rec.leaky_relu(x, 0.1);
        rec.max_rows(x);
        let log = rec.take_branches();
        assert_eq!(
            log,
            [Branch::Sign(vec![true, false, true, true]), Branch::Argmax(vec![1, 1])]
        );

        let mut rep = Tape::new();
        rep.replay_branches(log);
        let y = rep.constant(Tensor::from_rows(&[vec![-0.5, 1.0], vec![4.0, -3.0]]));
        let a = rep.leaky_relu(y, 0.1);
        let m = rep.max_rows(y);
        assert_eq!(rep.value(a).data(), &[-0.5, 0.1, 4.0, -3.0]);
        assert_eq!(rep.value(m).data(), &[4.0, -3.0]);
    }
}
