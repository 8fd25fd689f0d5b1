use super::{Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Shift(usize),
    Scale(usize, T),
    OneMinus(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    Concat(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    Embedding {
        table: usize,
        ids: Vec<Option<usize>>,
    },
    BatchNorm {
        x: usize,
        scale: usize,
        shift: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    PickCols {
        x: usize,
        idx: Vec<usize>,
    },
    SumAll(usize),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only tape of forward values. Node order is a topological order,
/// so the backward sweep is a single reverse pass.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

fn dims2(t: &Tensor<impl Real>) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: &'static str, shape: Vec<usize>, data: Vec<T>, kind: Op<T>) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let requires_grad = match &kind {
            Op::Leaf => false,
            Op::Linear { x, w, b } => {
                self.rg(*x) || self.rg(*w) || b.map(|b| self.rg(b)).unwrap_or(false)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => self.rg(*a) || self.rg(*b),
            Op::Shift(a)
            | Op::Scale(a, _)
            | Op::OneMinus(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::SumAll(a) => self.rg(*a),
            Op::SliceCols { x, .. } | Op::PickCols { x, .. } => self.rg(*x),
            Op::Concat(xs) => xs.iter().any(|&x| self.rg(x)),
            Op::Embedding { table, .. } => self.rg(*table),
            Op::BatchNorm { x, scale, shift, .. } => {
                self.rg(*x) || self.rg(*scale) || self.rg(*shift)
            }
        };
        let value = Tensor {
            shape,
            data,
            grad: None,
            requires_grad,
        };
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Result<Var> {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            grad: None,
            requires_grad,
        };
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.leaf(t, true)
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, t: &Tensor<T>) -> Result<Var> {
        self.leaf(t, false)
    }

    pub fn constant_owned(&mut self, t: Tensor<T>) -> Result<Var> {
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value: Tensor {
                requires_grad: false,
                grad: None,
                ..t
            },
            op: Op::Leaf,
            requires_grad: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Copies the current value into a new constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.nodes[v.0].value.clone();
        self.constant_owned(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if any path exists.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn mismatch(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: a.shape.clone(),
            right: b.shape.clone(),
        }
    }

    /// `x · w (+ b)` with `x: B x I`, `w: I x O`, `b: O`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xt = self.value(x);
        let wt = self.value(w);
        let (rows, inner) = dims2(xt);
        if wt.shape.len() != 2 || wt.shape[0] != inner {
            return Err(Self::mismatch("linear", xt, wt));
        }
        let out = wt.shape[1];
        let mut data = vec![T::zero(); rows * out];
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.len() != out {
                return Err(Self::mismatch("linear(bias)", wt, bt));
            }
            for r in 0..rows {
                data[r * out..(r + 1) * out].copy_from_slice(&bt.data);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(rows, inner, out, &xt.data, false, &wt.data, false, beta, &mut data);
        self.push(
            "linear",
            vec![rows, out],
            data,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
            },
        )
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        let at = self.value(a);
        let bt = self.value(b);
        if at.shape != bt.shape {
            return Err(Self::mismatch(op, at, bt));
        }
        let data = at.data.iter().zip(&bt.data).map(|(&x, &y)| f(x, y)).collect();
        Ok((at.shape.clone(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", s, d, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", s, d, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (s, d) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", s, d, Op::Mul(a.0, b.0))
    }

    /// `a + c` for a constant tensor `c`; the gradient passes straight through.
    pub fn shift(&mut self, a: Var, c: &Tensor<T>) -> Result<Var> {
        let at = self.value(a);
        if at.shape != c.shape {
            return Err(Self::mismatch("shift", at, c));
        }
        let data = at.data.iter().zip(&c.data).map(|(&x, &y)| x + y).collect();
        let shape = at.shape.clone();
        self.push("shift", shape, data, Op::Shift(a.0))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let at = self.value(a);
        let data = at.data.iter().map(|&x| x * s).collect();
        let shape = at.shape.clone();
        self.push("scale", shape, data, Op::Scale(a.0, s))
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.unary("one_minus", a, |x| T::one() - x, Op::OneMinus(a.0))
    }

    fn unary(&mut self, op: &'static str, a: Var, f: impl Fn(T) -> T, kind: Op<T>) -> Result<Var> {
        let at = self.value(a);
        let data = at.data.iter().map(|&x| f(x)).collect();
        let shape = at.shape.clone();
        self.push(op, shape, data, kind)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, logistic, Op::Sigmoid(a.0))
    }

    /// Row-wise softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let at = self.value(a);
        let (rows, cols) = dims2(at);
        let mut data = at.data.clone();
        for r in 0..rows {
            softmax_in_place(&mut data[r * cols..(r + 1) * cols]);
        }
        let shape = at.shape.clone();
        self.push("softmax", shape, data, Op::Softmax(a.0))
    }

    /// Concatenates 2-D values with equal row counts along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(Self::mismatch("concat", self.value(*first), self.value(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        self.push(
            "concat",
            vec![rows, cols],
            data,
            Op::Concat(parts.iter().map(|p| p.0).collect()),
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = dims2(xt);
        if start + len > cols || len == 0 {
            return Err(TensorError::Invalid(format!(
                "slice_cols: [{start}, {}) outside {cols} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xt.row(r)[start..start + len]);
        }
        self.push("slice_cols", vec![rows, len], data, Op::SliceCols { x: x.0, start })
    }

    /// Looks up one table row per id; `None` yields a zero row.
    pub fn embedding(&mut self, table: Var, ids: &[Option<usize>]) -> Result<Var> {
        let tt = self.value(table);
        let (n, width) = dims2(tt);
        let mut data = vec![T::zero(); ids.len() * width];
        for (r, id) in ids.iter().enumerate() {
            if let Some(id) = *id {
                if id >= n {
                    return Err(TensorError::Invalid(format!(
                        "embedding: id {id} outside table of {n} rows"
                    )));
                }
                data[r * width..(r + 1) * width].copy_from_slice(tt.row(id));
            }
        }
        self.push(
            "embedding",
            vec![ids.len(), width],
            data,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
        )
    }

    /// Training-mode batch normalization. Returns the output and the batch
    /// mean and (biased) variance per feature.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let xt = self.value(x);
        let (rows, cols) = dims2(xt);
        if rows < 2 {
            return Err(TensorError::Invalid(format!(
                "batch_norm: training mode needs a batch of at least 2, got {rows}"
            )));
        }
        self.check_affine_params("batch_norm", x, scale, shift)?;
        let xt = self.value(x);
        let n = T::from_f64(rows as f64);
        let mut mean = vec![T::zero(); cols];
        let mut var = vec![T::zero(); cols];
        for r in 0..rows {
            for (m, &v) in mean.iter_mut().zip(xt.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / n);
        for r in 0..rows {
            for ((s, &v), &m) in var.iter_mut().zip(xt.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s = *s / n);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = self.bn_apply(x, scale, shift, &mean, &inv_std, true)?;
        Ok((out, mean, var))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        self.check_affine_params("batch_norm", x, scale, shift)?;
        if mean.len() != self.value(x).cols() || var.len() != mean.len() {
            return Err(TensorError::Invalid("batch_norm: statistics width".into()));
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(x, scale, shift, mean, &inv_std, false)
    }

    fn check_affine_params(&self, op: &'static str, x: Var, scale: Var, shift: Var) -> Result<()> {
        let cols = self.value(x).cols();
        for p in [scale, shift] {
            if self.value(p).len() != cols {
                return Err(Self::mismatch(op, self.value(x), self.value(p)));
            }
        }
        Ok(())
    }

    fn bn_apply(&mut self, x: Var, scale: Var, shift: Var, mean: &[T], inv_std: &[T], train: bool) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = dims2(xt);
        let g = &self.value(scale).data;
        let b = &self.value(shift).data;
        let mut xhat = vec![T::zero(); rows * cols];
        let mut data = vec![T::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                xhat[i] = (xt.data[i] - mean[c]) * inv_std[c];
                data[i] = g[c] * xhat[i] + b[c];
            }
        }
        let shape = xt.shape.clone();
        self.push(
            "batch_norm",
            shape,
            data,
            Op::BatchNorm {
                x: x.0,
                scale: scale.0,
                shift: shift.0,
                xhat,
                inv_std: inv_std.to_vec(),
                train,
            },
        )
    }

    /// Picks column `idx[r]` from each row `r`, giving a `B x 1` result.
    pub fn pick_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xt = self.value(x);
        let (rows, cols) = dims2(xt);
        if idx.len() != rows || idx.iter().any(|&i| i >= cols) {
            return Err(TensorError::Invalid(format!(
                "pick_cols: {} indices for a {rows} x {cols} value",
                idx.len()
            )));
        }
        let data = idx.iter().enumerate().map(|(r, &i)| xt.data[r * cols + i]).collect();
        self.push("pick_cols", vec![rows, 1], data, Op::PickCols { x: x.0, idx: idx.to_vec() })
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data.iter().copied().sum();
        self.push("sum_all", vec![1], vec![s], Op::SumAll(x.0))
    }

    /// Reverse sweep from a scalar. Gradients accumulate across every use
    /// of a node; nodes without a path from `loss` get none.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let gy = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, i: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let rg = |j: usize| nodes[j].requires_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xt = &nodes[*x].value;
                let wt = &nodes[*w].value;
                let (rows, inner) = dims2(xt);
                let outw = wt.shape[1];
                if rg(*x) {
                    let buf = buffer(grads, *x, rows * inner);
                    T::gemm(rows, outw, inner, gy, false, &wt.data, true, T::one(), buf);
                }
                if rg(*w) {
                    let buf = buffer(grads, *w, inner * outw);
                    T::gemm(inner, rows, outw, &xt.data, true, gy, false, T::one(), buf);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let buf = buffer(grads, *b, outw);
                        for r in 0..rows {
                            for (acc, &g) in buf.iter_mut().zip(&gy[r * outw..(r + 1) * outw]) {
                                *acc += g;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for j in [*a, *b] {
                    if rg(j) {
                        accumulate(grads, j, gy.iter().copied());
                    }
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, gy.iter().copied());
                }
                if rg(*b) {
                    accumulate(grads, *b, gy.iter().map(|&g| -g));
                }
            }
            Op::Mul(a, b) => {
                let av = &nodes[*a].value.data;
                let bv = &nodes[*b].value.data;
                if rg(*a) {
                    accumulate(grads, *a, gy.iter().zip(bv).map(|(&g, &y)| g * y));
                }
                if rg(*b) {
                    accumulate(grads, *b, gy.iter().zip(av).map(|(&g, &x)| g * x));
                }
            }
            Op::Shift(a) => accumulate(grads, *a, gy.iter().copied()),
            Op::Scale(a, s) => accumulate(grads, *a, gy.iter().map(|&g| g * *s)),
            Op::OneMinus(a) => accumulate(grads, *a, gy.iter().map(|&g| -g)),
            Op::Relu(a) => accumulate(
                grads,
                *a,
                gy.iter()
                    .zip(&out.data)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() }),
            ),
            Op::Tanh(a) => accumulate(
                grads,
                *a,
                gy.iter().zip(&out.data).map(|(&g, &y)| g * (T::one() - y * y)),
            ),
            Op::Sigmoid(a) => accumulate(
                grads,
                *a,
                gy.iter().zip(&out.data).map(|(&g, &y)| g * y * (T::one() - y)),
            ),
            Op::Softmax(a) => {
                let (rows, cols) = dims2(out);
                let mut gx = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    let y = &out.data[r * cols..(r + 1) * cols];
                    let g = &gy[r * cols..(r + 1) * cols];
                    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    for c in 0..cols {
                        gx[r * cols + c] = y[c] * (g[c] - dot);
                    }
                }
                accumulate(grads, *a, gx.into_iter());
            }
            Op::Concat(parts) => {
                let (rows, cols) = dims2(out);
                let mut offset = 0;
                for &p in parts {
                    let pc = nodes[p].value.cols();
                    if rg(p) {
                        let buf = buffer(grads, p, rows * pc);
                        for r in 0..rows {
                            for c in 0..pc {
                                buf[r * pc + c] += gy[r * cols + offset + c];
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, len) = dims2(out);
                let cols = nodes[*x].value.cols();
                let buf = buffer(grads, *x, rows * cols);
                for r in 0..rows {
                    for c in 0..len {
                        buf[r * cols + start + c] += gy[r * len + c];
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let tv = &nodes[*table].value;
                let width = tv.cols();
                let buf = buffer(grads, *table, tv.len());
                for (r, id) in ids.iter().enumerate() {
                    if let Some(id) = *id {
                        for c in 0..width {
                            buf[id * width + c] += gy[r * width + c];
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat,
                inv_std,
                train,
            } => {
                let (rows, cols) = dims2(out);
                let gamma = &nodes[*scale].value.data;
                if rg(*scale) {
                    let buf = buffer(grads, *scale, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[c] += gy[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                }
                if rg(*shift) {
                    let buf = buffer(grads, *shift, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            buf[c] += gy[r * cols + c];
                        }
                    }
                }
                if rg(*x) {
                    let mut gx = vec![T::zero(); rows * cols];
                    if *train {
                        let n = T::from_f64(rows as f64);
                        for c in 0..cols {
                            let mut sum_d = T::zero();
                            let mut sum_dx = T::zero();
                            for r in 0..rows {
                                let d = gy[r * cols + c] * gamma[c];
                                sum_d += d;
                                sum_dx += d * xhat[r * cols + c];
                            }
                            for r in 0..rows {
                                let d = gy[r * cols + c] * gamma[c];
                                gx[r * cols + c] =
                                    inv_std[c] * (d - sum_d / n - xhat[r * cols + c] * sum_dx / n);
                            }
                        }
                    } else {
                        for r in 0..rows {
                            for c in 0..cols {
                                gx[r * cols + c] = gy[r * cols + c] * gamma[c] * inv_std[c];
                            }
                        }
                    }
                    accumulate(grads, *x, gx.into_iter());
                }
            }
            Op::PickCols { x, idx } => {
                let cols = nodes[*x].value.cols();
                let buf = buffer(grads, *x, nodes[*x].value.len());
                for (r, &c) in idx.iter().enumerate() {
                    buf[r * cols + c] += gy[r];
                }
            }
            Op::SumAll(x) => {
                let g = gy[0];
                accumulate(grads, *x, std::iter::repeat_n(g, nodes[*x].value.len()));
            }
        }
    }
}

fn buffer<T: Real>(grads: &mut [Option<Vec<T>>], j: usize, len: usize) -> &mut Vec<T> {
    grads[j].get_or_insert_with(|| vec![T::zero(); len])
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], j: usize, g: impl Iterator<Item = T>) {
    match &mut grads[j] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.collect()),
    }
}

pub(crate) fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let a = g.constant(&t(&[1, 2], &[0.0, 0.0])).unwrap();
        let s = g.softmax(a).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let b = g.constant(&t(&[1, 2], &[1000.0, 1000.0])).unwrap();
        let s = g.softmax(b).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn zero_weight_affine_returns_bias() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[1, 3], &[4.0, -7.0, 2.5])).unwrap();
        let w = g.param(&Tensor::zeros(vec![3, 2])).unwrap();
        let b = g.param(&t(&[2], &[1.0, 2.0])).unwrap();
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(&t(&[1, 2], &[1.0, 2.0])).unwrap();
        let b = g.constant(&t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let err = g.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[1, 2]") && msg.contains("[1, 3]"), "{msg}");
        let w = g.param(&Tensor::zeros(vec![4, 2])).unwrap();
        assert!(g.linear(a, w, None).is_err());
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut g = Graph::new();
        let a = g.constant(&t(&[1, 1], &[1e300])).unwrap();
        let b = g.constant(&t(&[1, 1], &[1e300])).unwrap();
        assert!(matches!(g.mul(a, b), Err(TensorError::NonFinite { op: "mul" })));
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        // loss = sum(x W): dL/dW[i][j] = x[i]
        let mut g = Graph::new();
        let x = g.constant(&t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let w = g.param(&Tensor::filled(vec![3, 2], 0.3)).unwrap();
        let y = g.linear(x, w, None).unwrap();
        let l = g.sum_all(y).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn reused_value_accumulates_gradients() {
        for k in 2..=3 {
            let mut g = Graph::new();
            let p = g.param(&t(&[1, 2], &[0.5, -1.5])).unwrap();
            let c = g.constant(&t(&[1, 2], &[2.0, 3.0])).unwrap();
            let mut acc = g.mul(p, c).unwrap();
            for _ in 1..k {
                let m = g.mul(p, c).unwrap();
                acc = g.add(acc, m).unwrap();
            }
            let l = g.sum_all(acc).unwrap();
            g.backward(l).unwrap();
            let kk = k as f64;
            assert_eq!(g.grad(p).unwrap(), &[2.0 * kk, 3.0 * kk]);
        }
    }

    #[test]
    fn unreachable_params_get_no_gradient() {
        let mut g = Graph::new();
        let p = g.param(&t(&[1, 1], &[1.0])).unwrap();
        let q = g.param(&t(&[1, 1], &[2.0])).unwrap();
        let l = g.sum_all(p).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[1.0]);
        assert!(g.grad(q).is_none());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let p = g.param(&t(&[1, 2], &[1.0, 2.0])).unwrap();
        assert!(g.backward(p).is_err());
    }

    #[test]
    fn batch_norm_two_point_symmetry() {
        let mut g = Graph::new();
        let x = g.constant(&t(&[2, 1], &[1.0, 3.0])).unwrap();
        let s = g.param(&t(&[1], &[1.0])).unwrap();
        let b = g.param(&t(&[1], &[0.0])).unwrap();
        let (y, mean, var) = g.batch_norm_train(x, s, b, 1e-5).unwrap();
        assert_eq!(mean, vec![2.0]);
        assert_eq!(var, vec![1.0]);
        let out = g.value(y).data();
        assert!((out[0] + 1.0).abs() < 1e-5 && (out[1] - 1.0).abs() < 1e-5);

        let one = g.constant(&t(&[1, 1], &[1.0])).unwrap();
        assert!(g.batch_norm_train(one, s, b, 1e-5).is_err());
    }
}
