//! Parameter storage and the layers the agents are assembled from.

use rand::Rng;

use super::{Graph, Real, Result, Tensor, TensorError, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Buffers such as running statistics are stored but not optimized.
    pub trainable: bool,
}

/// Owned, named tensors for one model. Cloning is a deep copy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

/// Graph handles for the trainable entries of one store.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("buffers are not bound to the graph")
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> ParamId {
        let tensor = tensor.with_requires_grad(trainable);
        self.entries.push(Entry {
            name: name.into(),
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Records every trainable tensor on `g` as a parameter leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Result<Bound> {
        let vars = self
            .entries
            .iter()
            .map(|e| if e.trainable { g.param(&e.tensor).map(Some) } else { Ok(None) })
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Records every trainable tensor on `g` as a constant (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> Result<Bound> {
        let vars = self
            .entries
            .iter()
            .map(|e| if e.trainable { g.constant(&e.tensor).map(Some) } else { Ok(None) })
            .collect::<Result<_>>()?;
        Ok(Bound { vars })
    }

    /// Copies gradients from `g` into each trainable tensor's grad slot
    /// (zeros where no path reached it).
    pub fn absorb_grads(&mut self, g: &Graph<T>, bound: &Bound) -> Result<()> {
        for (e, v) in self.entries.iter_mut().zip(&bound.vars) {
            if let Some(v) = v {
                let grad = g
                    .grad(*v)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![T::zero(); e.tensor.len()]);
                e.tensor.set_grad(grad)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| Entry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    /// Overwrites values (not grads) from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(TensorError::Invalid("parameter layouts differ".into()));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.tensor.shape() != b.tensor.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "copy_values_from",
                    left: a.tensor.shape().to_vec(),
                    right: b.tensor.shape().to_vec(),
                });
            }
            a.tensor.data_mut().copy_from_slice(b.tensor.data());
        }
        Ok(())
    }
}

pub fn uniform<T: Real>(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        if bound == 0.0 {
            T::zero()
        } else {
            T::from_f64(rng.random_range(-bound..bound))
        }
    })
}

/// Fully connected layer, weights stored `in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Uniform in +-sqrt(1/fan_in) for both weights and bias.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = (1.0 / inputs as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(vec![inputs, outputs], bound, rng), true);
        let bias = store.add(format!("{name}.bias"), uniform(vec![outputs], bound, rng), true);
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, x: Var) -> Result<Var> {
        g.linear(x, bound.var(self.weight), Some(bound.var(self.bias)))
    }
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-feature batch normalization with running statistics.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
}

/// Running-statistic update produced by a training-mode pass.
#[derive(Debug, Clone)]
pub struct StatUpdate<T> {
    layer: BatchNorm,
    mean: Vec<T>,
    var: Vec<T>,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, features: usize) -> Self {
        Self {
            scale: store.add(format!("{name}.scale"), Tensor::filled(vec![features], T::one()), true),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(vec![features]), true),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros(vec![features]), false),
            running_var: store.add(format!("{name}.running_var"), Tensor::filled(vec![features], T::one()), false),
            momentum: BN_MOMENTUM,
        }
    }

    /// Training mode normalizes by batch statistics and returns the
    /// running-statistic update for the caller to apply (or drop, for a
    /// frozen copy). Eval mode uses running statistics only.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        bound: &Bound,
        x: Var,
        train: bool,
    ) -> Result<(Var, Option<StatUpdate<T>>)> {
        let eps = T::from_f64(BN_EPS);
        let (scale, shift) = (bound.var(self.scale), bound.var(self.shift));
        if train {
            let (y, mean, var) = g.batch_norm_train(x, scale, shift, eps)?;
            Ok((y, Some(StatUpdate { layer: *self, mean, var })))
        } else {
            let y = g.batch_norm_eval(
                x,
                scale,
                shift,
                store.get(self.running_mean).data(),
                store.get(self.running_var).data(),
                eps,
            )?;
            Ok((y, None))
        }
    }
}

impl<T: Real> StatUpdate<T> {
    /// `running <- (1 - momentum) * running + momentum * batch`
    pub fn apply(&self, store: &mut ParamStore<T>) {
        let m = T::from_f64(self.layer.momentum);
        let keep = T::one() - m;
        for (r, &b) in store.get_mut(self.layer.running_mean).data_mut().iter_mut().zip(&self.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in store.get_mut(self.layer.running_var).data_mut().iter_mut().zip(&self.var) {
            *r = keep * *r + m * b;
        }
    }
}

/// Gated recurrent unit.
///
/// `z = σ(x Wz + h Uz + bz)`, `r = σ(x Wr + h Ur + br)`,
/// `n = tanh(x Wn + (r ⊙ h) Un + bn)`, `h' = (1 - z) ⊙ h + z ⊙ n`.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    /// `in x 3H`, column blocks ordered z, r, n
    pub w_input: ParamId,
    /// `H x 2H`, column blocks z, r
    pub u_gates: ParamId,
    /// `H x H`
    pub u_candidate: ParamId,
    /// `3H`
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bi = (1.0 / inputs as f64).sqrt();
        let bh = (1.0 / hidden as f64).sqrt();
        Self {
            w_input: store.add(format!("{name}.w_input"), uniform(vec![inputs, 3 * hidden], bi, rng), true),
            u_gates: store.add(format!("{name}.u_gates"), uniform(vec![hidden, 2 * hidden], bh, rng), true),
            u_candidate: store.add(format!("{name}.u_candidate"), uniform(vec![hidden, hidden], bh, rng), true),
            bias: store.add(format!("{name}.bias"), uniform(vec![3 * hidden], bi, rng), true),
            inputs,
            hidden,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, bound: &Bound, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        if g.value(x).cols() != self.inputs || g.value(h).cols() != hd {
            return Err(TensorError::ShapeMismatch {
                op: "gru_cell",
                left: g.value(x).shape().to_vec(),
                right: g.value(h).shape().to_vec(),
            });
        }
        let xw = g.linear(x, bound.var(self.w_input), Some(bound.var(self.bias)))?;
        let hu = g.linear(h, bound.var(self.u_gates), None)?;
        let xz = g.slice_cols(xw, 0, hd)?;
        let xr = g.slice_cols(xw, hd, hd)?;
        let xn = g.slice_cols(xw, 2 * hd, hd)?;
        let hz = g.slice_cols(hu, 0, hd)?;
        let hr = g.slice_cols(hu, hd, hd)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let rh = g.mul(r, h)?;
        let rhu = g.linear(rh, bound.var(self.u_candidate), None)?;
        let n = g.add(xn, rhu)?;
        let n = g.tanh(n)?;
        // h + z ⊙ (n - h)
        let diff = g.sub(n, h)?;
        let step = g.mul(z, diff)?;
        g.add(h, step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::SplitMix64;

    fn zero_store(store: &mut ParamStore<f64>) {
        for e in store.entries_mut() {
            e.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_gru_halves_state() {
        let mut rng = SplitMix64::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let cell = GruCell::new(&mut store, "gru", 3, 2, &mut rng);
        zero_store(&mut store);
        let mut g = Graph::new();
        let b = store.bind(&mut g).unwrap();
        let x = g.constant(&Tensor::matrix(1, 3, vec![0.3, -2.0, 9.0]).unwrap()).unwrap();
        let h = g.constant(&Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
        let out = cell.forward(&mut g, &b, x, h).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, -0.5]);
        let h0 = g.constant(&Tensor::zeros(vec![1, 2])).unwrap();
        let out = cell.forward(&mut g, &b, x, h0).unwrap();
        assert_eq!(g.value(out).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gru_rejects_wrong_widths() {
        let mut rng = SplitMix64::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let cell = GruCell::new(&mut store, "gru", 3, 2, &mut rng);
        let mut g = Graph::new();
        let b = store.bind(&mut g).unwrap();
        let x = g.constant(&Tensor::zeros(vec![1, 4])).unwrap();
        let h = g.constant(&Tensor::zeros(vec![1, 2])).unwrap();
        assert!(cell.forward(&mut g, &b, x, h).is_err());
    }

    #[test]
    fn eval_batch_norm_with_unit_stats_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 3);
        let mut g = Graph::new();
        let b = store.bind(&mut g).unwrap();
        let data = vec![0.25, -3.0, 7.5, 1.0, 2.0, -0.125];
        let x = g.constant(&Tensor::matrix(2, 3, data.clone()).unwrap()).unwrap();
        let (y, upd) = bn.forward(&mut g, &store, &b, x, false).unwrap();
        assert!(upd.is_none());
        for (a, e) in g.value(y).data().iter().zip(&data) {
            assert!((a - e).abs() <= 1e-5 * e.abs().max(1.0));
        }
    }

    #[test]
    fn running_stats_converge_to_batch_normalization() {
        // iterate the update rule on a constant stream; eval output should
        // approach the training-mode output
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 2);
        let data = Tensor::matrix(4, 2, vec![1.0, 10.0, 2.0, 20.0, 4.0, 30.0, 5.0, 60.0]).unwrap();
        let mut train_out = Vec::new();
        for _ in 0..1000 {
            let mut g = Graph::new();
            let b = store.bind(&mut g).unwrap();
            let x = g.constant(&data).unwrap();
            let (y, upd) = bn.forward(&mut g, &store, &b, x, true).unwrap();
            train_out = g.value(y).data().to_vec();
            upd.unwrap().apply(&mut store);
        }
        let mut g = Graph::new();
        let b = store.bind(&mut g).unwrap();
        let x = g.constant(&data).unwrap();
        let (y, _) = bn.forward(&mut g, &store, &b, x, false).unwrap();
        for (e, t) in g.value(y).data().iter().zip(&train_out) {
            assert!((e - t).abs() < 1e-9, "{e} vs {t}");
        }
        assert!(store.get(bn.running_var).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn clone_is_deep() {
        let mut rng = SplitMix64::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        Linear::new(&mut store, "l", 2, 2, &mut rng);
        let copy = store.clone();
        for (a, b) in store.entries().iter().zip(copy.entries()) {
            assert_ne!(a.tensor.data().as_ptr(), b.tensor.data().as_ptr());
        }
    }
}
