use super::nn::ParamStore;
use super::{Real, Result, TensorError};

pub const RMSPROP_DECAY: f64 = 0.9;
pub const RMSPROP_EPS: f64 = 1e-8;

/// RMSProp with one squared-gradient accumulator per trainable tensor.
///
/// `acc <- ρ acc + (1 - ρ) g²`, `θ <- θ - α g / sqrt(acc + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    accumulators: Vec<Vec<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(store: &ParamStore<T>, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            decay: RMSPROP_DECAY,
            eps: RMSPROP_EPS,
            accumulators: store
                .entries()
                .iter()
                .map(|e| if e.trainable { vec![T::zero(); e.tensor.len()] } else { Vec::new() })
                .collect(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<T>] {
        &self.accumulators
    }

    pub fn accumulators_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.accumulators
    }

    /// Applies one update from the grad slots of `store`. Tensors without a
    /// gradient are skipped. A non-finite gradient aborts before anything
    /// is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.accumulators.len() != store.len() {
            return Err(TensorError::Invalid("optimizer state does not match the model".into()));
        }
        for e in store.entries() {
            if let Some(g) = e.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::Invalid(format!(
                        "non-finite gradient in parameter {}",
                        e.name
                    )));
                }
            }
        }
        let rho = T::from_f64(self.decay);
        let one_minus_rho = T::one() - rho;
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.eps);
        for (e, acc) in store.entries_mut().iter_mut().zip(&mut self.accumulators) {
            if !e.trainable {
                continue;
            }
            let Some(g) = e.tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            for ((theta, a), gi) in e.tensor.data_mut().iter_mut().zip(acc.iter_mut()).zip(g) {
                *a = rho * *a + one_minus_rho * gi * gi;
                let delta = lr * gi / (*a + eps).sqrt();
                if delta != T::zero() {
                    *theta = *theta - delta;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(theta: f64, acc: f64, lr: f64) -> (ParamStore<f64>, RmsProp<f64>) {
        let mut store = ParamStore::new();
        store.add("theta", Tensor::new(vec![1], vec![theta]).unwrap(), true);
        let mut opt = RmsProp::new(&store, lr);
        opt.accumulators_mut()[0][0] = acc;
        (store, opt)
    }

    #[test]
    fn zero_gradient_keeps_parameters_and_decays_accumulator() {
        let (mut store, mut opt) = single(0.123456789, 0.5, 0.1);
        let before = store.clone();
        store.entries_mut()[0].tensor.set_grad(vec![0.0]).unwrap();
        opt.step(&mut store).unwrap();
        assert_eq!(
            store.entries()[0].tensor.data()[0].to_bits(),
            before.entries()[0].tensor.data()[0].to_bits()
        );
        assert!((opt.accumulators()[0][0] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn single_step_matches_formula() {
        // acc = 0.9*0 + 0.1*4 = 0.4; theta = -0.1 * 2 / sqrt(0.4 + 1e-8)
        let (mut store, mut opt) = single(0.0, 0.0, 0.1);
        store.entries_mut()[0].tensor.set_grad(vec![2.0]).unwrap();
        opt.step(&mut store).unwrap();
        assert!((opt.accumulators()[0][0] - 0.4).abs() < 1e-15);
        let expected = -0.2 / (0.4f64 + 1e-8).sqrt();
        assert!((store.entries()[0].tensor.data()[0] - expected).abs() < 1e-15);
        assert!((expected + 0.31623).abs() < 1e-5);
    }

    #[test]
    fn repeated_gradient_step_tends_to_learning_rate() {
        let (mut store, mut opt) = single(0.0, 0.0, 0.01);
        let mut last = 0.0;
        for _ in 0..400 {
            let before = store.entries()[0].tensor.data()[0];
            store.entries_mut()[0].tensor.set_grad(vec![-3.0]).unwrap();
            opt.step(&mut store).unwrap();
            last = store.entries()[0].tensor.data()[0] - before;
        }
        assert!((last - 0.01).abs() < 1e-9, "{last}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut store, mut opt) = single(1.0, 0.0, 0.1);
        store.entries_mut()[0].tensor.set_grad(vec![f64::INFINITY]).unwrap_or(());
        // set_grad does not validate finiteness; the optimizer must
        let err = opt.step(&mut store).unwrap_err().to_string();
        assert!(err.contains("theta"), "{err}");
        assert_eq!(store.entries()[0].tensor.data()[0], 1.0);
    }
}
