//! Finite-difference verification of analytic gradients (64-bit only).

use super::nn::{Bound, ParamStore};
use super::{Graph, Result, Var};

pub const FD_STEP: f64 = 1e-5;

/// Absolute floor on the relative-error denominator, so gradients that are
/// zero up to rounding do not report spurious errors.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GroupError {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub groups: Vec<GroupError>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }

    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward-pass gradients of `loss` with central differences.
///
/// `loss` must build a deterministic scalar from the bound stores (one
/// [`Bound`] per entry of `stores`, same order). At most `max_coords`
/// entries per tensor are probed, spread evenly. Groups are named
/// `label/param` (or just `param` for an empty label).
pub fn gradcheck<F>(stores: &[(&str, &ParamStore<f64>)], max_coords: usize, mut loss: F) -> Result<GradReport>
where
    F: FnMut(&mut Graph<f64>, &[Bound]) -> Result<Var>,
{
    let bind_all = |g: &mut Graph<f64>, stores: &[ParamStore<f64>]| -> Result<Vec<Bound>> {
        stores.iter().map(|s| s.bind(g)).collect()
    };
    let mut probe: Vec<ParamStore<f64>> = stores.iter().map(|(_, s)| (*s).clone()).collect();

    let mut g = Graph::new();
    let bound = bind_all(&mut g, &probe)?;
    let l = loss(&mut g, &bound)?;
    g.backward(l)?;
    let mut analytic = probe.clone();
    for (a, b) in analytic.iter_mut().zip(&bound) {
        a.absorb_grads(&g, b)?;
    }

    let mut eval = |probe: &[ParamStore<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let b = bind_all(&mut g, probe)?;
        let l = loss(&mut g, &b)?;
        Ok(g.value(l).data()[0])
    };

    let mut groups = Vec::new();
    for (si, (label, store)) in stores.iter().enumerate() {
        for (idx, entry) in store.entries().iter().enumerate() {
            if !entry.trainable {
                continue;
            }
            let n = entry.tensor.len();
            let stride = n.div_ceil(max_coords.max(1)).max(1);
            let grads = analytic[si].entries()[idx].tensor.grad().unwrap_or(&[]).to_vec();
            let mut report = GroupError {
                name: if label.is_empty() {
                    entry.name.clone()
                } else {
                    format!("{label}/{}", entry.name)
                },
                checked: 0,
                max_rel_error: 0.0,
                max_abs_grad: 0.0,
            };
            for i in (0..n).step_by(stride) {
                let orig = entry.tensor.data()[i];
                probe[si].entries_mut()[idx].tensor.data_mut()[i] = orig + FD_STEP;
                let up = eval(&probe)?;
                probe[si].entries_mut()[idx].tensor.data_mut()[i] = orig - FD_STEP;
                let down = eval(&probe)?;
                probe[si].entries_mut()[idx].tensor.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * FD_STEP);
                let a = grads.get(i).copied().unwrap_or(0.0);
                report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
                report.max_abs_grad = report.max_abs_grad.max(a.abs());
                report.checked += 1;
            }
            groups.push(report);
        }
    }
    Ok(GradReport { groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::nn::{GruCell, Linear};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn random(rows: usize, cols: usize, rng: &mut SplitMix64) -> Tensor<f64> {
        Tensor::from_fn(vec![rows, cols], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn affine_layer_is_exact() {
        let mut rng = SplitMix64::seed_from_u64(11);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "affine", 4, 3, &mut rng);
        let x = random(5, 4, &mut rng);
        let c = random(5, 3, &mut rng);
        let report = gradcheck(&[("", &store)], 64, |g, bs| {
            let b = &bs[0];
            let xv = g.constant(&x)?;
            let y = lin.forward(g, b, xv)?;
            let cv = g.constant(&c)?;
            let y = g.mul(y, cv)?;
            g.sum_all(y)
        })
        .unwrap();
        assert!(report.passes(1e-8), "{report:?}");
    }

    #[test]
    fn two_layer_gru_unrolled_three_steps() {
        let mut rng = SplitMix64::seed_from_u64(5);
        let mut store = ParamStore::new();
        let l1 = GruCell::new(&mut store, "gru1", 3, 4, &mut rng);
        let l2 = GruCell::new(&mut store, "gru2", 4, 4, &mut rng);
        let xs: Vec<_> = (0..3).map(|_| random(2, 3, &mut rng)).collect();
        let c = random(2, 4, &mut rng);
        let report = gradcheck(&[("", &store)], 64, |g, bs| {
            let b = &bs[0];
            let mut h1 = g.constant(&Tensor::zeros(vec![2, 4]))?;
            let mut h2 = h1;
            for x in &xs {
                let xv = g.constant(x)?;
                h1 = l1.forward(g, b, xv, h1)?;
                h2 = l2.forward(g, b, h1, h2)?;
            }
            let cv = g.constant(&c)?;
            let y = g.mul(h2, cv)?;
            g.sum_all(y)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn single_gru_cell() {
        let mut rng = SplitMix64::seed_from_u64(9);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "gru", 3, 3, &mut rng);
        let x = random(1, 3, &mut rng);
        let h = random(1, 3, &mut rng);
        let report = gradcheck(&[("", &store)], 64, |g, bs| {
            let b = &bs[0];
            let xv = g.constant(&x)?;
            let hv = g.constant(&h)?;
            let y = cell.forward(g, b, xv, hv)?;
            let y = g.mul(y, y)?;
            g.sum_all(y)
        })
        .unwrap();
        assert!(report.passes(1e-5), "{report:?}");
    }
}
