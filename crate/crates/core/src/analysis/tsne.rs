use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AnalysisError, DistanceMatrix, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Log the objective every this many iterations.
    pub log_every: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 5.0,
            iterations: 1000,
            learning_rate: 100.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 4.0,
            exaggeration_iters: 100,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<[f64; 2]>,
    /// KL(P || Q) at the random start.
    pub initial_kl: f64,
    pub final_kl: f64,
    /// `(iteration, KL)` pairs, un-exaggerated.
    pub kl_trace: Vec<(usize, f64)>,
    /// Rows whose distance ties made the target perplexity unreachable.
    pub saturated_rows: usize,
}

impl Embedding2D {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,x,y\n");
        for (i, p) in self.points.iter().enumerate() {
            s.push_str(&format!("{i},{},{}\n", p[0], p[1]));
        }
        s
    }
}

const PERPLEXITY_TOL: f64 = 1e-4;
const MAX_BISECTIONS: usize = 200;

/// Conditional row `p_{j|i}` at precision `beta` on squared distances, plus
/// its perplexity.
fn row_at(d2: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = d2
        .iter()
        .enumerate()
        .map(|(j, &v)| if j == i { 0.0 } else { (-beta * (v - min)).exp() })
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
    (p, h.exp())
}

/// Symmetrized affinities `P = (P_cond + P_condᵀ) / 2N`, with each row's
/// bandwidth bisected to the target perplexity. Also returns how many rows
/// could not reach it (they use the sharpest attainable row).
pub fn joint_probabilities(d: &DistanceMatrix, perplexity: f64) -> Result<(Vec<f64>, usize)> {
    let n = d.len();
    if n < 4 {
        return Err(AnalysisError::Shape(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(perplexity > 1.0 && perplexity <= (n - 1) as f64) {
        return Err(AnalysisError::Perplexity { perplexity, points: n });
    }
    let mut cond = vec![0.0; n * n];
    let mut saturated = 0;
    for i in 0..n {
        let d2: Vec<f64> = (0..n).map(|j| d.get(i, j).powi(2)).collect();
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut best = row_at(&d2, i, beta);
        let mut reached = false;
        for _ in 0..MAX_BISECTIONS {
            let diff = best.1 - perplexity;
            if diff.abs() < PERPLEXITY_TOL {
                reached = true;
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            best = row_at(&d2, i, beta);
        }
        if !reached {
            saturated += 1;
        }
        cond[i * n..(i + 1) * n].copy_from_slice(&best.0);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }
    Ok((p, saturated))
}

fn student_q(y: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                z += v;
            }
        }
    }
    let q = num.iter().map(|v| (v / z).max(1e-12)).collect();
    (num, q)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a / b).ln()).sum()
}

/// Exact t-SNE into the plane.
pub fn tsne_embed(d: &DistanceMatrix, params: TsneParams, rng: &mut impl Rng) -> Result<Embedding2D> {
    let (p, saturated_rows) = joint_probabilities(d, params.perplexity)?;
    let n = d.len();
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(rng), init.sample(rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let initial_kl = kl(&p, &student_q(&y).1);
    let mut kl_trace = vec![(0, initial_kl)];

    for it in 0..params.iterations {
        let exaggerate = if it < params.exaggeration_iters { params.exaggeration } else { 1.0 };
        let momentum = if it < params.momentum_switch {
            params.initial_momentum
        } else {
            params.final_momentum
        };
        let (num, q) = student_q(&y);
        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = 4.0 * (exaggerate * p[i * n + j] - q[i * n + j]) * num[i * n + j];
                grad[0] += w * (y[i][0] - y[j][0]);
                grad[1] += w * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                velocity[i][k] = momentum * velocity[i][k] - params.learning_rate * grad[k];
            }
        }
        for (yi, vi) in y.iter_mut().zip(&velocity) {
            yi[0] += vi[0];
            yi[1] += vi[1];
        }
        let mean = [
            y.iter().map(|v| v[0]).sum::<f64>() / n as f64,
            y.iter().map(|v| v[1]).sum::<f64>() / n as f64,
        ];
        y.iter_mut().for_each(|v| {
            v[0] -= mean[0];
            v[1] -= mean[1];
        });
        let logged = it + 1 == params.iterations || (params.log_every > 0 && (it + 1) % params.log_every == 0);
        if logged {
            let k = kl(&p, &student_q(&y).1);
            if !k.is_finite() || y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
                return Err(AnalysisError::Shape(format!("t-SNE diverged at iteration {}", it + 1)));
            }
            kl_trace.push((it + 1, k));
        }
    }
    let final_kl = kl_trace.last().map_or(initial_kl, |&(_, k)| k);
    Ok(Embedding2D {
        points: y,
        initial_kl,
        final_kl,
        kl_trace,
        saturated_rows,
    })
}
