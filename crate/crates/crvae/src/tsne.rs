use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const TSNE_MAX_POINTS: usize = 5000;
const P_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iters: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// None selects max(n/12, 50).
    pub learning_rate: Option<f64>,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iters: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TsneResult {
    pub coords: Array2<f64>,
    pub initial_kl: f64,
    pub final_kl: f64,
}

fn squared_distances(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for k in 0..x.ncols() {
                let diff = x[[i, k]] - x[[j, k]];
                acc += diff * diff;
            }
            d[[i, j]] = acc;
            d[[j, i]] = acc;
        }
    }
    d
}

/// Conditional distribution over j for row i at precision beta, and its
/// Shannon entropy in nats.
fn row_entropy(dist_row: &[f64], i: usize, beta: f64, p_out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    let mut dot = 0.0;
    for (j, &d) in dist_row.iter().enumerate() {
        if j == i {
            p_out[j] = 0.0;
            continue;
        }
        let p = (-beta * d).exp();
        p_out[j] = p;
        sum += p;
        dot += p * d;
    }
    let sum = sum.max(1e-300);
    for p in p_out.iter_mut() {
        *p /= sum;
    }
    sum.ln() + beta * dot / sum
}

/// Symmetrized affinity matrix with per-row precisions tuned by bisection to
/// the requested perplexity.
fn joint_probabilities(x: &Array2<f64>, perplexity: f64) -> Array2<f64> {
    let n = x.nrows();
    let dist = squared_distances(x);
    let target = perplexity.ln();
    let mut p = Array2::<f64>::zeros((n, n));
    let mut row = vec![0.0; n];
    for i in 0..n {
        let drow: Vec<f64> = dist.row(i).to_vec();
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..50 {
            let h = row_entropy(&drow, i, beta, &mut row);
            let diff = h - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_finite() { (beta + beta_max) / 2.0 } else { beta * 2.0 };
            } else {
                beta_max = beta;
                beta = if beta_min.is_finite() { (beta + beta_min) / 2.0 } else { beta / 2.0 };
            }
        }
        for j in 0..n {
            p[[i, j]] = row[j];
        }
    }
    let mut sym = &p + &p.t();
    let total = sym.sum();
    sym.mapv_inplace(|v| v / total);
    sym
}

fn kl_divergence(p: &Array2<f64>, q: &Array2<f64>) -> f64 {
    let mut kl = 0.0;
    for (pv, qv) in p.iter().zip(q.iter()) {
        if *pv > 0.0 {
            kl += pv * (pv.max(P_FLOOR) / qv.max(P_FLOOR)).ln();
        }
    }
    kl
}

/// Student-t kernel values (unnormalized) and the normalized Q matrix.
fn low_dim_affinities(y: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = y.nrows();
    let mut num = Array2::<f64>::zeros((n, n));
    let mut z = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[[i, 0]] - y[[j, 0]];
            let dy = y[[i, 1]] - y[[j, 1]];
            let k = 1.0 / (1.0 + dx * dx + dy * dy);
            num[[i, j]] = k;
            num[[j, i]] = k;
            z += 2.0 * k;
        }
    }
    let q = num.mapv(|v| (v / z.max(1e-300)).max(P_FLOOR));
    (num, q)
}

/// Exact (Barnes-Hut-free) t-SNE to two dimensions with early exaggeration,
/// momentum, and per-coordinate gains. Returns the embedding together with
/// the KL divergence at initialization and after the last step.
pub fn tsne_2d(x: &Array2<f64>, cfg: &TsneConfig, rng: &mut ChaCha8Rng) -> Result<TsneResult> {
    let n = x.nrows();
    if n > TSNE_MAX_POINTS {
        return Err(Error::Invalid(format!(
            "t-SNE input has {n} points; the exact solver is quadratic, subsample to at most \
             {TSNE_MAX_POINTS}"
        )));
    }
    if n < 4 {
        return Err(Error::Invalid(format!("t-SNE needs at least 4 points, got {n}")));
    }
    if !(cfg.perplexity >= 1.0) || 3.0 * cfg.perplexity >= n as f64 {
        return Err(Error::Invalid(format!(
            "perplexity {} invalid for {n} points (need 1 <= perplexity < n/3)",
            cfg.perplexity
        )));
    }

    let p_plain = joint_probabilities(x, cfg.perplexity);
    let eta = cfg.learning_rate.unwrap_or((n as f64 / 12.0).max(50.0));

    let init = Normal::new(0.0, 1e-2).unwrap();
    let mut y = Array2::<f64>::zeros((n, 2));
    y.mapv_inplace(|_| init.sample(rng));
    let mut vel = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut grad = Array2::<f64>::zeros((n, 2));

    let (_, q0) = low_dim_affinities(&y);
    let initial_kl = kl_divergence(&p_plain, &q0);

    for iter in 0..cfg.iters {
        let exaggerate = iter < cfg.exaggeration_iters;
        let (num, q) = low_dim_affinities(&y);
        grad.fill(0.0);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij =
                    if exaggerate { cfg.exaggeration * p_plain[[i, j]] } else { p_plain[[i, j]] };
                let coef = 4.0 * (pij - q[[i, j]]) * num[[i, j]];
                grad[[i, 0]] += coef * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coef * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        let momentum = if iter < cfg.exaggeration_iters { 0.5 } else { 0.8 };
        for i in 0..n {
            for k in 0..2 {
                let g = grad[[i, k]];
                let v = vel[[i, k]];
                gains[[i, k]] = if (g > 0.0) != (v > 0.0) {
                    gains[[i, k]] + 0.2
                } else {
                    (gains[[i, k]] * 0.8).max(0.01)
                };
                vel[[i, k]] = momentum * v - eta * gains[[i, k]] * g;
                y[[i, k]] += vel[[i, k]];
            }
        }
        let mean0 = y.column(0).sum() / n as f64;
        let mean1 = y.column(1).sum() / n as f64;
        for i in 0..n {
            y[[i, 0]] -= mean0;
            y[[i, 1]] -= mean1;
        }
    }

    let (_, qf) = low_dim_affinities(&y);
    let final_kl = kl_divergence(&p_plain, &qf);
    Ok(TsneResult { coords: y, initial_kl, final_kl })
}
