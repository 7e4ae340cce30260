use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{EvalError, Result};
use crate::rng::{self, tag};

pub const MAX_POINTS: usize = 5000;
const ENTROPY_TOL: f64 = 1e-5;
const MAX_SEARCH_STEPS: usize = 200;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    /// Iterations run with exaggerated affinities.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    /// First iteration that uses `final_momentum`.
    pub momentum_switch: usize,
    /// `None` picks `max(n / exaggeration, 10)`.
    pub learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            learning_rate: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
    /// `kl_trace[t]` is KL(P‖Q) after `t` updates, against the
    /// unexaggerated P, so it has `iterations + 1` entries.
    pub kl_trace: Vec<f64>,
    pub perplexity: f64,
    pub seed: u64,
}

impl Embedding2D {
    /// `id\tx\ty\tlabel`.
    pub fn to_tsv(&self, ids: &[String], labels: &[String]) -> Result<String> {
        if ids.len() != self.coords.len() || labels.len() != self.coords.len() {
            return Err(EvalError::Length(format!(
                "{} points, {} ids, {} labels",
                self.coords.len(),
                ids.len(),
                labels.len()
            )));
        }
        let mut out = String::from("id\tx\ty\tlabel\n");
        for ((id, [x, y]), label) in ids.iter().zip(&self.coords).zip(labels) {
            let _ = writeln!(out, "{id}\t{x:.6}\t{y:.6}\t{label}");
        }
        Ok(out)
    }

    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_trace.get(iteration).copied()
    }
}

fn squared_distances(x: &[Vec<f32>]) -> Vec<f64> {
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| x[i].iter().zip(&x[j]).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum())
                .collect()
        })
        .collect();
    rows.concat()
}

/// Conditional distribution of row `i` whose entropy (nats) matches
/// `ln(perplexity)`.
pub(crate) fn calibrate_row(d: &[f64], i: usize, target: f64) -> Vec<f64> {
    let n = d.len();
    let d0 = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
    let eval = |beta: f64| -> (Vec<f64>, f64) {
        let mut p: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { (-beta * (d[j] - d0)).exp() }).collect();
        let z: f64 = p.iter().sum();
        let mut h = z.ln();
        for (j, pj) in p.iter_mut().enumerate() {
            *pj /= z;
            if j != i {
                h += beta * (d[j] - d0) * *pj;
            }
        }
        (p, h)
    };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let (mut p, mut h) = eval(beta);
    for _ in 0..MAX_SEARCH_STEPS {
        if (h - target).abs() < ENTROPY_TOL {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        (p, h) = eval(beta);
    }
    p
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if n > MAX_POINTS {
        return Err(EvalError::TooManyPoints { n, max: MAX_POINTS });
    }
    if !(perplexity >= 1.0 && perplexity.is_finite()) || (n as f64) < 3.0 * perplexity {
        return Err(EvalError::Perplexity { perplexity, n });
    }
    Ok(())
}

/// Symmetrized affinities `P_ij = (p_j|i + p_i|j) / 2n`, row-major.
pub fn joint_probabilities(x: &[Vec<f32>], perplexity: f64) -> Result<Vec<f64>> {
    let n = x.len();
    check_perplexity(n, perplexity)?;
    let d = squared_distances(x);
    let target = perplexity.ln();
    let cond: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| calibrate_row(&d[i * n..(i + 1) * n], i, target)).collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i][j] + cond[j][i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

/// Student-t numerators `1 / (1 + ‖y_i − y_j‖²)` (zero diagonal) and their sum.
fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let dx = y[i][0] - y[j][0];
                        let dy = y[i][1] - y[j][1];
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    let z = rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    (rows.concat(), z)
}

fn kl_divergence(p: &[f64], num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &nij)| pij * (pij / (nij / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

pub fn tsne_embed(x: &[Vec<f32>], cfg: &TsneConfig) -> Result<Embedding2D> {
    let n = x.len();
    let p = joint_probabilities(x, cfg.perplexity)?;
    let mut r = rng::stream(cfg.seed, &[tag::TSNE]);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            [1e-4 * a, 1e-4 * b]
        })
        .collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::with_capacity(cfg.iterations + 1);
    let eta = cfg.learning_rate.unwrap_or((n as f64 / cfg.exaggeration).max(10.0));

    for it in 0..=cfg.iterations {
        let (num, z) = student_t(&y);
        kl_trace.push(kl_divergence(&p, &num, z));
        if it == cfg.iterations {
            break;
        }
        let ex = if it < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let momentum = if it < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let nij = num[i * n + j];
                    let w = (ex * p[i * n + j] - nij / z) * nij;
                    g[0] += w * (y[i][0] - y[j][0]);
                    g[1] += w * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for c in 0..2 {
                let gain = &mut gains[i][c];
                *gain = if (grad[i][c] > 0.0) != (velocity[i][c] > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
                *gain = gain.max(MIN_GAIN);
                velocity[i][c] = momentum * velocity[i][c] - eta * *gain * grad[i][c];
                y[i][c] += velocity[i][c];
            }
        }
        for c in 0..2 {
            let mean = y.iter().map(|v| v[c]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|v| v[c] -= mean);
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EvalError::Diverged(it + 1));
        }
    }
    Ok(Embedding2D { coords: y, kl_trace, perplexity: cfg.perplexity, seed: cfg.seed })
}

/// Mean fraction of each point's `k` nearest 2-D neighbors sharing its
/// label. Distance ties go to the lower index.
pub fn neighbor_purity(coords: &[[f64; 2]], labels: &[usize], k: usize) -> Result<f64> {
    let n = coords.len();
    if labels.len() != n {
        return Err(EvalError::Length(format!("{n} points, {} labels", labels.len())));
    }
    if k == 0 || n <= k {
        return Err(EvalError::TooFewPoints { n, k });
    }
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((coords[i][0] - coords[j][0]).powi(2) + (coords[i][1] - coords[j][1]).powi(2), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others[..k].iter().filter(|&&(_, j)| labels[j] == labels[i]).count() as f64 / k as f64
        })
        .collect();
    Ok(per_point.iter().sum::<f64>() / n as f64)
}
